"""Pursuit control: a four-state machine over a repulsive laser field.

States: wander (search), approach (drive at the prey), avoid (hard-zone
escape rotation), goal (prey within reach, hold still). Obstacles repel
with magnitude eta * (1/rho - 1/r_soft)^2 inside the soft zone; inside the
hard zone translation stops entirely and the robot rotates toward the least
repulsive direction. Between the zones forward speed scales linearly with
clearance.

Conventions: x forward, y left, angles counter-clockwise positive. A prey
decision L means prey on the left, so the commanded w is positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .steering import PositionVector, rescale_to_fov


@dataclass
class LaserScan:
    """Planar range scan. Angles are radians relative to the heading,
    ascending (right to left); ranges are meters in (0, max_range]."""

    ranges: np.ndarray
    angles: np.ndarray
    max_range: float = 10.0


def make_scan_angles(n_rays: int = 181, fov_rad: float = math.pi) -> np.ndarray:
    return np.linspace(-fov_rad / 2.0, fov_rad / 2.0, n_rays)


@dataclass
class ApfParams:
    r_hard: float = 0.7            # stop-and-rotate zone, meters
    r_soft: float = 1.5            # speed-scaling zone, meters
    eta: float = 0.05              # repulsion gain
    v_max: float = 1.5             # forward speed cap (platform limit 2.0)
    w_approach: float = math.pi / 3
    w_spin: float = math.pi / 2    # also the global |w| cap
    window_half_rad: float = math.radians(30.0)
    d_goal: float = 1.0            # capture range on the prey-bearing ray
    goal_timeout_s: float = 5.0
    reacquire_timeout_s: float = 3.0
    wander_v: float = 1.0
    wander_w_max: float = math.pi / 6
    wander_resample_s: float = 3.0
    p_full: float = 2.5            # position modulus that maps to full speed
    approach_floor: float = 0.6    # fraction of v_max kept when the prey is near

    def __post_init__(self):
        if not 0.0 < self.r_hard < self.r_soft:
            raise ValueError("need 0 < r_hard < r_soft")
        if self.v_max > 2.0:
            raise ValueError("v_max beyond the platform limit of 2 m/s")


@dataclass
class VelocityCommand:
    v: float
    w: float


MODES = ("wander", "approach", "avoid", "goal")


@dataclass
class FsmState:
    mode: str = "wander"
    last_seen_side: str | None = None   # "L" or "R"
    goal_timer: float = 0.0
    reacquire_timer: float = 0.0
    wander_w: float = 0.0
    wander_timer: float = 0.0           # time left before resampling
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


def repulsive_field(scan: LaserScan, params: ApfParams):
    """Per-ray repulsion magnitudes and the net force in the robot frame.

    Rays at or beyond r_soft contribute nothing; the force points away from
    the obstacles (straight back for a symmetric frontal wall).
    """
    rho = np.asarray(scan.ranges, dtype=np.float64)
    if np.any(rho <= 0):
        raise ValueError("ranges must be positive")
    mags = np.zeros_like(rho)
    close = rho < params.r_soft
    mags[close] = params.eta * (1.0 / rho[close] - 1.0 / params.r_soft) ** 2
    fx = -float(np.sum(mags * np.cos(scan.angles)))
    fy = -float(np.sum(mags * np.sin(scan.angles)))
    return mags, (fx, fy)


def least_repulsive_direction(angles: np.ndarray, mags: np.ndarray,
                              window_half_rad: float) -> float:
    """Bearing whose +/- window has the smallest mean repulsion.

    Ties prefer the smallest turn (|bearing|, then the bearing itself), so
    an empty field yields straight ahead.
    """
    angles = np.asarray(angles, dtype=np.float64)
    mags = np.asarray(mags, dtype=np.float64)
    if angles.size < 2:
        return float(angles[0]) if angles.size else 0.0
    res = float(angles[1] - angles[0])
    half = max(0, int(round(window_half_rad / res)))
    kernel = np.ones(2 * half + 1)
    wsum = np.convolve(mags, kernel, mode="same")
    wcnt = np.convolve(np.ones_like(mags), kernel, mode="same")
    wmean = wsum / wcnt
    order = np.lexsort((angles, np.abs(angles), wmean))
    return float(angles[order[0]])


def soft_scale(scan: LaserScan, params: ApfParams,
               exclude_idx: int | None = None) -> float:
    """Forward speed factor: 1 outside the soft zone, 0 inside the hard zone.

    exclude_idx masks the window around one ray, so a chase can ignore the
    target's own laser return while walls elsewhere still slow it down.
    """
    rho = np.asarray(scan.ranges, dtype=np.float64)
    if exclude_idx is not None:
        angles = np.asarray(scan.angles)
        keep = np.abs(angles - angles[exclude_idx]) > params.window_half_rad
        rho = rho[keep]
        if not len(rho):
            return 1.0
    rho_min = float(np.min(rho))
    x = (rho_min - params.r_hard) / (params.r_soft - params.r_hard)
    return min(1.0, max(0.0, x))


def _clamp(v: float, w: float, params: ApfParams) -> VelocityCommand:
    v = min(max(v, 0.0), params.v_max)
    w = min(max(w, -params.w_spin), params.w_spin)
    return VelocityCommand(v, w)


def _prey_ray(scan: LaserScan, position: PositionVector | None) -> int:
    """Index of the ray closest to the estimated prey bearing (forward when
    the estimate is unusable)."""
    bearing = 0.0
    if position is not None and math.isfinite(position.alpha_deg) \
            and 0.0 <= position.alpha_deg <= 180.0:
        bearing = -math.radians(rescale_to_fov(position.alpha_deg))
    return int(np.argmin(np.abs(scan.angles - bearing)))


def fsm_step(state: FsmState, region: str | None, position: PositionVector | None,
             scan: LaserScan, dt: float, params: ApfParams) -> VelocityCommand:
    """Advance the state machine one control tick and command velocities.

    region is the constraint-filtered decision ("L", "C", "R", "N" or None
    before the first inference); position carries the filtered, quantized
    analog estimate used for speed scaling and the capture ray.
    """
    rho_min = float(np.min(scan.ranges))

    # hard zone preempts everything: stop and rotate out
    if rho_min < params.r_hard:
        state.mode = "avoid"
        mags, _ = repulsive_field(scan, params)
        b = least_repulsive_direction(scan.angles, mags, params.window_half_rad)
        w = 0.0 if b == 0.0 else math.copysign(params.w_spin, b)
        return _clamp(0.0, w, params)
    if state.mode == "avoid":
        state.mode = "wander"

    scale = soft_scale(scan, params)

    if state.mode == "goal":
        state.goal_timer += dt
        if state.goal_timer < params.goal_timeout_s:
            return VelocityCommand(0.0, 0.0)
        state.mode = "wander"
        state.goal_timer = 0.0

    if region in ("L", "R"):
        state.last_seen_side = region

    if region in ("L", "C", "R"):
        state.reacquire_timer = 0.0
        state.mode = "approach"
        prey_idx = _prey_ray(scan, position)
        if region == "C" and float(scan.ranges[prey_idx]) < params.d_goal:
            state.mode = "goal"
            state.goal_timer = 0.0
            return VelocityCommand(0.0, 0.0)
        w = {"L": params.w_approach, "C": 0.0, "R": -params.w_approach}[region]
        p = params.p_full
        if position is not None and math.isfinite(position.p_mag):
            p = position.p_mag
        # distance-proportional throttle, floored so a fleeing prey cannot
        # hold the chase in a stalemate; the target's own return is not an
        # obstacle, so the soft zone is evaluated without its sector
        ratio = min(1.0, max(params.approach_floor, p / params.p_full))
        chase_scale = soft_scale(scan, params, exclude_idx=prey_idx)
        return _clamp(params.v_max * chase_scale * ratio, w, params)

    # prey not visible
    if state.mode == "approach" and state.last_seen_side is not None:
        state.reacquire_timer += dt
        if state.reacquire_timer < params.reacquire_timeout_s:
            w = params.w_spin if state.last_seen_side == "L" else -params.w_spin
            return _clamp(0.0, w, params)
        state.last_seen_side = None
        state.reacquire_timer = 0.0

    state.mode = "wander"
    state.wander_timer -= dt
    if state.wander_timer <= 0.0:
        state.wander_w = float(state.rng.uniform(-params.wander_w_max,
                                                 params.wander_w_max))
        state.wander_timer = params.wander_resample_s
    return _clamp(params.wander_v * scale, state.wander_w, params)
