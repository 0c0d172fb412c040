"""Deterministic 2D arena with two differential-drive robots.

World frame: x right, y up, angles counter-clockwise, meters and radians.
The arena is an axis-aligned rectangle; both robots are oriented boxes on
unicycle kinematics. The predator carries a 181-ray planar laser and a
forward camera whose 81-degree horizontal field renders onto the native
240x180 sensor grid, so the event pipeline consumes synthetic frames with
the exact geometry of the real chip.

Rendering is texture-hashed from a world seed: identical worlds render
identical images, which keeps closed-loop traces reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import LaserScan, make_scan_angles
from .events import EVENT_DTYPE, SENSOR_HEIGHT, SENSOR_WIDTH

ARENA_W = 9.5
ARENA_H = 6.7
BODY_L = 0.75            # footprint along the heading
BODY_W = 0.54
BODY_RADIUS = math.hypot(BODY_L, BODY_W) / 2.0
PREY_HALF_WIDTH = 0.375  # widest half-extent, sets apparent size

CAM_FOV_DEG = 81.0
CAM_COLS = SENSOR_WIDTH
CAM_ROWS = SENSOR_HEIGHT
DEG_PER_COL = CAM_FOV_DEG / CAM_COLS          # equidistant projection
ROWS_PER_DEG = 1.0 / DEG_PER_COL
CAM_HEIGHT = 0.3
WALL_HEIGHT = 1.0
PREY_BODY_HEIGHT = 0.37
MIN_WIDTH_PX = 2.0       # in target-grid pixels, below this the prey is N

DEFAULT_THR_LO = 4.5     # apparent-width thresholds separating S / M / XL
DEFAULT_THR_HI = 9.0

LASER_RAYS = 181
LASER_MAX_RANGE = 10.0


@dataclass
class RobotState:
    x: float
    y: float
    theta: float
    v: float = 0.0
    w: float = 0.0


@dataclass
class Arena:
    width: float = ARENA_W
    height: float = ARENA_H
    clutter: list = field(default_factory=list)  # extra ((x1,y1),(x2,y2)) segments

    def wall_segments(self) -> list:
        w, h = self.width, self.height
        return [((0.0, 0.0), (w, 0.0)), ((w, 0.0), (w, h)),
                ((w, h), (0.0, h)), ((0.0, h), (0.0, 0.0))] + list(self.clutter)


@dataclass
class World:
    arena: Arena = field(default_factory=Arena)
    predator: RobotState = field(default_factory=lambda: RobotState(2.0, 3.35, 0.0))
    prey: RobotState = field(default_factory=lambda: RobotState(7.0, 3.35, math.pi))
    t_us: int = 0
    texture_seed: int = 0
    thr_lo: float = DEFAULT_THR_LO
    thr_hi: float = DEFAULT_THR_HI


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _integrate(r: RobotState, dt: float) -> None:
    if abs(r.w) < 1e-9:
        r.x += r.v * math.cos(r.theta) * dt
        r.y += r.v * math.sin(r.theta) * dt
    else:
        rad = r.v / r.w
        r.x += rad * (math.sin(r.theta + r.w * dt) - math.sin(r.theta))
        r.y -= rad * (math.cos(r.theta + r.w * dt) - math.cos(r.theta))
    r.theta = wrap_angle(r.theta + r.w * dt)


def step_world(world: World, dt_us: int) -> dict:
    """Advance both robots and the clock. Returns wall-contact flags."""
    dt = dt_us / 1e6
    contacts = {}
    for name, robot in (("predator", world.predator), ("prey", world.prey)):
        _integrate(robot, dt)
        lo_x, hi_x = BODY_RADIUS, world.arena.width - BODY_RADIUS
        lo_y, hi_y = BODY_RADIUS, world.arena.height - BODY_RADIUS
        cx = min(max(robot.x, lo_x), hi_x)
        cy = min(max(robot.y, lo_y), hi_y)
        contacts[name] = (cx != robot.x) or (cy != robot.y)
        robot.x, robot.y = cx, cy
    world.t_us += int(dt_us)
    return contacts


# ------------------------------------------------------------ ray casting

def _segment_array(segments: list) -> np.ndarray:
    return np.asarray(segments, dtype=np.float64)  # (S, 2, 2)


def robot_segments(r: RobotState) -> list:
    c, s = math.cos(r.theta), math.sin(r.theta)
    hx, hy = BODY_L / 2.0, BODY_W / 2.0
    corners = []
    for dx, dy in ((hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)):
        corners.append((r.x + dx * c - dy * s, r.y + dx * s + dy * c))
    return [(corners[i], corners[(i + 1) % 4]) for i in range(4)]


def cast_rays(origin, directions: np.ndarray, segments: np.ndarray,
              max_range: float):
    """Distances to the nearest segment along each ray, plus the hit index.

    directions is (R, 2) unit vectors; segments is (S, 2, 2). Rays that hit
    nothing report max_range and index -1.
    """
    o = np.asarray(origin, dtype=np.float64)
    p = segments[:, 0]                      # (S, 2)
    e = segments[:, 1] - segments[:, 0]     # (S, 2)
    po = p - o                              # (S, 2)
    d = directions                          # (R, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    num_t = po[None, :, 0] * e[None, :, 1] - po[None, :, 1] * e[None, :, 0]
    num_s = po[None, :, 0] * d[:, None, 1] - po[None, :, 1] * d[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num_t / denom
        s = num_s / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(len(d)), idx]
    hit = np.isfinite(best)
    ranges = np.where(hit, np.minimum(best, max_range), max_range)
    return np.maximum(ranges, 1e-6), np.where(hit, idx, -1)


def simulate_laser(world: World, robot: RobotState | None = None) -> LaserScan:
    """181-ray scan over the frontal half plane, 10 m range."""
    robot = robot or world.predator
    other = world.prey if robot is world.predator else world.predator
    angles = make_scan_angles(LASER_RAYS)
    dirs = np.stack([np.cos(robot.theta + angles),
                     np.sin(robot.theta + angles)], axis=1)
    segments = _segment_array(world.arena.wall_segments() + robot_segments(other))
    ranges, _ = cast_rays((robot.x, robot.y), dirs, segments, LASER_MAX_RANGE)
    return LaserScan(ranges, angles, LASER_MAX_RANGE)


# ------------------------------------------------------- hashed textures

def _hash_u64(n: np.ndarray) -> np.ndarray:
    n = n.astype(np.uint64, copy=True)
    n ^= n >> np.uint64(30)
    n *= np.uint64(0xBF58476D1CE4E5B9)
    n ^= n >> np.uint64(27)
    n *= np.uint64(0x94D049BB133111EB)
    n ^= n >> np.uint64(31)
    return n


def _lattice(i: np.ndarray, j: np.ndarray, seed: int) -> np.ndarray:
    n = (i.astype(np.int64) * np.int64(73856093)
         ^ j.astype(np.int64) * np.int64(19349663)
         ^ np.int64(seed * 83492791)).astype(np.uint64)
    return _hash_u64(n).astype(np.float64) / float(2**64)


def _smooth(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise_1d(x: np.ndarray, seed: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    i = np.floor(x)
    f = _smooth(x - i)
    i = i.astype(np.int64)
    zeros = np.zeros_like(i)
    a = _lattice(i, zeros, seed)
    b = _lattice(i + 1, zeros, seed)
    return a + (b - a) * f


def value_noise_2d(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ix, iy = np.floor(x), np.floor(y)
    fx, fy = _smooth(x - ix), _smooth(y - iy)
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)
    v00 = _lattice(ix, iy, seed)
    v10 = _lattice(ix + 1, iy, seed)
    v01 = _lattice(ix, iy + 1, seed)
    v11 = _lattice(ix + 1, iy + 1, seed)
    return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy


# ----------------------------------------------------------------- camera

@dataclass
class GroundTruth:
    """Analytic prey label at render time."""

    visible: bool
    region: str            # L, C, R or N
    size: str | None       # S, M, XL or None when not visible
    class_index: int       # 0..9 in the network's class order
    bearing_deg: float     # counter-clockwise positive, 0 dead ahead
    distance: float        # center to center, meters
    width_px: float        # apparent width in target-grid pixels (36 wide)
    alpha_deg: float       # analog-angle equivalent of the bearing


_SIZE_BASE = {"L": 0, "C": 3, "R": 6}


def ground_truth(world: World, target_width: int = 36) -> GroundTruth:
    pred, prey = world.predator, world.prey
    dx, dy = prey.x - pred.x, prey.y - pred.y
    dist = math.hypot(dx, dy)
    bearing = math.degrees(wrap_angle(math.atan2(dy, dx) - pred.theta))
    width_deg = 2.0 * math.degrees(math.atan(PREY_HALF_WIDTH / max(dist, 1e-6)))
    width_px = target_width * width_deg / CAM_FOV_DEG
    alpha = 90.0 + bearing / (CAM_FOV_DEG / 180.0)
    visible = abs(bearing) <= CAM_FOV_DEG / 2.0 and width_px >= MIN_WIDTH_PX
    if not visible:
        return GroundTruth(False, "N", None, 9, bearing, dist, width_px, alpha)
    if bearing > CAM_FOV_DEG / 6.0:
        region = "L"
    elif bearing < -CAM_FOV_DEG / 6.0:
        region = "R"
    else:
        region = "C"
    if width_px < world.thr_lo:
        size = "S"
    elif width_px > world.thr_hi:
        size = "XL"
    else:
        size = "M"
    cls = _SIZE_BASE[region] + ("S", "M", "XL").index(size)
    return GroundTruth(True, region, size, cls, bearing, dist, width_px, alpha)


def _perimeter_coord(arena: Arena, wall_idx: np.ndarray, hits: np.ndarray) -> np.ndarray:
    """Arc length of each hit point along the wall loop."""
    w, h = arena.width, arena.height
    s = np.zeros(len(wall_idx))
    x, y = hits[:, 0], hits[:, 1]
    s = np.where(wall_idx == 0, x, s)
    s = np.where(wall_idx == 1, w + y, s)
    s = np.where(wall_idx == 2, w + h + (w - x), s)
    s = np.where(wall_idx == 3, 2 * w + h + (h - y), s)
    return s


def render_native(world: World) -> tuple[np.ndarray, GroundTruth]:
    """Render the predator camera to a [0, 1] grayscale 180x240 image.

    Columns map bearings equidistantly across the 81-degree field; rows
    split at the horizon into a textured wall band and a ground plane with
    world-anchored noise, so ego-motion produces realistic brightness flow.
    The prey is a dark textured box centered on its bearing.
    """
    pred = world.predator
    seed = world.texture_seed
    cols = np.arange(CAM_COLS)
    bear_deg = (CAM_COLS / 2.0 - (cols + 0.5)) * DEG_PER_COL
    bear = np.radians(bear_deg) + pred.theta
    dirs = np.stack([np.cos(bear), np.sin(bear)], axis=1)

    segments = _segment_array(world.arena.wall_segments())
    rho, wall_idx = cast_rays((pred.x, pred.y), dirs, segments, 100.0)
    hits = np.asarray([pred.x, pred.y]) + dirs * rho[:, None]
    s_coord = _perimeter_coord(world.arena, wall_idx, hits)

    horizon = CAM_ROWS / 2.0
    elev_top = np.degrees(np.arctan2(WALL_HEIGHT - CAM_HEIGHT, rho))
    elev_bot = np.degrees(np.arctan2(CAM_HEIGHT, rho))
    r_top = horizon - elev_top * ROWS_PER_DEG
    r_bot = horizon + elev_bot * ROWS_PER_DEG

    wall_val = 0.55 + 0.18 * (value_noise_1d(s_coord / 0.35, seed) - 0.5) * 2.0 \
        + 0.10 * np.sign(np.sin(2.0 * np.pi * s_coord / 0.6))
    above_val = 0.82 + 0.16 * (value_noise_1d(s_coord / 1.1, seed + 1) - 0.5)

    rows = np.arange(CAM_ROWS, dtype=np.float64)[:, None]
    img = np.where(rows < r_top[None, :], above_val[None, :], wall_val[None, :])

    # ground plane: each below-horizon row is a fixed declination, so its
    # world point is origin + g * ray with g from the camera height. Only
    # rows strictly below the horizon can show floor.
    row0 = int(math.floor(horizon)) + 1
    rows_f = rows[row0:]
    decl = (rows_f - horizon) / ROWS_PER_DEG
    g = CAM_HEIGHT / np.tan(np.radians(decl))
    gx = pred.x + g * dirs[:, 0][None, :]
    gy = pred.y + g * dirs[:, 1][None, :]
    floor_val = 0.45 + 0.18 * (value_noise_2d(gx / 0.45, gy / 0.45, seed + 2) - 0.5) * 2.0 \
        + 0.07 * np.sign(np.sin(2.0 * np.pi * (gx + gy) / 0.8))
    floor_mask = rows_f >= r_bot[None, :]
    img[row0:] = np.where(floor_mask, floor_val, img[row0:])

    gt = ground_truth(world)
    if abs(gt.bearing_deg) <= CAM_FOV_DEG / 2.0 + 10.0 and gt.distance > 1e-3:
        prey = world.prey
        col_p = CAM_COLS / 2.0 - gt.bearing_deg / DEG_PER_COL
        half_cols = math.degrees(math.atan(PREY_HALF_WIDTH / gt.distance)) / DEG_PER_COL
        c0 = int(max(0, math.floor(col_p - half_cols)))
        c1 = int(min(CAM_COLS, math.ceil(col_p + half_cols)))
        if c1 > c0:
            top = horizon - math.degrees(math.atan2(PREY_BODY_HEIGHT - CAM_HEIGHT,
                                                    gt.distance)) * ROWS_PER_DEG
            bot = horizon + math.degrees(math.atan2(CAM_HEIGHT, gt.distance)) * ROWS_PER_DEG
            r0 = int(max(0, math.floor(top)))
            r1 = int(min(CAM_ROWS, math.ceil(bot)))
            if r1 > r0:
                u = (np.arange(c0, c1) - col_p) / max(half_cols, 1e-6)
                view = prey.theta - math.radians(gt.bearing_deg)
                tex = 0.10 + 0.08 * value_noise_1d(u * 2.5 + view * 1.7, seed + 3)
                img[r0:r1, c0:c1] = tex[None, :]
    return np.clip(img, 0.0, 1.0), gt


# ------------------------------------------------------------ DVS sensing

@dataclass
class DvsModel:
    """Idealized event synthesis by log-intensity change quantization."""

    c_thr: float = 0.15
    log_eps: float = 0.01
    noise_rate_eps: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    ref_log: np.ndarray | None = None

    def reset(self) -> None:
        self.ref_log = None


def synthesize_dvs(model: DvsModel, image: np.ndarray, t0: int, t1: int) -> np.ndarray:
    """Events for the brightness change from the reference to `image`.

    Each pixel fires floor(|delta log| / c_thr) events of the change's sign,
    evenly spread over (t0, t1]; the reference then advances by the emitted
    quanta (never snapping fully to the new value). The first call only
    latches the reference. Shot noise is appended at noise_rate_eps.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    log_img = np.log(np.asarray(image, dtype=np.float64) + model.log_eps)
    if model.ref_log is None:
        model.ref_log = log_img
        signal = np.zeros(0, dtype=EVENT_DTYPE)
    else:
        delta = log_img - model.ref_log
        k = np.floor(np.abs(delta) / model.c_thr).astype(np.int64)
        pol = np.sign(delta)
        ys, xs = np.nonzero(k)
        kk = k[ys, xs]
        total = int(kk.sum())
        signal = np.zeros(total, dtype=EVENT_DTYPE)
        if total:
            rep_y = np.repeat(ys, kk)
            rep_x = np.repeat(xs, kk)
            rep_k = np.repeat(kk, kk)
            j = np.arange(total) - np.repeat(np.cumsum(kk) - kk, kk)
            dt = t1 - t0
            if dt > 0:
                ts = t0 + np.minimum(np.maximum(1, ((j + 1) * dt) // rep_k), dt)
            else:
                ts = np.full(total, t1, dtype=np.int64)
            signal["t"] = ts
            signal["x"] = rep_x
            signal["y"] = rep_y
            signal["p"] = np.repeat(pol[ys, xs], kk).astype(np.int8)
            model.ref_log[ys, xs] += kk * model.c_thr * pol[ys, xs]

    noise = np.zeros(0, dtype=EVENT_DTYPE)
    if model.noise_rate_eps > 0 and t1 > t0:
        n = int(model.rng.poisson(model.noise_rate_eps * (t1 - t0) / 1e6))
        if n:
            noise = np.zeros(n, dtype=EVENT_DTYPE)
            noise["t"] = model.rng.integers(t0 + 1, t1 + 1, n)
            noise["x"] = model.rng.integers(0, SENSOR_WIDTH, n)
            noise["y"] = model.rng.integers(0, SENSOR_HEIGHT, n)
            noise["p"] = model.rng.choice(np.array([1, -1], dtype=np.int8), n)

    if not len(noise):
        ev = signal
    elif not len(signal):
        ev = noise
    else:
        ev = np.concatenate([signal, noise])
    return ev[np.argsort(ev["t"], kind="stable")]
