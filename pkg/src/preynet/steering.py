"""Class scores to an analog prey position and filtered drive decisions.

The ten classes tile the camera's view: three horizontal regions (L, C, R)
crossed with three apparent sizes (S, M, XL), plus N for "no prey visible".
Index order is L:S, L:M, L:XL, C:S, C:M, C:XL, R:S, R:M, R:XL, N.

Softmax scores are folded into a 2D position vector: the horizontal
component weighs right against left region mass, the forward component
weighs center mass against absence mass, and the angle alpha = atan2 of the
two lands at 90 degrees for a centered prey, 0 for hard right, 180 for hard
left, 270 for "behind" (pure N). The modulus combines the size means so a
small (far) prey reads as a longer vector than a close XL one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CLASS_NAMES = ("L:S", "L:M", "L:XL", "C:S", "C:M", "C:XL",
               "R:S", "R:M", "R:XL", "N")
REGIONS = ("L", "C", "R", "N")
SIZES = ("S", "M", "XL")

L_IDX = (0, 1, 2)
C_IDX = (3, 4, 5)
R_IDX = (6, 7, 8)
N_IDX = 9
S_IDX = (0, 3, 6)
M_IDX = (1, 4, 7)
XL_IDX = (2, 5, 8)

# jump pairs the prey cannot make between consecutive frames
FORBIDDEN_REGION = {("L", "R"), ("R", "L"), ("C", "N"), ("N", "C")}
FORBIDDEN_SIZE = {("S", "XL"), ("XL", "S")}


@dataclass
class SteeringParams:
    absence_divisor: float = 3.0     # scales the N score against center mass
    kappa: float = 1.0 / 15.0        # size score per meter of distance
    tau_s: float = 0.1               # low-pass time constant
    alpha_step_deg: float = 20.0     # command quantization bins
    p_step_m: float = 1.0
    fov_deg: float = 81.0


@dataclass
class PositionVector:
    alpha_deg: float   # [0, 360), nan when both components vanish
    p_mag: float       # meters, nan unless valid
    valid: bool        # prey considered visible (N is not the argmax)


def validate_outputs(outputs) -> np.ndarray:
    o = np.asarray(outputs, dtype=np.float64)
    if o.shape != (10,):
        raise ValueError("class outputs must have shape (10,)")
    if np.any(o < -1e-9) or np.any(o > 1 + 1e-9) or abs(o.sum() - 1.0) > 1e-6:
        raise ValueError("class outputs must lie in [0, 1] and sum to 1")
    return o


def analog_position(outputs, params: SteeringParams | None = None) -> PositionVector:
    """Project class scores onto the continuous position vector."""
    params = params or SteeringParams()
    o = validate_outputs(outputs)
    dx = o[list(R_IDX)].mean() - o[list(L_IDX)].mean()
    dy = o[list(C_IDX)].mean() - o[N_IDX] / params.absence_divisor
    if dx == 0.0 and dy == 0.0:
        return PositionVector(math.nan, math.nan, False)
    alpha = math.degrees(math.atan2(dy, dx)) % 360.0
    valid = int(np.argmax(o)) != N_IDX
    if valid:
        s_s = o[list(S_IDX)].mean()
        s_m = o[list(M_IDX)].mean()
        s_xl = o[list(XL_IDX)].mean()
        p_mag = ((s_s + s_m) / 2.0 + s_xl / 3.0) / params.kappa
    else:
        p_mag = math.nan
    return PositionVector(alpha, p_mag, valid)


def piecewise_alpha(dx: float, dy: float) -> float:
    """Sign-split form of the angle: equivalent to atan2 whenever dy != 0."""
    if dy == 0.0:
        raise ValueError("piecewise form undefined for dy == 0")
    base = -math.degrees(math.atan(dx / dy))
    return (base + (90.0 if dy > 0 else 270.0)) % 360.0


def rescale_to_fov(alpha_deg: float, fov_deg: float = 81.0) -> float:
    """Map a frontal alpha in [0, 180] to a bearing across the camera FOV.

    90 (dead ahead) maps to 0; 0 and 180 map to +/- half the FOV, positive
    toward the right edge of the image.
    """
    if not 0.0 <= alpha_deg <= 180.0:
        raise ValueError("alpha outside the frontal half [0, 180]")
    return (90.0 - alpha_deg) * (fov_deg / 180.0)


def digitize(outputs) -> tuple[str, str | None]:
    """Hard (region, size) decision; size is None when the region is N.

    Ties resolve to the earlier entry of (L, C, R, N) and (S, M, XL).
    """
    o = validate_outputs(outputs)
    region_mass = [o[list(L_IDX)].sum(), o[list(C_IDX)].sum(),
                   o[list(R_IDX)].sum(), o[N_IDX]]
    region = REGIONS[int(np.argmax(region_mass))]
    if region == "N":
        return "N", None
    size_mass = [o[list(S_IDX)].sum(), o[list(M_IDX)].sum(), o[list(XL_IDX)].sum()]
    return region, SIZES[int(np.argmax(size_mass))]


@dataclass
class DecisionState:
    """Accepted decision plus filter and quantizer memory."""

    region: str | None = None
    size: str | None = None
    alpha_f: float | None = None
    p_f: float | None = None
    alpha_bin: int | None = None
    p_bin: int | None = None
    cmd_alpha: float | None = None   # last emitted quantized values
    cmd_p: float | None = None
    valid: bool = False


def constraint_filter(state: DecisionState, region: str,
                      size: str | None) -> tuple[str, str | None]:
    """Reject physically impossible jumps, holding the previous value.

    Region and size are filtered independently; a None size (region N)
    leaves the stored size untouched.
    """
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    if state.region is None or (state.region, region) not in FORBIDDEN_REGION:
        state.region = region
    if size is not None:
        if size not in SIZES:
            raise ValueError(f"unknown size {size!r}")
        if state.size is None or (state.size, size) not in FORBIDDEN_SIZE:
            state.size = size
    return state.region, state.size


def lowpass_update(prev: float, new: float, dt: float, tau: float) -> float:
    """First-order low-pass step: prev + dt/(tau+dt) * (new - prev)."""
    if dt < 0 or tau < 0:
        raise ValueError("dt and tau must be non-negative")
    if dt == 0 and tau == 0:
        return new
    return prev + (dt / (tau + dt)) * (new - prev)


def lowpass_circular(prev: float, new: float, dt: float, tau: float) -> float:
    """Low-pass on a 360-degree circle, moving along the shorter arc."""
    diff = (new - prev + 180.0) % 360.0 - 180.0
    return lowpass_update(prev, prev + diff, dt, tau) % 360.0


def quantize_command(state: DecisionState, alpha_deg: float, p_mag: float,
                     params: SteeringParams | None = None):
    """Emit (alpha_q, p_q) when either quantization bin changes, else None.

    Bins are anchored at zero; emitted values are the bin lower edges. The
    first call always emits.
    """
    params = params or SteeringParams()
    a_bin = int(math.floor((alpha_deg % 360.0) / params.alpha_step_deg))
    p_bin = int(math.floor(p_mag / params.p_step_m))
    if a_bin == state.alpha_bin and p_bin == state.p_bin:
        return None
    state.alpha_bin = a_bin
    state.p_bin = p_bin
    state.cmd_alpha = a_bin * params.alpha_step_deg
    state.cmd_p = p_bin * params.p_step_m
    return state.cmd_alpha, state.cmd_p


@dataclass
class SteeringResult:
    region: str
    size: str | None
    position: PositionVector   # raw regression for this frame
    alpha_f: float | None      # filtered values fed to the quantizer
    p_f: float | None
    command: tuple | None      # quantized emission, None if unchanged


class SteeringStack:
    """Per-frame pipeline: digitize, constrain, regress, filter, quantize."""

    def __init__(self, params: SteeringParams | None = None):
        self.params = params or SteeringParams()
        self.state = DecisionState()

    def update(self, outputs, dt: float) -> SteeringResult:
        region, size = constraint_filter(self.state, *digitize(outputs))
        pos = analog_position(outputs, self.params)
        st = self.state
        command = None
        if not math.isnan(pos.alpha_deg):
            st.alpha_f = pos.alpha_deg if st.alpha_f is None else \
                lowpass_circular(st.alpha_f, pos.alpha_deg, dt, self.params.tau_s)
        if pos.valid:
            st.p_f = pos.p_mag if st.p_f is None else \
                lowpass_update(st.p_f, pos.p_mag, dt, self.params.tau_s)
        st.valid = pos.valid
        if st.alpha_f is not None and st.p_f is not None:
            command = quantize_command(st, st.alpha_f, st.p_f, self.params)
        return SteeringResult(region, size, pos, st.alpha_f, st.p_f, command)


def calibrate_kappa(size_scores, distances) -> float:
    """Least-squares kappa so score / kappa tracks true distance.

    size_scores are the raw combined size means ((s_S + s_M)/2 + s_XL/3)
    collected alongside ground-truth distances over a calibration episode.
    """
    q = np.asarray(size_scores, dtype=np.float64)
    d = np.asarray(distances, dtype=np.float64)
    if q.shape != d.shape or q.size == 0:
        raise ValueError("need matching, non-empty score and distance arrays")
    denom = float(np.dot(q, d))
    if denom <= 0:
        raise ValueError("degenerate calibration data")
    return float(np.dot(q, q)) / denom


def bearing_error_deg(outputs, bearing_deg: float) -> float:
    """Absolute analog-angle error expressed in bearing degrees.

    Compares the decoded angle against the angle a prey at bearing_deg
    would produce, wrapping on the circle, and converts back to the
    bearing scale (1 degree of bearing spans 1/0.45 degrees of angle).
    """
    pos = analog_position(outputs)
    alpha_gt = 90.0 + bearing_deg / 0.45
    diff = abs(pos.alpha_deg - alpha_gt) % 360.0
    return min(diff, 360.0 - diff) * 0.45


def fit_temperature(outputs, bearings_deg, grid=None) -> float:
    """Softmax temperature minimizing the mean analog bearing error.

    A classifier trained on sharp synthetic frames converges toward
    one-hot outputs, and the angle decode then snaps to the region
    representatives instead of interpolating. Dividing the logits by a
    temperature T > 1 restores graded probabilities without moving any
    argmax, so classification is unchanged while the analog angle gains
    resolution. Raising probabilities to the power 1/T and renormalizing
    is identical to dividing the logits by T, so calibration needs only
    the published probabilities of visible validation frames plus their
    ground-truth bearings. Returns the best grid entry (default grid:
    33 log-spaced values over [1, 40]).
    """
    o = np.asarray(outputs, dtype=np.float64)
    b = np.asarray(bearings_deg, dtype=np.float64)
    if o.ndim != 2 or o.shape[1] != 10 or len(o) != len(b) or len(b) == 0:
        raise ValueError("need matching (N, 10) outputs and N bearings")
    if grid is None:
        grid = np.geomspace(1.0, 40.0, 33)
    best_t, best_err = 1.0, math.inf
    for t in grid:
        scaled = np.maximum(o, 1e-300) ** (1.0 / t)
        scaled /= scaled.sum(axis=1, keepdims=True)
        err = 0.0
        for row, bearing in zip(scaled, b):
            err += bearing_error_deg(row, bearing)
        err /= len(b)
        if err < best_err:
            best_t, best_err = float(t), err
    return best_t
