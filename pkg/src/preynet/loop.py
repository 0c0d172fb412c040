"""Closed-loop episode runner tying sensing, detection and control together.

One Episode owns a simulated world plus the full perception stack: camera
renders feed the event synthesizer, events run through the background
filter into the fixed-count accumulator, each emitted histogram triggers
one detection (rate limited, applied after a latency), the steering stack
turns detections into filtered commands, and the state machine closes the
loop at the control rate. Everything is seeded, so a whole episode is a
pure function of its config.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .control import ApfParams, FsmState, fsm_step
from .events import (
    EVENT_DTYPE,
    SENSOR_HEIGHT,
    SENSOR_WIDTH,
    FilterState,
    HistAccumulator,
    accumulate_events,
    filter_mask,
    normalize_histogram,
    subsample_aps,
)
from .net import Network, forward
from .sim import DvsModel, World, RobotState, ground_truth, render_native, \
    simulate_laser, step_world, synthesize_dvs, wrap_angle
from .steering import PositionVector, SteeringStack


@dataclass
class EpisodeConfig:
    seed: int = 1
    duration_s: float = 60.0
    dt_us: int = 1000
    width: int = 36
    detector: object = "oracle"        # "oracle", a Network, or a callable
    oracle_noise_sigma: float = 0.05
    n_target: int = 5000
    clip: int = 16
    min_infer_interval_us: int = 2000  # back-to-back frames are dropped
    infer_latency_us: int = 2000
    aps_period_us: int = 66_667
    aps_auto_off: bool = False
    aps_off_threshold_eps: float = 1000.0
    filter_enabled: bool = True
    filter_dt_max_us: int = 10_000
    filter_radius: int = 1
    render_period_us: int = 10_000
    control_period_us: int = 50_000
    noise_rate_eps: float = 0.0        # steady sensor shot noise
    burst_rate_eps: float = 0.0        # transient flood, e.g. lighting flicker
    burst_start_us: int = 0
    burst_duration_us: int = 0
    prey_policy: str = "evade"         # evade, circle, static or external
    prey_speed: float = 0.55
    stop_on_capture: bool = False
    control_enabled: bool = True       # False parks the predator
    trace_every_us: int = 10_000


def oracle_outputs(gt, rng: np.random.Generator | None = None,
                   sigma: float = 0.0) -> np.ndarray:
    """Class probabilities whose analog decoding reproduces the geometry.

    Region masses point the regression angle at the true bearing and the
    size split encodes the clamped distance, so a perfect detector closes
    the loop without a trained network. Gaussian sigma roughens it into a
    realistic one.
    """
    out = np.zeros(10)
    if not gt.visible:
        out[9] = 1.0
    else:
        a = math.radians(gt.alpha_deg)
        m = np.array([max(0.0, -math.cos(a)), max(0.0, math.sin(a)),
                      max(0.0, math.cos(a))])          # L, C, R masses
        m /= m.sum()
        q = min(0.5, max(1.0 / 3.0, gt.distance / 5.0))
        f_xl = 6.0 * (0.5 - q)
        f = np.array([(1.0 - f_xl) / 2.0, (1.0 - f_xl) / 2.0, f_xl])
        out[:9] = (m[:, None] * f[None, :]).reshape(9)
    if rng is not None and sigma > 0.0:
        out = np.clip(out + rng.normal(0.0, sigma, 10), 1e-9, None)
        out /= out.sum()
    return out


def _wrap180(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


@dataclass
class Inference:
    """One detection in flight between the sensor and the steering stack."""

    apply_t_us: int
    outputs: np.ndarray
    gt_alpha_deg: float
    gt_visible: bool


class Episode:
    """Stateful closed-loop simulation advanced tick by tick."""

    def __init__(self, config: EpisodeConfig | None = None):
        cfg = config or EpisodeConfig()
        if cfg.prey_policy not in ("evade", "circle", "static", "external"):
            raise ValueError(f"unknown prey policy {cfg.prey_policy!r}")
        self.cfg = cfg
        ss = np.random.SeedSequence(cfg.seed)
        r_init, r_dvs, r_burst, r_fsm, r_oracle, r_prey = \
            [np.random.default_rng(s) for s in ss.spawn(6)]
        self.world = self._spawn_world(r_init, cfg.seed)
        self.dvs = DvsModel(noise_rate_eps=cfg.noise_rate_eps, rng=r_dvs)
        self.filter = FilterState(cfg.filter_dt_max_us, cfg.filter_radius) \
            if cfg.filter_enabled else None
        self.acc = HistAccumulator(cfg.width, cfg.n_target, cfg.clip)
        self.stack = SteeringStack()
        self.apf = ApfParams()
        self.fsm = FsmState(rng=r_fsm)
        self._burst_rng = r_burst
        self._oracle_rng = r_oracle
        self._prey_rng = r_prey
        self._detect = self._make_detector(cfg.detector)

        self._last_render_t = 0
        self._next_render_t = cfg.render_period_us
        self._next_aps_t = cfg.aps_period_us
        self._next_control_t = cfg.control_period_us
        self._next_trace_t = 0
        self._pending: list[Inference] = []
        self._last_infer_t = -10**12
        self._last_apply_t: int | None = None
        self._dvs_window: deque = deque()   # (t_us, kept_event_count)
        self._dvs_window_sum = 0
        self._aps_times: deque = deque()
        self.last_outputs = np.full(10, 0.1)
        self.last_gt = ground_truth(self.world)
        self.last_aps = None
        self._last_img = None

        self.done = False
        self.captures = 0
        self.first_capture_s: float | None = None
        self.wall_contacts = 0
        self.dvs_frames = 0
        self.dropped_frames = 0
        self.inferences = 0
        self.aps_frames = 0
        self.aps_suppressed = 0
        self.min_infer_gap_us: int | None = None
        self._err_sum = 0.0
        self._err_n = 0
        self.trace_rows: list[str] = []
        self._prey_drift = 0.0
        self._prey_drift_left = 0.0

        # latch the sensor reference on the initial scene
        img, self.last_gt = render_native(self.world)
        synthesize_dvs(self.dvs, img, 0, 0)

    @staticmethod
    def _spawn_world(rng: np.random.Generator, seed: int) -> World:
        w = World(texture_seed=seed)
        for _ in range(100):
            px, py = rng.uniform(1.2, 8.3), rng.uniform(1.2, 5.5)
            qx, qy = rng.uniform(1.2, 8.3), rng.uniform(1.2, 5.5)
            if math.hypot(qx - px, qy - py) >= 2.5:
                break
        th = rng.uniform(-math.pi, math.pi)
        w.predator = RobotState(px, py, th)
        w.prey = RobotState(qx, qy, rng.uniform(-math.pi, math.pi))
        return w

    def _make_detector(self, spec):
        if spec == "oracle":
            sigma = self.cfg.oracle_noise_sigma

            def run(frame, gt):
                return oracle_outputs(gt, self._oracle_rng, sigma)

            return run
        if isinstance(spec, Network):
            return lambda frame, gt: forward(spec, frame)
        if callable(spec):
            return spec
        raise ValueError(f"unknown detector {spec!r}")

    # ------------------------------------------------------------ sensing

    def _burst_events(self, t0: int, t1: int) -> np.ndarray | None:
        cfg = self.cfg
        if cfg.burst_rate_eps <= 0.0:
            return None
        b0 = max(t0, cfg.burst_start_us)
        b1 = min(t1, cfg.burst_start_us + cfg.burst_duration_us)
        if b1 <= b0:
            return None
        n = int(self._burst_rng.poisson(cfg.burst_rate_eps * (b1 - b0) / 1e6))
        if not n:
            return None
        ev = np.zeros(n, dtype=EVENT_DTYPE)
        ev["t"] = np.sort(self._burst_rng.integers(b0 + 1, b1 + 1, n))
        ev["x"] = self._burst_rng.integers(0, SENSOR_WIDTH, n)
        ev["y"] = self._burst_rng.integers(0, SENSOR_HEIGHT, n)
        ev["p"] = self._burst_rng.choice(np.array([1, -1], dtype=np.int8), n)
        return ev

    def _sense(self, t: int) -> None:
        cfg = self.cfg
        img, gt = render_native(self.world)
        self._last_img = img
        self.last_gt = gt
        ev = synthesize_dvs(self.dvs, img, self._last_render_t, t)
        burst = self._burst_events(self._last_render_t, t)
        if burst is not None:
            ev = np.concatenate([ev, burst])
            ev = ev[np.argsort(ev["t"], kind="stable")]
        if self.filter is not None and len(ev):
            ev = ev[filter_mask(self.filter, ev)]
        self._dvs_window.append((t, len(ev)))
        self._dvs_window_sum += len(ev)
        while self._dvs_window and self._dvs_window[0][0] < t - 1_000_000:
            self._dvs_window_sum -= self._dvs_window.popleft()[1]
        for grid, t_emit in accumulate_events(self.acc, ev):
            self.dvs_frames += 1
            gap = t_emit - self._last_infer_t
            if gap < cfg.min_infer_interval_us:
                self.dropped_frames += 1
                continue
            if self.inferences:
                self.min_infer_gap_us = gap if self.min_infer_gap_us is None \
                    else min(self.min_infer_gap_us, gap)
            self._last_infer_t = t_emit
            frame = normalize_histogram(grid, t_emit)
            outputs = self._detect(frame, gt)
            self.inferences += 1
            self._pending.append(Inference(t_emit + cfg.infer_latency_us,
                                           outputs, gt.alpha_deg, gt.visible))
        self._last_render_t = t

    def dvs_rate_eps(self) -> float:
        return float(self._dvs_window_sum)  # events in the trailing second

    def aps_rate_fps(self) -> float:
        return float(len(self._aps_times))

    def _aps(self, t: int) -> None:
        if self.cfg.aps_auto_off and \
                self.dvs_rate_eps() < self.cfg.aps_off_threshold_eps:
            self.aps_suppressed += 1
            return
        # the freshest camera frame is at most one render period old
        img = self._last_img
        if img is None:
            img, _ = render_native(self.world)
        self.last_aps = subsample_aps(img, self.cfg.width, t)
        self.aps_frames += 1
        self._aps_times.append(t)
        while self._aps_times and self._aps_times[0] < t - 1_000_000:
            self._aps_times.popleft()

    def _apply_pending(self, t: int) -> None:
        due = [p for p in self._pending if p.apply_t_us <= t]
        if not due:
            return
        self._pending = [p for p in self._pending if p.apply_t_us > t]
        for inf in due:
            dt = 0.0 if self._last_apply_t is None \
                else (inf.apply_t_us - self._last_apply_t) / 1e6
            self._last_apply_t = inf.apply_t_us
            res = self.stack.update(inf.outputs, dt)
            self.last_outputs = np.asarray(inf.outputs, dtype=np.float64)
            if inf.gt_visible and not math.isnan(res.position.alpha_deg):
                err = abs(_wrap180(res.position.alpha_deg - inf.gt_alpha_deg))
                self._err_sum += err
                self._err_n += 1

    # ------------------------------------------------------------ control

    def _control(self, t: int) -> None:
        dt = self.cfg.control_period_us / 1e6
        if not self.cfg.control_enabled:
            self.world.predator.v = self.world.predator.w = 0.0
            self._steer_prey(dt)
            return
        scan = simulate_laser(self.world)
        st = self.stack.state
        pos = None
        if st.cmd_alpha is not None:
            pos = PositionVector(st.cmd_alpha, st.cmd_p, st.valid)
        prev_mode = self.fsm.mode
        cmd = fsm_step(self.fsm, st.region, pos, scan, dt, self.apf)
        self.world.predator.v, self.world.predator.w = cmd.v, cmd.w
        if self.fsm.mode == "goal" and prev_mode != "goal":
            self.captures += 1
            if self.first_capture_s is None:
                self.first_capture_s = t / 1e6
            if self.cfg.stop_on_capture:
                self.done = True
        self._steer_prey(dt)

    def _steer_prey(self, dt: float) -> None:
        cfg, world = self.cfg, self.world
        prey, pred = world.prey, world.predator
        if cfg.prey_policy == "external":
            return
        if cfg.prey_policy == "static":
            prey.v, prey.w = 0.0, 0.0
            return
        if cfg.prey_policy == "circle":
            prey.v, prey.w = 0.4, 0.35
            return
        if cfg.prey_policy != "evade":
            raise ValueError(f"unknown prey policy {cfg.prey_policy!r}")
        # evade: run from a close predator, otherwise amble with slow drift,
        # and lean toward the arena center when hugging a wall
        dx, dy = prey.x - pred.x, prey.y - pred.y
        dist = math.hypot(dx, dy)
        if dist < 2.5:
            want = math.atan2(dy, dx)
            speed = cfg.prey_speed
        else:
            self._prey_drift_left -= dt
            if self._prey_drift_left <= 0.0:
                self._prey_drift = float(self._prey_rng.uniform(-0.6, 0.6))
                self._prey_drift_left = 2.0
            want = prey.theta + self._prey_drift
            speed = 0.35
        margin = min(prey.x, world.arena.width - prey.x,
                     prey.y, world.arena.height - prey.y) - 0.47
        if margin < 1.2:
            to_center = math.atan2(world.arena.height / 2.0 - prey.y,
                                   world.arena.width / 2.0 - prey.x)
            blend = min(1.0, (1.2 - margin) / 1.2)
            want = want + blend * wrap_angle(to_center - want)
        err = wrap_angle(want - prey.theta)
        prey.w = max(-1.8, min(1.8, 2.0 * err))
        prey.v = speed * max(0.2, math.cos(err))

    # ------------------------------------------------------------- driving

    def tick(self) -> None:
        cfg = self.cfg
        contacts = step_world(self.world, cfg.dt_us)
        self.wall_contacts += bool(contacts["predator"])
        t = self.world.t_us
        if t >= self._next_render_t:
            self._sense(t)
            self._next_render_t += cfg.render_period_us
        if t >= self._next_aps_t:
            self._aps(t)
            self._next_aps_t += cfg.aps_period_us
        self._apply_pending(t)
        if t >= self._next_control_t:
            self._control(t)
            self._next_control_t += cfg.control_period_us
        if t >= self._next_trace_t:
            self.trace_rows.append(self._trace_row(t))
            self._next_trace_t += cfg.trace_every_us

    def run(self) -> dict:
        end = int(round(self.cfg.duration_s * 1e6))
        while self.world.t_us < end and not self.done:
            self.tick()
        return self.summary()

    # ------------------------------------------------------------ outputs

    def _trace_row(self, t: int) -> str:
        st = self.stack.state
        w = self.world
        a_f = st.alpha_f if st.alpha_f is not None else math.nan
        p_f = st.p_f if st.p_f is not None else math.nan
        cols = [str(t)] + ["%.9g" % v for v in
                           (w.predator.x, w.predator.y, w.predator.theta,
                            w.predator.v, w.predator.w,
                            w.prey.x, w.prey.y, w.prey.theta)] + \
            [self.fsm.mode, st.region or "-", st.size or "-"] + \
            ["%.9g" % v for v in (a_f, self.last_gt.alpha_deg, p_f,
                                  self.dvs_rate_eps(), self.aps_rate_fps())] + \
            [str(self.dropped_frames)]
        return " ".join(cols)

    def trace_text(self) -> str:
        head = ("# t_us pred_x pred_y pred_th pred_v pred_w prey_x prey_y "
                "prey_th mode region size alpha alpha_gt p_mag dvs_eps "
                "aps_fps dropped")
        return "\n".join([head] + self.trace_rows) + "\n"

    def summary(self) -> dict:
        mean_err = self._err_sum / self._err_n if self._err_n else None
        return {
            "seed": self.cfg.seed,
            "duration_s": self.world.t_us / 1e6,
            "captures": self.captures,
            "first_capture_s": self.first_capture_s,
            "wall_contacts": self.wall_contacts,
            "dvs_frames": self.dvs_frames,
            "inferences": self.inferences,
            "dropped_frames": self.dropped_frames,
            "min_infer_gap_us": self.min_infer_gap_us,
            "aps_frames": self.aps_frames,
            "aps_suppressed": self.aps_suppressed,
            "mean_abs_alpha_err_deg": mean_err,
            "tracked_inferences": self._err_n,
            "final_mode": self.fsm.mode,
            "prey_policy": self.cfg.prey_policy,
        }

    def snapshot(self) -> dict:
        """Telemetry view of the instantaneous loop state."""
        w, st = self.world, self.stack.state
        return {
            "type": "state",
            "t_us": w.t_us,
            "predator": {"x": w.predator.x, "y": w.predator.y,
                         "theta": w.predator.theta,
                         "v": w.predator.v, "w": w.predator.w},
            "prey": {"x": w.prey.x, "y": w.prey.y, "theta": w.prey.theta,
                     "v": w.prey.v, "w": w.prey.w},
            "mode": self.fsm.mode,
            "region": st.region,
            "size": st.size,
            "outputs": [float(v) for v in self.last_outputs],
            "alpha": None if st.alpha_f is None else float(st.alpha_f),
            "p_mag": None if st.p_f is None else float(st.p_f),
            "captures": self.captures,
            "dvs_rate_eps": self.dvs_rate_eps(),
            "aps_rate_fps": self.aps_rate_fps(),
            "dropped_frames": self.dropped_frames,
        }


def run_episode(config: EpisodeConfig | None = None) -> dict:
    """Convenience wrapper: run one full episode and return its summary."""
    return Episode(config).run()


def with_seed(config: EpisodeConfig, seed: int) -> EpisodeConfig:
    return replace(config, seed=seed)
