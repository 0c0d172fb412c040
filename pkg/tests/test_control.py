"""FSM and potential-field tests. Field magnitudes follow Khatib's form
eta * (1/rho - 1/r_soft)^2, evaluated by hand for the frozen cases."""

import math

import numpy as np
import pytest

from preynet import control as ct
from preynet.steering import PositionVector


def clear_scan(r=10.0):
    angles = ct.make_scan_angles()
    return ct.LaserScan(np.full(181, float(r)), angles, 10.0)


def scan_with(indices, value, base=10.0):
    s = clear_scan(base)
    for i in np.atleast_1d(indices):
        s.ranges[int(i)] = value
    return s


PARAMS = ct.ApfParams()


# ------------------------------------------------------------------- field

def test_field_zero_when_clear():
    mags, (fx, fy) = ct.repulsive_field(clear_scan(), PARAMS)
    assert np.all(mags == 0.0)
    assert fx == 0.0 and fy == 0.0


def test_field_zero_at_soft_boundary():
    mags, _ = ct.repulsive_field(clear_scan(PARAMS.r_soft), PARAMS)
    assert np.all(mags == 0.0)


def test_field_magnitude_at_one_meter():
    # eta (1/1 - 1/1.5)^2 = 0.05 / 9
    mags, _ = ct.repulsive_field(scan_with(90, 1.0), PARAMS)
    assert mags[90] == pytest.approx(0.05 / 9.0)
    assert np.count_nonzero(mags) == 1


def test_field_grows_toward_contact():
    m1, _ = ct.repulsive_field(scan_with(90, 1.0), PARAMS)
    m2, _ = ct.repulsive_field(scan_with(90, 0.3), PARAMS)
    assert m2[90] > m1[90] * 10


def test_field_symmetric_obstacles_push_backward():
    angles = ct.make_scan_angles()
    left = int(np.argmin(np.abs(angles - math.radians(45))))
    right = int(np.argmin(np.abs(angles + math.radians(45))))
    _, (fx, fy) = ct.repulsive_field(scan_with([left, right], 1.0), PARAMS)
    assert fx < 0.0
    assert fy == pytest.approx(0.0, abs=1e-12)


def test_field_rejects_nonpositive_range():
    s = clear_scan()
    s.ranges[0] = 0.0
    with pytest.raises(ValueError):
        ct.repulsive_field(s, PARAMS)


# --------------------------------------------------------- least repulsive

def test_least_repulsive_clear_field_is_forward():
    angles = ct.make_scan_angles()
    assert ct.least_repulsive_direction(angles, np.zeros(181),
                                        PARAMS.window_half_rad) == 0.0


def test_least_repulsive_avoids_left_obstacle():
    angles = ct.make_scan_angles()
    mags, _ = ct.repulsive_field(scan_with(range(120, 181), 0.5), PARAMS)
    b = ct.least_repulsive_direction(angles, mags, PARAMS.window_half_rad)
    assert b < 0.0  # obstacle fills the left half, so turn right


def test_least_repulsive_prefers_small_turns_on_ties():
    angles = ct.make_scan_angles()
    mags = np.zeros(181)
    mags[:20] = 1.0
    mags[-20:] = 1.0  # symmetric edges, middle all ties at zero
    assert ct.least_repulsive_direction(angles, mags, PARAMS.window_half_rad) == 0.0


# --------------------------------------------------------------- soft zone

def test_soft_scale_values():
    assert ct.soft_scale(clear_scan(2.0), PARAMS) == pytest.approx(1.0)
    assert ct.soft_scale(clear_scan(1.1), PARAMS) == pytest.approx(0.5)
    assert ct.soft_scale(clear_scan(0.6), PARAMS) == 0.0


# --------------------------------------------------------------------- fsm

def visible(p=2.5, alpha=90.0):
    return PositionVector(alpha, p, True)


def test_hard_zone_preempts_every_mode():
    for mode in ct.MODES:
        state = ct.FsmState(mode=mode)
        cmd = ct.fsm_step(state, "C", visible(), clear_scan(0.5), 0.05, PARAMS)
        assert cmd.v == 0.0
        assert state.mode == "avoid"
        assert abs(cmd.w) <= PARAMS.w_spin + 1e-12


def test_hard_zone_rotation_heads_for_clearance():
    # wall crowding the left rays: rotate clockwise (negative w)
    state = ct.FsmState(mode="wander")
    cmd = ct.fsm_step(state, "N", None, scan_with(range(120, 181), 0.5),
                      0.05, PARAMS)
    assert cmd.v == 0.0
    assert cmd.w == pytest.approx(-PARAMS.w_spin)


def test_hard_zone_translation_invariant():
    rng = np.random.default_rng(0)
    angles = ct.make_scan_angles()
    for _ in range(200):
        ranges = rng.uniform(0.05, 10.0, 181)
        ranges[rng.integers(0, 181)] = rng.uniform(0.05, PARAMS.r_hard - 1e-6)
        scan = ct.LaserScan(ranges, angles, 10.0)
        region = rng.choice(["L", "C", "R", "N"])
        state = ct.FsmState(mode=str(rng.choice(ct.MODES)))
        cmd = ct.fsm_step(state, region, visible(), scan, 0.05, PARAMS)
        assert cmd.v == 0.0


def test_avoid_clears_back_to_search():
    state = ct.FsmState(mode="avoid")
    cmd = ct.fsm_step(state, "N", None, clear_scan(), 0.05, PARAMS)
    assert state.mode == "wander"
    assert cmd.v > 0.0


def test_approach_turn_signs():
    state = ct.FsmState()
    cmd = ct.fsm_step(state, "L", visible(alpha=150.0), clear_scan(), 0.05, PARAMS)
    assert state.mode == "approach"
    assert cmd.w == pytest.approx(PARAMS.w_approach)
    assert cmd.v > 0.0
    cmd = ct.fsm_step(state, "R", visible(alpha=30.0), clear_scan(), 0.05, PARAMS)
    assert cmd.w == pytest.approx(-PARAMS.w_approach)
    cmd = ct.fsm_step(state, "C", visible(), clear_scan(), 0.05, PARAMS)
    assert cmd.w == 0.0


def test_approach_speed_scales_with_distance_estimate():
    state = ct.FsmState()
    fast = ct.fsm_step(state, "C", visible(p=2.5), clear_scan(), 0.05, PARAMS)
    mid = ct.fsm_step(state, "C", visible(p=1.75), clear_scan(), 0.05, PARAMS)
    near = ct.fsm_step(state, "C", visible(p=0.5), clear_scan(), 0.05, PARAMS)
    assert fast.v == pytest.approx(PARAMS.v_max)
    assert mid.v == pytest.approx(PARAMS.v_max * 0.7)
    # the throttle floors out so the chase keeps closing on a nearby prey
    assert near.v == pytest.approx(PARAMS.v_max * PARAMS.approach_floor)


def test_approach_soft_zone_slows():
    state = ct.FsmState()
    cmd = ct.fsm_step(state, "C", visible(), clear_scan(1.1), 0.05, PARAMS)
    assert cmd.v == pytest.approx(PARAMS.v_max * 0.5)


def test_approach_ignores_prey_return_for_speed():
    # only the target's own sector is short: the chase keeps full speed,
    # stalling only from walls outside that sector
    state = ct.FsmState()
    scan = scan_with(90, 1.2)
    cmd = ct.fsm_step(state, "C", visible(), scan, 0.05, PARAMS)
    assert cmd.v == pytest.approx(PARAMS.v_max)
    state = ct.FsmState()
    scan = scan_with(90, 1.2)
    scan.ranges[0] = 1.1  # side wall well outside the prey sector
    cmd = ct.fsm_step(state, "C", visible(), scan, 0.05, PARAMS)
    assert cmd.v == pytest.approx(PARAMS.v_max * 0.5)


def test_capture_requires_center_and_short_ray():
    state = ct.FsmState()
    scan = scan_with(90, 0.9)  # forward ray below d_goal
    cmd = ct.fsm_step(state, "C", visible(), scan, 0.05, PARAMS)
    assert state.mode == "goal"
    assert cmd.v == 0.0 and cmd.w == 0.0
    # same ray but decision L: no capture
    state = ct.FsmState()
    ct.fsm_step(state, "L", visible(alpha=150.0), scan, 0.05, PARAMS)
    assert state.mode == "approach"


def test_capture_ray_follows_bearing():
    # prey estimated toward the left edge: the short forward ray is ignored
    state = ct.FsmState()
    scan = scan_with(90, 0.9)
    ct.fsm_step(state, "C", visible(alpha=170.0), scan, 0.05, PARAMS)
    assert state.mode == "approach"


def test_goal_holds_then_times_out():
    state = ct.FsmState(mode="goal")
    for _ in range(4):
        cmd = ct.fsm_step(state, "N", None, clear_scan(), 1.0, PARAMS)
        assert state.mode == "goal"
        assert cmd.v == 0.0 and cmd.w == 0.0
    cmd = ct.fsm_step(state, "N", None, clear_scan(), 1.0, PARAMS)
    assert state.mode == "wander"
    assert cmd.v > 0.0


def test_lost_prey_spins_toward_last_side():
    state = ct.FsmState()
    ct.fsm_step(state, "R", visible(alpha=30.0), clear_scan(), 0.05, PARAMS)
    cmd = ct.fsm_step(state, "N", None, clear_scan(), 0.05, PARAMS)
    assert state.mode == "approach"
    assert cmd.v == 0.0
    assert cmd.w == pytest.approx(-PARAMS.w_spin)
    ct.fsm_step(state, "L", visible(alpha=150.0), clear_scan(), 0.05, PARAMS)
    cmd = ct.fsm_step(state, "N", None, clear_scan(), 0.05, PARAMS)
    assert cmd.w == pytest.approx(PARAMS.w_spin)


def test_reacquire_times_out_to_wander():
    state = ct.FsmState()
    ct.fsm_step(state, "R", visible(alpha=30.0), clear_scan(), 0.05, PARAMS)
    for _ in range(int(PARAMS.reacquire_timeout_s / 0.5)):
        ct.fsm_step(state, "N", None, clear_scan(), 0.5, PARAMS)
    assert state.mode == "wander"
    assert state.last_seen_side is None


def test_wander_without_history():
    state = ct.FsmState()
    cmd = ct.fsm_step(state, "N", None, clear_scan(), 0.05, PARAMS)
    assert state.mode == "wander"
    assert cmd.v == pytest.approx(PARAMS.wander_v)
    assert abs(cmd.w) <= PARAMS.wander_w_max


def test_wander_resamples_on_schedule():
    state = ct.FsmState(rng=np.random.default_rng(42))
    ws = []
    for _ in range(int(9.0 / 0.5)):  # nine seconds: three resample windows
        cmd = ct.fsm_step(state, "N", None, clear_scan(), 0.5, PARAMS)
        ws.append(cmd.w)
    assert len(set(ws)) == 3


def test_fsm_deterministic_given_seed():
    def run():
        state = ct.FsmState(rng=np.random.default_rng(7))
        return [ct.fsm_step(state, "N", None, clear_scan(), 0.5, PARAMS).w
                for _ in range(30)]

    assert run() == run()


def test_velocity_caps_always_hold():
    rng = np.random.default_rng(1)
    angles = ct.make_scan_angles()
    state = ct.FsmState(rng=np.random.default_rng(2))
    for _ in range(500):
        scan = ct.LaserScan(rng.uniform(0.05, 10.0, 181), angles, 10.0)
        region = str(rng.choice(["L", "C", "R", "N"]))
        pos = visible(p=rng.uniform(0, 2.5), alpha=rng.uniform(0, 360) % 360)
        if not 0 <= pos.alpha_deg <= 360:
            continue
        cmd = ct.fsm_step(state, region, pos, scan, 0.05, PARAMS)
        assert 0.0 <= cmd.v <= PARAMS.v_max + 1e-12
        assert abs(cmd.w) <= PARAMS.w_spin + 1e-12


def test_params_validation():
    with pytest.raises(ValueError):
        ct.ApfParams(r_hard=1.6, r_soft=1.5)
    with pytest.raises(ValueError):
        ct.ApfParams(v_max=2.5)
