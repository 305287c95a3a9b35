import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavsignal.driver import (
    CaccMode,
    CaccParams,
    FollowInput,
    KraussParams,
    cacc_next_speed,
    cacc_select_mode,
    cav_speed_envelope,
    krauss_desired_speed,
    krauss_next_speed,
    krauss_safe_speed,
)

KRAUSS = KraussParams()
CACC = CaccParams()


def _safe_speed_oracle(v_l, v_f, g, t_r=1, b=Fraction(9, 2)):
    v_l, v_f, g = Fraction(v_l), Fraction(v_f), Fraction(g)
    return v_l + (g - v_l * t_r) / ((v_l + v_f) / (2 * b) + t_r)


# --- Krauss -------------------------------------------------------------------

@pytest.mark.parametrize(
    "v_l, v_f, gap, expected",
    [
        (10, 10, 10, 10.0),
        (10, 10, 20, 10 + 90 / 29),  # 13.1034...
        (0, 10, 5, 45 / 19),  # 2.3684...
    ],
)
def test_safe_speed_hand_values(v_l, v_f, gap, expected):
    got = krauss_safe_speed(FollowInput(v_self=v_f, v_leader=v_l, gap=gap), KRAUSS)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(float(_safe_speed_oracle(v_l, v_f, gap)), rel=1e-12)


def test_safe_speed_may_be_negative_when_too_close():
    assert krauss_safe_speed(FollowInput(v_self=14, v_leader=0, gap=0.0), KRAUSS) == 0.0
    assert krauss_safe_speed(FollowInput(v_self=14, v_leader=10, gap=0.0), KRAUSS) < 10


def test_safe_speed_requires_leader():
    with pytest.raises(ValueError):
        krauss_safe_speed(FollowInput(v_self=5), KRAUSS)


def test_free_flow_at_max_speed_stays():
    p = KraussParams(sigma=0.0)
    rng = np.random.default_rng(0)
    assert krauss_next_speed(FollowInput(v_self=p.v_max), p, rng) == p.v_max


def test_acceleration_bound_from_standstill():
    p = KraussParams(sigma=0.0)
    rng = np.random.default_rng(0)
    assert krauss_next_speed(FollowInput(v_self=0.0), p, rng) == pytest.approx(2.6)


def test_dawdling_range_monte_carlo():
    rng = np.random.default_rng(1)
    cases = [FollowInput(v_self=8.0), FollowInput(v_self=0.5), FollowInput(v_self=12.0, v_leader=9.0, gap=12.0)]
    for inp in cases:
        v_des = krauss_desired_speed(inp, KRAUSS)
        draws = np.array([krauss_next_speed(inp, KRAUSS, rng) for _ in range(10_000)])
        assert draws.min() >= max(0.0, v_des - 1.3) - 1e-12
        assert draws.max() <= v_des + 1e-12


def test_dawdling_never_brakes_harder_than_b_by_itself():
    rng = np.random.default_rng(2)
    inp = FollowInput(v_self=1.0)
    draws = [krauss_next_speed(inp, KRAUSS, rng) for _ in range(2000)]
    assert min(draws) >= 0.0


def _two_car_collides(v_f, v_l, gap, p, steps=40):
    rng = np.random.default_rng(0)
    length = 5.0
    x_l, x_f = gap + length, 0.0
    for _ in range(steps):
        v_f = krauss_next_speed(FollowInput(v_self=v_f, v_leader=v_l, gap=x_l - x_f - length), p, rng)
        v_l = max(0.0, v_l - p.b * 1.0)
        x_l += v_l
        x_f += v_f
        if x_l - x_f - length < -1e-9:
            return True
    return False


def test_no_collision_grid_with_leader_braking():
    p = KraussParams(sigma=0.0)
    failures = [
        (v, v_l, g)
        for v in range(15)
        for v_l in range(15)
        for g in range(1, 51)
        if _two_car_collides(float(v), float(v_l), float(g), p)
    ]
    assert failures == []


def test_equilibrium_gap_grows_with_speed():
    p = KraussParams(sigma=0.0)
    rng = np.random.default_rng(0)

    def settle(v_lead):
        x_l, x_f, v = 200.0, 0.0, v_lead
        for _ in range(300):
            v = krauss_next_speed(FollowInput(v_self=v, v_leader=v_lead, gap=x_l - x_f - 5.0), p, rng)
            x_l += v_lead
            x_f += v
        return x_l - x_f - 5.0

    slow, fast = settle(5.0), settle(13.89)
    assert p.min_gap < slow < fast


@given(
    v=st.floats(0, 14),
    v_l=st.one_of(st.none(), st.floats(0, 14)),
    gap=st.floats(0, 200),
    u=st.integers(0, 2**32 - 1),
)
@settings(max_examples=300, deadline=None)
def test_krauss_speed_bounds(v, v_l, gap, u):
    rng = np.random.default_rng(u)
    inp = FollowInput(v_self=v, v_leader=v_l, gap=gap if v_l is not None else math.inf)
    out = krauss_next_speed(inp, KRAUSS, rng)
    assert 0.0 <= out <= KRAUSS.v_max
    assert out <= v + KRAUSS.accel + 1e-12


# --- CACC ---------------------------------------------------------------------

def test_mode_without_leader_is_speed_control():
    assert cacc_select_mode(FollowInput(v_self=10), CACC) is CaccMode.SPEED_CONTROL


def test_mode_large_time_gap_is_speed_control():
    assert cacc_select_mode(FollowInput(v_self=10, v_leader=10, gap=30), CACC) is CaccMode.SPEED_CONTROL


def test_mode_gap_control_inside_tolerances():
    inp = FollowInput(v_self=10, v_leader=10.05, gap=5.5)
    assert cacc_select_mode(inp, CACC) is CaccMode.GAP_CONTROL


def test_mode_collision_avoidance_when_too_close():
    inp = FollowInput(v_self=10, v_leader=8, gap=4.0)  # error -1.5 m
    assert cacc_select_mode(inp, CACC) is CaccMode.COLLISION_AVOIDANCE


def test_mode_gap_closing_when_too_far():
    inp = FollowInput(v_self=10, v_leader=10, gap=12.0)  # error +6.5 m, time gap 1.2 s
    assert cacc_select_mode(inp, CACC) is CaccMode.GAP_CLOSING


def test_gap_control_hysteresis():
    inp = FollowInput(v_self=10, v_leader=10.5, gap=6.2)  # error 0.7 m, speed dev 0.5
    assert cacc_select_mode(inp, CACC) is CaccMode.GAP_CLOSING
    assert cacc_select_mode(inp, CACC, CaccMode.GAP_CONTROL) is CaccMode.GAP_CONTROL


@given(
    v=st.floats(0, 14),
    v_l=st.one_of(st.none(), st.floats(0, 14)),
    gap=st.floats(0, 300),
    prev=st.one_of(st.none(), st.sampled_from(list(CaccMode))),
)
def test_mode_selection_is_total(v, v_l, gap, prev):
    mode = cacc_select_mode(FollowInput(v_self=v, v_leader=v_l, gap=gap), CACC, prev)
    assert isinstance(mode, CaccMode)


def test_speed_control_fixed_point_is_exact():
    inp = FollowInput(v_self=CACC.v_d)
    assert cacc_next_speed(inp, CACC, CaccMode.SPEED_CONTROL) == CACC.v_d


def test_speed_control_one_second_update():
    inp = FollowInput(v_self=10.0, dt=1.0)
    expected = 10.0 + 0.4 * (13.89 - 10.0)  # 11.556
    assert cacc_next_speed(inp, CACC, CaccMode.SPEED_CONTROL) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(11.556)


def test_gap_control_equilibrium_keeps_speed():
    v = 10.0
    inp = FollowInput(v_self=v, v_leader=v, gap=CACC.min_gap + CACC.t_d * v, a_self=0.0, dt=0.1)
    assert cacc_next_speed(inp, CACC, CaccMode.GAP_CONTROL) == pytest.approx(v, abs=1e-12)


def test_gap_modes_use_their_own_gains():
    inp = FollowInput(v_self=10.0, v_leader=10.4, gap=6.5, a_self=0.2, dt=1.0)
    e = 6.5 - 0.5 - 0.5 * 10.0
    e_rate = 10.4 - 10.0 - 0.5 * 0.2
    for mode, (k5, k6) in [
        (CaccMode.GAP_CONTROL, CACC.gap_control),
        (CaccMode.GAP_CLOSING, CACC.gap_closing),
        (CaccMode.COLLISION_AVOIDANCE, CACC.collision_avoidance),
    ]:
        assert cacc_next_speed(inp, CACC, mode) == pytest.approx(10.0 + k5 * e + k6 * e_rate, abs=1e-12)


def test_gap_mode_needs_leader():
    with pytest.raises(ValueError):
        cacc_next_speed(FollowInput(v_self=5.0), CACC, CaccMode.GAP_CONTROL)


@given(
    v=st.floats(0, 13.89),
    v_l=st.floats(0, 14),
    gap=st.floats(0, 100),
    a=st.floats(-4.5, 2.6),
    mode=st.sampled_from(list(CaccMode)),
    dt=st.sampled_from([0.1, 0.5, 1.0]),
)
def test_cacc_speed_clamps(v, v_l, gap, a, mode, dt):
    out = cacc_next_speed(FollowInput(v_self=v, v_leader=v_l, gap=gap, a_self=a, dt=dt), CACC, mode)
    assert 0.0 <= out <= CACC.v_max
    assert v - CACC.b * dt - 1e-9 <= out <= v + CACC.accel * dt + 1e-9


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        KraussParams(b=0)
    with pytest.raises(ValueError):
        KraussParams(sigma=1.5)
    with pytest.raises(ValueError):
        CaccParams(k4=0)
    with pytest.raises(ValueError):
        CaccParams(t_d=0)


def _platoon_errors(seed, n_followers=5, duration=60.0):
    """Leader at constant speed; followers run the controller every control period."""
    p = CaccParams(v_max=16.67)
    rng = np.random.default_rng(seed)
    h = p.control_period
    v_lead = 13.89
    length = 5.0
    pos = [0.0]
    speeds = [v_lead]
    for _ in range(n_followers):
        v = v_lead - rng.uniform(0, 1)
        gap = p.min_gap + p.t_d * v + rng.uniform(-2, 2)
        pos.append(pos[-1] - length - gap)
        speeds.append(v)
    accels = [0.0] * (n_followers + 1)
    modes = [None] * (n_followers + 1)
    for _ in range(int(round(duration / h))):
        new = [v_lead]
        for i in range(1, n_followers + 1):
            inp = FollowInput(speeds[i], speeds[i - 1], pos[i - 1] - pos[i] - length, accels[i], h)
            modes[i] = cacc_select_mode(inp, p, modes[i])
            v = cacc_next_speed(inp, p, modes[i])
            v = min(v, cav_speed_envelope(inp.gap, speeds[i - 1], h, p))
            new.append(v)
        for i in range(n_followers + 1):
            accels[i] = (new[i] - speeds[i]) / h
            pos[i] += new[i] * h
            speeds[i] = new[i]
    return [pos[i - 1] - pos[i] - length - p.min_gap - p.t_d * speeds[i] for i in range(1, n_followers + 1)]


@pytest.mark.parametrize("seed", range(10))
def test_platoon_converges_within_a_minute(seed):
    errors = _platoon_errors(seed)
    assert max(abs(e) for e in errors) < 0.1


def test_envelope_allows_stop_behind_stopped_obstacle():
    p = CACC
    for gap in (0.5, 2.0, 10.0, 40.0):
        v = cav_speed_envelope(gap, 0.0, 0.1, p)
        free = max(0.0, gap - p.min_gap)
        # after moving v*h the remaining free gap covers a stop at b
        assert v * 0.1 + v * v / (2 * p.b) <= free + 1e-9


def test_envelope_does_not_bind_at_steady_following():
    v = 13.89
    gap = CACC.min_gap + CACC.t_d * v
    assert cav_speed_envelope(gap, v, 0.1, CACC) > v
