import csv
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cavsignal.network import Approach, Movement, WorldConfig, build_network
from cavsignal.signals import (
    GROUPS,
    Color,
    DtseEncoder,
    FixedTimePlan,
    Interval,
    Phase,
    RewardAccumulator,
    SignalContractError,
    SignalController,
    SignalState,
    advance_signal,
    compute_reward,
    encode_state,
    fixed_time_next,
    timeline_header,
    write_timeline_csv,
)

from conftest import place


def _group_movements(group):
    approach, left = group
    return [(approach, Movement.LEFT)] if left else [(approach, Movement.STRAIGHT), (approach, Movement.RIGHT)]


def _conflicting_groups():
    net = build_network(WorldConfig())
    out = set()
    for g, h in itertools.combinations(GROUPS, 2):
        if any(net.conflict(a, b) for a in _group_movements(g) for b in _group_movements(h)):
            out.add(frozenset((g, h)))
    return out


def _reachable_states():
    seen = set()
    frontier = [SignalState(p, Interval.GREEN, 0.0) for p in Phase]
    while frontier:
        state = frontier.pop()
        if state in seen:
            continue
        seen.add(state)
        if state.at_decision_epoch:
            for chosen in Phase:
                for nxt in advance_signal(state, chosen):
                    frontier.append(nxt)
                    frontier.append(SignalState(nxt.phase, nxt.interval, 0.0, nxt.next_phase))
    plan = FixedTimePlan()
    seen.update(fixed_time_next(t) for t in np.arange(0, plan.cycle, 0.5))
    return seen


def test_no_conflicting_movements_active_together():
    conflicts = _conflicting_groups()
    assert conflicts, "geometry should produce conflicting groups"
    for state in _reachable_states():
        active = [g for g in GROUPS if state.group_color(g) is not Color.RED]
        for g, h in itertools.combinations(active, 2):
            assert frozenset((g, h)) not in conflicts, (state, g, h)


def test_phase_greens():
    s = SignalState(Phase.NSA)
    assert s.color(Approach.N, Movement.STRAIGHT) is Color.GREEN
    assert s.color(Approach.S, Movement.RIGHT) is Color.GREEN
    assert s.color(Approach.N, Movement.LEFT) is Color.RED
    assert s.color(Approach.E, Movement.STRAIGHT) is Color.RED
    s = SignalState(Phase.EWLA, Interval.YELLOW, 4.0)
    assert s.color(Approach.W, Movement.LEFT) is Color.YELLOW
    assert sum(c is Color.GREEN for c in s.colors().values()) == 0


def test_keep_phase_extends_green():
    timeline = advance_signal(SignalState(Phase.NSA, Interval.GREEN, 0.0), Phase.NSA)
    assert timeline == [SignalState(Phase.NSA, Interval.GREEN, 10.0)]


def test_switch_inserts_yellow():
    timeline = advance_signal(SignalState(Phase.NSA, Interval.GREEN, 0.0), Phase.EWA)
    assert [(s.phase, s.interval, s.timer) for s in timeline] == [
        (Phase.NSA, Interval.YELLOW, 4.0),
        (Phase.EWA, Interval.GREEN, 10.0),
    ]


def test_decision_mid_interval_is_an_error():
    with pytest.raises(SignalContractError):
        advance_signal(SignalState(Phase.NSA, Interval.GREEN, 3.0), Phase.EWA)
    with pytest.raises(SignalContractError):
        advance_signal(SignalState(Phase.NSA, Interval.YELLOW, 0.0), Phase.EWA)


def test_switching_every_epoch_has_fourteen_second_period():
    ctl = SignalController(SignalState(Phase.NSA, Interval.GREEN, 0.0))
    trace = []
    for chosen in [Phase.NSLA, Phase.EWA, Phase.EWLA, Phase.NSA]:
        assert ctl.at_decision_epoch
        ctl.decide(chosen)
        while True:
            trace.append(ctl.state.interval)
            ctl.tick(1.0)
            if ctl.at_decision_epoch:
                break
    assert len(trace) == 4 * 14
    assert trace[:14] == [Interval.YELLOW] * 4 + [Interval.GREEN] * 10
    assert trace == trace[:14] * 4


def test_fixed_time_plan_table():
    assert fixed_time_next(0.0).phase is Phase.NSA
    assert fixed_time_next(0.0).interval is Interval.GREEN
    s = fixed_time_next(27.0)
    assert (s.phase, s.interval, s.next_phase) == (Phase.NSA, Interval.YELLOW, Phase.NSLA)
    assert fixed_time_next(90.0) == fixed_time_next(0.0)
    assert FixedTimePlan().cycle == 90.0
    assert fixed_time_next(29.0).phase is Phase.NSLA
    assert fixed_time_next(89.0).interval is Interval.YELLOW


@given(st.integers(0, 10**7), st.integers(1, 100))
def test_fixed_time_periodicity(quarter_seconds, k):
    clock = quarter_seconds / 4
    assert fixed_time_next(clock) == fixed_time_next(clock + 90.0 * k)


def test_fixed_time_periodicity_on_grid():
    for t in np.arange(0, 900, 0.5):
        assert fixed_time_next(t) == fixed_time_next(t + 90.0)


def test_fixed_time_rejects_negative_clock():
    with pytest.raises(ValueError):
        fixed_time_next(-1.0)


# --- state encoding -----------------------------------------------------------

def test_empty_world_encodes_to_zeros(empty_world):
    obs = encode_state(empty_world)
    assert obs.shape == (80,)
    assert not obs.any()


def test_single_vehicle_near_stop_line(empty_world):
    place(empty_world, Approach.N, 0, 3.0)
    obs = encode_state(empty_world)
    assert obs.sum() == 1 and obs[0] == 1


def test_occupancy_is_binary(empty_world):
    place(empty_world, Approach.N, 0, 3.0)
    place(empty_world, Approach.N, 0, 5.0)
    obs = encode_state(empty_world)
    assert obs.sum() == 1 and obs[0] == 1


def test_cell_layout(empty_world):
    place(empty_world, Approach.E, 2, 50.0)  # E through group, cell [40, 60)
    place(empty_world, Approach.W, 3, 7.0)  # boundary belongs to the farther cell
    place(empty_world, Approach.S, 0, 750.0)  # far end of the last cell
    place(empty_world, Approach.S, 1, -4.0)  # inside the box: not encoded
    obs = encode_state(empty_world)
    assert np.flatnonzero(obs).tolist() == sorted([(1 * 2 + 1) * 10 + 5, (3 * 2 + 1) * 10 + 1, (2 * 2 + 0) * 10 + 9])


def test_encoder_rejects_bad_boundaries():
    with pytest.raises(ValueError):
        DtseEncoder([7, 7, 14])
    with pytest.raises(ValueError):
        DtseEncoder([0, 7])


def test_through_group_merges_three_lanes(empty_world):
    for lane in (1, 2, 3):
        place(empty_world, Approach.N, lane, 20.0)
    obs = encode_state(empty_world)
    assert np.flatnonzero(obs).tolist() == [10 + 2]


# --- reward -----------------------------------------------------------------------

@pytest.mark.parametrize("prev, cur, expected", [(100, 80, 20), (50, 50, 0), (50, 90, -40)])
def test_reward_is_drop_in_waiting(prev, cur, expected):
    assert compute_reward(RewardAccumulator(prev, cur)) == expected


def test_reward_accumulator_rejects_negative():
    with pytest.raises(ValueError):
        RewardAccumulator(-1.0, 0.0)


@given(st.lists(st.integers(0, 10**6), min_size=2, max_size=200))
def test_reward_telescopes(samples):
    acc = RewardAccumulator()
    acc.push(float(samples[0]))
    total = 0.0
    for x in samples[1:]:
        acc.push(float(x))
        total += compute_reward(acc)
    assert total == samples[0] - samples[-1]


def test_timeline_csv(tmp_path):
    path = tmp_path / "timeline.csv"
    write_timeline_csv(path, [(0.0, SignalState(Phase.NSA)), (10.0, SignalState(Phase.NSA, Interval.YELLOW, 4.0))])
    rows = list(csv.reader(open(path)))
    assert rows[0] == timeline_header()
    assert rows[1][:3] == ["0.0", "NSA", "green"]
    # columns: N_L N_T E_L E_T S_L S_T W_L W_T
    assert rows[1][3:] == ["r", "G", "r", "r", "r", "G", "r", "r"]
    assert rows[2][3:] == ["r", "y", "r", "r", "r", "y", "r", "r"]
