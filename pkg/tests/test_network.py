import pytest

from cavsignal.network import (
    OD_PAIRS,
    Approach,
    ConfigError,
    Movement,
    WorldConfig,
    build_network,
    exit_of,
    movement_between,
)


def test_sixteen_entry_lanes():
    net = build_network(WorldConfig())
    assert len(net.lanes) == 16
    assert {a for a, _ in net.lanes} == set(Approach)


def test_lane_movement_permissions():
    net = build_network(WorldConfig())
    for a in Approach:
        assert net.lanes[(a, 0)].allowed_movements == {Movement.LEFT}
        assert net.lanes[(a, 1)].allowed_movements == {Movement.STRAIGHT}
        assert net.lanes[(a, 2)].allowed_movements == {Movement.STRAIGHT}
        assert net.lanes[(a, 3)].allowed_movements == {Movement.STRAIGHT, Movement.RIGHT}
        assert [l.index for l in net.lanes_for(a, Movement.STRAIGHT)] == [1, 2, 3]
        assert [l.index for l in net.lanes_for(a, Movement.RIGHT)] == [3]


def test_construction_is_deterministic():
    a, b = build_network(WorldConfig()), build_network(WorldConfig())
    assert a.conflicts == b.conflicts
    assert [(k, l.allowed_movements) for k, l in a.lanes.items()] == [
        (k, l.allowed_movements) for k, l in b.lanes.items()
    ]
    assert all(not l.vehicles for l in a.lanes.values())


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dt": 0.0},
        {"duration": 10.5},
        {"cav_penetration": 1.2},
        {"cav_penetration": -0.1},
        {"approach_length": 500.0},
        {"lanes_per_approach": 3},
        {"expected_vehicles": -1.0},
    ],
)
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ConfigError):
        WorldConfig(**kwargs)


def test_movements_and_od_pairs():
    assert len(OD_PAIRS) == 12
    for entry, exit_ in OD_PAIRS:
        m = movement_between(entry, exit_)
        assert exit_of(entry, m) == exit_
    # right-hand traffic, approaches numbered clockwise
    assert exit_of(Approach.N, Movement.STRAIGHT) is Approach.S
    assert exit_of(Approach.N, Movement.LEFT) is Approach.E
    assert exit_of(Approach.N, Movement.RIGHT) is Approach.W
    with pytest.raises(ConfigError):
        movement_between(Approach.E, Approach.E)


def test_conflict_geometry_straight_crossing_by_hand():
    # N through path runs down x = -8 across the 25.6 m box; E through runs west along y = 8.
    # Each widened path is 3.2 m wide, so the shared square starts 3.2 m into the N path and
    # 19.2 m into the E path; scaled by 24 / 25.6.
    net = build_network(WorldConfig())
    area = net.conflict((Approach.N, Movement.STRAIGHT), (Approach.E, Movement.STRAIGHT))
    assert area.entry_a == pytest.approx(3.0, abs=1e-9)
    assert area.entry_b == pytest.approx(18.0, abs=1e-9)
    assert area.length_a == pytest.approx(3.0, abs=1e-9)
    assert area.length_b == pytest.approx(3.0, abs=1e-9)


def test_conflict_geometry_symmetric_and_plausible():
    net = build_network(WorldConfig())
    lengths = WorldConfig().box_path_length
    for (a, b), area in net.conflicts.items():
        assert a[0] != b[0]
        assert net.conflicts[(b, a)] == area.swapped()
        assert 0 <= area.entry_a and area.entry_a + area.length_a <= lengths[a[1]] + 1e-9
        assert 0 <= area.entry_b and area.entry_b + area.length_b <= lengths[b[1]] + 1e-9


def test_conflicting_movement_pairs():
    net = build_network(WorldConfig())
    unordered = {frozenset(k) for k in net.conflicts}
    assert len(unordered) == 16
    assert all(Movement.RIGHT not in {m for _, m in pair} for pair in unordered)
    # opposing lefts pass each other; opposing throughs never meet
    assert net.conflict((Approach.N, Movement.LEFT), (Approach.S, Movement.LEFT)) is None
    assert net.conflict((Approach.N, Movement.STRAIGHT), (Approach.S, Movement.STRAIGHT)) is None
    # a left turn crosses the opposing through movement
    assert net.conflict((Approach.N, Movement.LEFT), (Approach.S, Movement.STRAIGHT)) is not None
