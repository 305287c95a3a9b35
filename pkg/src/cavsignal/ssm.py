"""Time-to-collision surrogate safety measures and conflict events.

Rear-end TTC applies to consecutive vehicles on one lane line while the
follower is faster. Crossing TTC applies to vehicles on intersecting paths
whose occupancy of the shared area would overlap in time; it is the later
vehicle's time to reach the area. A pair is in conflict while its TTC is at or
below the threshold of the responding vehicle's class (the follower, or the
later vehicle); contiguous in-conflict intervals become one event.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional

from .sim import STOP_SPEED, InvariantViolation, TravelPhase, Vehicle, VehicleKind, World

CROSSING_LOOKAHEAD = 100.0
CLOSURE_GAP = 3.0


@dataclass(frozen=True)
class SsmThresholds:
    hdv_ttc: float = 1.5
    cav_ttc: float = 0.5

    def __post_init__(self):
        if not 0 < self.cav_ttc < self.hdv_ttc:
            raise ValueError("thresholds must satisfy 0 < cav_ttc < hdv_ttc")

    def for_kind(self, kind: VehicleKind) -> float:
        return self.cav_ttc if kind is VehicleKind.CAV else self.hdv_ttc


class ConflictKind(enum.Enum):
    REAR_END = "rear_end"
    CROSSING = "crossing"


@dataclass
class SsmEvent:
    """One contiguous in-conflict interval of a vehicle pair.

    ``veh_b`` is the responding vehicle (rear-end follower, or the later
    vehicle of a crossing pair) whose class sets ``threshold_used``.
    """

    kind: ConflictKind
    veh_a: int
    class_a: VehicleKind
    veh_b: int
    class_b: VehicleKind
    t_begin: float
    t_end: float
    min_ttc: float
    threshold_used: float


@dataclass(frozen=True)
class CrossingSituation:
    """Two vehicles heading for a shared area.

    ``s_a``/``s_b`` are distances to the start of the area (zero once inside).
    ``clear_a`` is the distance A still travels past the start of the area
    until its rear leaves it.
    """

    s_a: float
    s_b: float
    v_a: float
    v_b: float
    clear_a: float

    def __post_init__(self):
        if min(self.s_a, self.s_b, self.clear_a) < 0:
            raise ValueError("distances must be non-negative")


def ttc_rear_end(x_leader: float, v_leader: float, length: float,
                 x_follower: float, v_follower: float) -> Optional[float]:
    """Time until the follower's front reaches the leader's rear at constant speeds.

    Positions increase in the direction of travel. ``None`` when the follower
    is not faster.
    """
    gap = x_leader - x_follower - length
    if gap < -1e-6:
        raise InvariantViolation(f"rear-end pair overlaps by {-gap:.3f} m")
    if v_follower <= v_leader:
        return None
    return max(gap, 0.0) / (v_follower - v_leader)


def _arrival_time(distance: float, v: float) -> float:
    if distance <= 0:
        return 0.0
    return distance / v if v >= STOP_SPEED else math.inf


def ttc_crossing(sit: CrossingSituation) -> Optional[float]:
    """B's time to reach the shared area while A is expected to occupy it.

    Applies when A enters first and leaves after B's expected entry; ``None``
    otherwise, or when B is (nearly) stationary.
    """
    if sit.v_b < STOP_SPEED:
        return None
    t_b_in = sit.s_b / sit.v_b
    t_a_in = _arrival_time(sit.s_a, sit.v_a)
    if not t_a_in < t_b_in:
        return None
    t_a_out = _arrival_time(sit.s_a + sit.clear_a, sit.v_a)
    if t_a_out <= t_b_in:
        return None
    return t_b_in


# --- event aggregation ------------------------------------------------------------

PairKey = tuple[ConflictKind, int, int]


class ConflictMonitor:
    """Turns per-step in-conflict observations into :class:`SsmEvent` records."""

    def __init__(self, thresholds: SsmThresholds = SsmThresholds(), closure_gap: float = CLOSURE_GAP):
        self.thresholds = thresholds
        self.closure_gap = closure_gap
        self.open: dict[PairKey, SsmEvent] = {}
        self.closed: list[SsmEvent] = []

    def observe(self, t: float, kind: ConflictKind, a: Vehicle, b: Vehicle, ttc: float) -> bool:
        """Record one TTC sample; returns whether it counts as a conflict."""
        thr = self.thresholds.for_kind(b.kind)
        if ttc > thr:
            return False
        key = (kind, a.id, b.id)
        ev = self.open.get(key)
        if ev is None:
            self.open[key] = SsmEvent(kind, a.id, a.kind, b.id, b.kind, t, t, ttc, thr)
        else:
            ev.t_end = t
            ev.min_ttc = min(ev.min_ttc, ttc)
        return True

    def close_stale(self, t: float, present: Optional[set] = None) -> None:
        """Close events out of conflict for ``closure_gap`` or with a departed vehicle."""
        for key in list(self.open):
            ev = self.open[key]
            gone = present is not None and (ev.veh_a not in present or ev.veh_b not in present)
            if gone or t - ev.t_end >= self.closure_gap - 1e-9:
                self.closed.append(self.open.pop(key))

    def finish(self) -> list[SsmEvent]:
        """Close everything still open and return all events in closing order."""
        self.closed.extend(self.open.values())
        self.open.clear()
        return self.closed

    @property
    def events(self) -> list[SsmEvent]:
        return self.closed + list(self.open.values())


def _crossing_candidates(world: World) -> list[Vehicle]:
    out = []
    for lane in world.network.lanes.values():
        for veh in lane.vehicles:
            if veh.pos > CROSSING_LOOKAHEAD:
                break
            if veh.phase_of_travel is TravelPhase.CROSSING or not veh.stopping:
                out.append(veh)
    return out


def crossing_pairs(world: World) -> Iterable[tuple[Vehicle, Vehicle, float]]:
    """Yield ``(earlier, later, ttc)`` for every crossing pair with a defined TTC."""
    L = world.config.vehicle_length
    cands = _crossing_candidates(world)
    conflicts = world.network.conflicts
    for i, x in enumerate(cands):
        for y in cands[i + 1:]:
            if x.entry == y.entry:
                continue
            area = conflicts.get((x.route, y.route))
            if area is None:
                continue
            clear_x = area.entry_a + area.length_a + L + x.pos
            clear_y = area.entry_b + area.length_b + L + y.pos
            if clear_x <= 0 or clear_y <= 0:
                continue
            s_x = max(0.0, area.entry_a + x.pos)
            s_y = max(0.0, area.entry_b + y.pos)
            tx, ty = _arrival_time(s_x, x.speed), _arrival_time(s_y, y.speed)
            if tx == ty == math.inf:
                continue
            if (tx, x.id) < (ty, y.id):
                a, b, s_a, s_b, clear_a = x, y, s_x, s_y, clear_x
            else:
                a, b, s_a, s_b, clear_a = y, x, s_y, s_x, clear_y
            ttc = ttc_crossing(CrossingSituation(s_a, s_b, a.speed, b.speed, clear_a - s_a))
            if ttc is not None:
                yield a, b, ttc


def update_conflicts(world: World, monitor: ConflictMonitor) -> None:
    """Sample all rear-end and crossing TTCs after a step and update events."""
    t = world.clock
    L = world.config.vehicle_length
    present = set()
    for lane in world.network.lanes.values():
        vs = lane.vehicles
        for v in vs:
            present.add(v.id)
        for lead, foll in zip(vs, vs[1:]):
            if foll.speed <= lead.speed:
                continue
            ttc = ttc_rear_end(-lead.pos, lead.speed, L, -foll.pos, foll.speed)
            monitor.observe(t, ConflictKind.REAR_END, lead, foll, ttc)
    for a, b, ttc in crossing_pairs(world):
        monitor.observe(t, ConflictKind.CROSSING, a, b, ttc)
    monitor.close_stale(t, present)
