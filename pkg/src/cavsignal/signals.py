"""Signal plant, fixed-time plan, state encoding and reward.

The controller picks one of four green phases at each decision epoch. Keeping
the current phase extends green by one increment; switching inserts a yellow
interval on the losing movements first.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .network import Approach, Movement

GREEN_INCREMENT = 10.0
YELLOW_TIME = 4.0


class SignalContractError(RuntimeError):
    """The signal state machine was driven outside a decision epoch."""


class Phase(enum.IntEnum):
    NSA = 0
    NSLA = 1
    EWA = 2
    EWLA = 3


class Color(enum.Enum):
    GREEN = "G"
    YELLOW = "y"
    RED = "r"


class Interval(enum.Enum):
    GREEN = "green"
    YELLOW = "yellow"


# movement group = (approach, left-turn group?)
GROUPS: tuple[tuple[Approach, bool], ...] = tuple((a, left) for a in Approach for left in (True, False))

PHASE_GROUPS: dict[Phase, frozenset] = {
    Phase.NSA: frozenset({(Approach.N, False), (Approach.S, False)}),
    Phase.NSLA: frozenset({(Approach.N, True), (Approach.S, True)}),
    Phase.EWA: frozenset({(Approach.E, False), (Approach.W, False)}),
    Phase.EWLA: frozenset({(Approach.E, True), (Approach.W, True)}),
}


def group_of(approach: Approach, movement: Movement) -> tuple[Approach, bool]:
    return (approach, movement is Movement.LEFT)


@dataclass(frozen=True)
class SignalState:
    phase: Phase
    interval: Interval = Interval.GREEN
    timer: float = GREEN_INCREMENT
    # phase that follows a yellow interval
    next_phase: Optional[Phase] = None

    def group_color(self, group: tuple[Approach, bool]) -> Color:
        if group in PHASE_GROUPS[self.phase]:
            return Color.GREEN if self.interval is Interval.GREEN else Color.YELLOW
        return Color.RED

    def color(self, approach: Approach, movement: Movement) -> Color:
        return self.group_color(group_of(approach, movement))

    def colors(self) -> dict:
        return {g: self.group_color(g) for g in GROUPS}

    @property
    def at_decision_epoch(self) -> bool:
        return self.interval is Interval.GREEN and self.timer <= 1e-9


def advance_signal(state: SignalState, chosen: Phase) -> list[SignalState]:
    """Intervals that follow a decision taken in ``state``.

    Same phase: one further green increment. Different phase: a yellow on the
    current phase's movements, then a green increment for ``chosen``.
    """
    if not state.at_decision_epoch:
        raise SignalContractError(
            f"decision requested with {state.timer:g} s left in a {state.interval.value} interval"
        )
    chosen = Phase(chosen)
    if chosen == state.phase:
        return [SignalState(chosen, Interval.GREEN, GREEN_INCREMENT)]
    return [
        SignalState(state.phase, Interval.YELLOW, YELLOW_TIME, next_phase=chosen),
        SignalState(chosen, Interval.GREEN, GREEN_INCREMENT),
    ]


class SignalController:
    """Runtime holder of the current interval and the queued ones."""

    def __init__(self, initial: SignalState = SignalState(Phase.NSA)):
        self.state = initial
        self._queue: list[SignalState] = []

    @property
    def at_decision_epoch(self) -> bool:
        return not self._queue and self.state.at_decision_epoch

    def decide(self, chosen: Phase) -> None:
        timeline = advance_signal(self.state, chosen)
        self.state, self._queue = timeline[0], timeline[1:]

    def tick(self, dt: float) -> None:
        remaining = self.state.timer - dt
        if remaining > 1e-9:
            self.state = SignalState(self.state.phase, self.state.interval, remaining, self.state.next_phase)
        elif self._queue:
            self.state = self._queue.pop(0)
        else:
            self.state = SignalState(self.state.phase, self.state.interval, 0.0, self.state.next_phase)


# --- fixed-time plan ----------------------------------------------------------

@dataclass(frozen=True)
class FixedTimePlan:
    greens: tuple[tuple[Phase, float], ...] = (
        (Phase.NSA, 25.0),
        (Phase.NSLA, 12.0),
        (Phase.EWA, 25.0),
        (Phase.EWLA, 12.0),
    )
    yellow: float = YELLOW_TIME

    @property
    def cycle(self) -> float:
        return sum(g for _, g in self.greens) + self.yellow * len(self.greens)


DEFAULT_PLAN = FixedTimePlan()


def fixed_time_next(clock: float, plan: FixedTimePlan = DEFAULT_PLAN) -> SignalState:
    """Signal state of the cyclic plan at ``clock``; periodic in the cycle length."""
    if clock < 0:
        raise ValueError("clock must be non-negative")
    t = clock % plan.cycle
    for i, (phase, green) in enumerate(plan.greens):
        if t < green:
            return SignalState(phase, Interval.GREEN, green - t)
        t -= green
        if t < plan.yellow:
            nxt = plan.greens[(i + 1) % len(plan.greens)][0]
            return SignalState(phase, Interval.YELLOW, plan.yellow - t, next_phase=nxt)
        t -= plan.yellow
    raise AssertionError("unreachable: clock reduced modulo the cycle")


# --- state encoding -------------------------------------------------------------

DEFAULT_CELLS = (7.0, 14.0, 21.0, 28.0, 40.0, 60.0, 100.0, 160.0, 400.0, 750.0)


class DtseEncoder:
    """Binary occupancy cells per approach and lane group.

    Output layout: approach (N, E, S, W) x group (left lane, through lanes)
    x cell (nearest the stop line first). Cell ``k`` covers distances
    ``[bounds[k-1], bounds[k])``; the last cell is closed on the right.
    """

    def __init__(self, boundaries: Sequence[float] = DEFAULT_CELLS):
        b = np.asarray(boundaries, dtype=float)
        if b.ndim != 1 or len(b) == 0 or np.any(np.diff(b) <= 0) or b[0] <= 0:
            raise ValueError("cell boundaries must be positive and strictly increasing")
        self.boundaries = b
        self.n_cells = len(b)
        self.size = 4 * 2 * self.n_cells

    def index(self, approach: Approach, left_group: bool, distance: float) -> Optional[int]:
        if distance < 0 or distance > self.boundaries[-1]:
            return None
        cell = int(np.searchsorted(self.boundaries, distance, side="right"))
        cell = min(cell, self.n_cells - 1)
        return (int(approach) * 2 + (0 if left_group else 1)) * self.n_cells + cell

    def encode(self, world) -> np.ndarray:
        obs = np.zeros(self.size, dtype=np.float64)
        for lane in world.network.lanes.values():
            left = lane.index == 0
            for veh in lane.vehicles:
                if veh.pos < 0:
                    continue
                i = self.index(lane.approach, left, veh.pos)
                if i is not None:
                    obs[i] = 1.0
        return obs


def encode_state(world, encoder: Optional[DtseEncoder] = None) -> np.ndarray:
    return (encoder or DtseEncoder()).encode(world)


# --- reward -------------------------------------------------------------------------

@dataclass
class RewardAccumulator:
    previous: float = 0.0
    current: float = 0.0

    def __post_init__(self):
        if self.previous < 0 or self.current < 0:
            raise ValueError("accumulated waiting times are non-negative")

    def push(self, atwt: float) -> None:
        self.previous, self.current = self.current, atwt


def compute_reward(acc: RewardAccumulator) -> float:
    """Drop in accumulated total waiting time since the previous epoch."""
    return acc.previous - acc.current


# --- export ----------------------------------------------------------------------------

def timeline_header() -> list[str]:
    return ["time", "phase", "interval"] + [f"{a.name}_{'L' if left else 'T'}" for a, left in GROUPS]


def write_timeline_csv(path, records: Iterable[tuple[float, SignalState]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(timeline_header())
        for t, s in records:
            w.writerow([repr(float(t)), s.phase.name, s.interval.value] + [s.group_color(g).value for g in GROUPS])
