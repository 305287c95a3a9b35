"""Static description of the four-way intersection.

Approaches carry four entry lanes each: lane 0 (leftmost) is left-turn only,
lanes 1-2 are through only and lane 3 is shared through/right. Movement paths
through the junction box are one-dimensional; their crossings are computed
once from a planar layout and stored as :class:`ConflictArea` records.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from shapely.geometry import LineString, Point
from shapely.ops import unary_union


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class Approach(enum.IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


class Movement(enum.Enum):
    LEFT = "left"
    STRAIGHT = "straight"
    RIGHT = "right"


# approaches are numbered clockwise; right-hand traffic, so a left turn from N
# leaves towards E and a right turn towards W
def exit_of(entry: Approach, movement: Movement) -> Approach:
    if movement is Movement.STRAIGHT:
        return Approach((entry + 2) % 4)
    if movement is Movement.LEFT:
        return Approach((entry + 1) % 4)
    return Approach((entry + 3) % 4)


def movement_between(entry: Approach, exit: Approach) -> Movement:
    for m in Movement:
        if exit_of(entry, m) == exit:
            return m
    raise ConfigError(f"no movement from {entry.name} to {exit.name} (U-turns are not modelled)")


OD_PAIRS: tuple[tuple[Approach, Approach], ...] = tuple(
    (a, b) for a in Approach for b in Approach if a != b
)


@dataclass(frozen=True)
class WorldConfig:
    approach_length: float = 750.0
    lanes_per_approach: int = 4
    speed_limit: float = 13.89
    dt: float = 1.0
    duration: float = 5400.0
    expected_vehicles: float = 1200.0
    cav_penetration: float = 0.0
    seed: int = 0
    vehicle_length: float = 5.0
    box_path_length: dict = field(
        default_factory=lambda: {Movement.STRAIGHT: 24.0, Movement.LEFT: 30.0, Movement.RIGHT: 12.0}
    )
    accel: float = 2.6
    decel: float = 4.5
    sigma: float = 0.5
    hdv_min_gap: float = 1.5
    cav_min_gap: float = 0.5
    hdv_time_headway: float = 1.0
    cav_time_headway: float = 0.5
    # DTSE coverage must fit on the approach
    dtse_coverage: float = 750.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        steps = self.duration / self.dt
        if self.duration <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ConfigError(f"duration {self.duration} is not a positive multiple of dt {self.dt}")
        if not 0.0 <= self.cav_penetration <= 1.0:
            raise ConfigError(f"cav_penetration must lie in [0, 1], got {self.cav_penetration}")
        if self.lanes_per_approach != 4:
            raise ConfigError("only four lanes per approach are modelled")
        if self.approach_length < self.dtse_coverage:
            raise ConfigError(
                f"approach_length {self.approach_length} is shorter than the state-encoding "
                f"coverage {self.dtse_coverage}"
            )
        if self.expected_vehicles < 0:
            raise ConfigError("expected_vehicles must be non-negative")
        if self.speed_limit <= 0 or self.vehicle_length <= 0:
            raise ConfigError("speed_limit and vehicle_length must be positive")
        if any(v <= 0 for v in self.box_path_length.values()):
            raise ConfigError("box path lengths must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def lane_movements(index: int) -> frozenset[Movement]:
    if index == 0:
        return frozenset({Movement.LEFT})
    if index in (1, 2):
        return frozenset({Movement.STRAIGHT})
    return frozenset({Movement.STRAIGHT, Movement.RIGHT})


@dataclass(eq=False)
class Lane:
    approach: Approach
    index: int
    allowed_movements: frozenset
    # front-to-back: ascending distance to the stop line
    vehicles: list = field(default_factory=list)

    @property
    def key(self) -> tuple[Approach, int]:
        return (self.approach, self.index)

    def __repr__(self):
        return f"Lane({self.approach.name}{self.index}, {len(self.vehicles)} veh)"


# --- conflict geometry ------------------------------------------------------

@dataclass(frozen=True)
class ConflictArea:
    """Shared area of two crossing movement paths.

    ``entry_a``/``entry_b`` are distances from each path's start (the stop
    line) to the first point of the shared area; ``length_a``/``length_b`` the
    extent of the area along each path.
    """

    entry_a: float
    entry_b: float
    length_a: float
    length_b: float

    def swapped(self) -> "ConflictArea":
        return ConflictArea(self.entry_b, self.entry_a, self.length_b, self.length_a)


MovementKey = tuple[Approach, Movement]

LANE_WIDTH = 3.2
_HALF = 4 * LANE_WIDTH


def _rotate_cw(xy: np.ndarray, quarter_turns: int) -> np.ndarray:
    out = np.array(xy, dtype=float)
    for _ in range(quarter_turns):
        out = np.column_stack([out[:, 1], -out[:, 0]])
    return out


def _north_path(movement: Movement) -> np.ndarray:
    """Centre line of a movement entering from the north, in box coordinates."""
    if movement is Movement.STRAIGHT:
        x = -2.5 * LANE_WIDTH  # middle of the three through lanes
        return np.array([[x, _HALF], [x, -_HALF]])
    if movement is Movement.LEFT:
        x0, y1 = -0.5 * LANE_WIDTH, -0.5 * LANE_WIDTH
        centre = np.array([_HALF, _HALF])
        r = _HALF - x0
        theta = np.linspace(math.pi, 1.5 * math.pi, 33)
        pts = centre + r * np.column_stack([np.cos(theta), np.sin(theta)])
        assert abs(pts[-1, 1] - y1) < 1e-6
        return pts
    x0 = -3.5 * LANE_WIDTH
    centre = np.array([-_HALF, _HALF])
    r = x0 - (-_HALF)
    theta = np.linspace(0.0, -0.5 * math.pi, 17)
    return centre + r * np.column_stack([np.cos(theta), np.sin(theta)])


def movement_path(entry: Approach, movement: Movement) -> LineString:
    return LineString(_rotate_cw(_north_path(movement), int(entry)))


def build_conflict_geometry(path_lengths: dict) -> dict[tuple[MovementKey, MovementKey], ConflictArea]:
    """Shared areas for every pair of movements from different approaches.

    Each path is widened to one lane width; where two widened paths overlap,
    the extent of the overlap is projected onto both centre lines and scaled
    to the configured path lengths.
    """
    keys = [(a, m) for a in Approach for m in Movement]
    paths = {k: movement_path(*k) for k in keys}
    areas = {k: p.buffer(LANE_WIDTH / 2, cap_style="flat") for k, p in paths.items()}
    geometry: dict = {}
    for i, ka in enumerate(keys):
        for kb in keys[i + 1:]:
            if ka[0] == kb[0]:
                continue
            shared = areas[ka].intersection(areas[kb])
            if shared.is_empty or shared.area < 1e-6:
                continue
            spans = []
            for k in (ka, kb):
                line = paths[k]
                covered = line.intersection(unary_union(shared))
                if covered.is_empty:
                    # overlap touches only the widened edge; take the nearest centre-line points
                    coords = np.asarray(shared.exterior.coords)
                    s = [line.project(Point(c)) for c in coords]
                else:
                    s = [line.project(Point(c)) for g in getattr(covered, "geoms", [covered]) for c in g.coords]
                scale = path_lengths[k[1]] / line.length
                spans.append((min(s) * scale, (max(s) - min(s)) * scale))
            area = ConflictArea(spans[0][0], spans[1][0], spans[0][1], spans[1][1])
            geometry[(ka, kb)] = area
            geometry[(kb, ka)] = area.swapped()
    return geometry


@dataclass
class Network:
    config: WorldConfig
    lanes: dict
    conflicts: dict

    def lanes_for(self, approach: Approach, movement: Movement) -> list[Lane]:
        return [l for (a, _), l in self.lanes.items() if a == approach and movement in l.allowed_movements]

    def conflict(self, a: MovementKey, b: MovementKey) -> Optional[ConflictArea]:
        return self.conflicts.get((a, b))


def build_network(config: WorldConfig) -> Network:
    lanes = {
        (a, i): Lane(a, i, lane_movements(i))
        for a in Approach
        for i in range(config.lanes_per_approach)
    }
    return Network(config, lanes, build_conflict_geometry(config.box_path_length))
