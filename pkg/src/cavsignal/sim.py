"""Vehicle population, arrivals and the per-step update loop.

Each entry lane is a one-dimensional line that continues through the junction
box along the vehicle's movement path. ``pos`` is the distance of a vehicle's
front bumper to the stop line; it turns negative inside the box and the
vehicle leaves the network once ``pos <= -path_length``.

Human drivers update synchronously from the start-of-step state of their
leader. Automated vehicles run their controller ``dt / control_period`` times
per step against the leader's actual within-step speed profile.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .driver import (
    CaccMode,
    CaccParams,
    KraussParams,
    cav_speed_envelope,
    controller_speed,
    krauss_dawdle,
    krauss_obstacle_speed,
    select_mode,
)
from .network import (
    OD_PAIRS,
    Approach,
    Lane,
    Movement,
    Network,
    WorldConfig,
    build_network,
    movement_between,
)
from .signals import Color, SignalState

STOP_SPEED = 0.1
# a CAV keeps clear of a conflicting vehicle's shared area by this many seconds
YIELD_MARGIN = 1.0
YIELD_LOOKAHEAD = 100.0


class InvariantViolation(RuntimeError):
    """Internal state became inconsistent (e.g. two vehicles overlap)."""


class VehicleKind(enum.Enum):
    HDV = "HDV"
    CAV = "CAV"


class TravelPhase(enum.Enum):
    APPROACHING = "approaching"
    CROSSING = "crossing"
    DEPARTED = "departed"


@dataclass(frozen=True)
class ArrivalEvent:
    time: float
    od: tuple[Approach, Approach]
    kind: VehicleKind

    @property
    def movement(self) -> Movement:
        return movement_between(*self.od)


class Vehicle:
    __slots__ = (
        "id", "kind", "entry", "movement", "lane", "pos", "speed", "accel",
        "spawn_time", "awt", "phase_of_travel", "committed", "mode",
        "stopping", "yielding", "path_length",
    )

    def __init__(self, vid: int, kind: VehicleKind, entry: Approach, movement: Movement,
                 lane: Lane, pos: float, speed: float, spawn_time: float, path_length: float):
        self.id = vid
        self.kind = kind
        self.entry = entry
        self.movement = movement
        self.lane = lane
        self.pos = pos
        self.speed = speed
        self.accel = 0.0
        self.spawn_time = spawn_time
        self.awt = 0.0
        self.phase_of_travel = TravelPhase.APPROACHING
        # passed the point of no return on yellow
        self.committed = False
        self.mode: Optional[CaccMode] = None
        # held at the stop line this step (signal or yield)
        self.stopping = False
        self.yielding = False
        self.path_length = path_length

    @property
    def route(self) -> tuple[Approach, Movement]:
        return (self.entry, self.movement)

    @property
    def is_cav(self) -> bool:
        return self.kind is VehicleKind.CAV

    def __repr__(self):
        return (f"Vehicle({self.id}, {self.kind.value}, {self.entry.name}-{self.movement.value}, "
                f"pos={self.pos:.2f}, v={self.speed:.2f})")


@dataclass(frozen=True)
class TravelRecord:
    id: int
    kind: VehicleKind
    spawn_time: float
    depart_time: float
    awt: float

    @property
    def travel_time(self) -> float:
        return self.depart_time - self.spawn_time


def generate_arrivals(config: WorldConfig, seed: Optional[int] = None) -> list[ArrivalEvent]:
    """Bernoulli arrivals per second and OD pair, sorted by time.

    Each of the 12 OD pairs spawns with probability
    ``expected_vehicles / (duration * 12)`` in every whole second; the vehicle
    is a CAV with probability ``cav_penetration``.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    seconds = int(math.ceil(config.duration))
    p = config.expected_vehicles / (config.duration * len(OD_PAIRS))
    if p > 1.0:
        raise ValueError(f"demand of {p:.3f} vehicles per second and OD pair exceeds one")
    spawn = rng.random((seconds, len(OD_PAIRS))) < p
    t_idx, od_idx = np.nonzero(spawn)  # row-major: sorted by time, then OD index
    cav = rng.random(len(t_idx)) < config.cav_penetration
    return [
        ArrivalEvent(float(t), OD_PAIRS[o], VehicleKind.CAV if c else VehicleKind.HDV)
        for t, o, c in zip(t_idx, od_idx, cav)
    ]


def _time_to_cover(distance: float, v: float, accel: float) -> float:
    """Shortest time to travel ``distance`` from speed ``v`` at constant ``accel``."""
    if distance <= 0:
        return 0.0
    return (-v + math.sqrt(v * v + 2.0 * accel * distance)) / accel


class World:
    """Mutable simulation state of one scenario.

    Parameters
    ----------
    config : WorldConfig
    arrivals : sequence of ArrivalEvent, optional
        Defaults to :func:`generate_arrivals` with ``config.seed``.
    """

    def __init__(self, config: WorldConfig, arrivals: Optional[Sequence[ArrivalEvent]] = None):
        self.config = config
        self.network: Network = build_network(config)
        self.arrivals = list(generate_arrivals(config) if arrivals is None else arrivals)
        self._next_arrival = 0
        seq = np.random.SeedSequence(config.seed)
        lane_seq, noise_seq = seq.spawn(2)
        self._lane_rng = np.random.default_rng(lane_seq)
        self._noise_rng = np.random.default_rng(noise_seq)
        self.clock = 0.0
        self.step_count = 0
        self.pending: dict = {key: deque() for key in self.network.lanes}
        self.departed: list[TravelRecord] = []
        self.spawned = 0
        self.cumulative_delay = 0.0
        self._next_id = 0
        c = config
        self.krauss = KraussParams(
            t_r=c.dt, b=c.decel, accel=c.accel, v_max=c.speed_limit, sigma=c.sigma,
            min_gap=c.hdv_min_gap, time_headway=c.hdv_time_headway,
        )
        self.cacc = CaccParams(
            t_d=c.cav_time_headway, min_gap=c.cav_min_gap, v_d=c.speed_limit,
            v_max=c.speed_limit, accel=c.accel, b=c.decel,
        )
        n_sub = c.dt / self.cacc.control_period
        self._substeps = max(1, int(round(n_sub)))

    # --- queries -------------------------------------------------------------

    def vehicles(self):
        for lane in self.network.lanes.values():
            yield from lane.vehicles

    @property
    def in_network(self) -> int:
        return sum(len(l.vehicles) for l in self.network.lanes.values())

    @property
    def waiting_to_enter(self) -> int:
        return sum(len(q) for q in self.pending.values())

    # --- update ---------------------------------------------------------------

    def _queue_arrivals(self) -> None:
        horizon = self.clock + self.config.dt - 1e-9
        while self._next_arrival < len(self.arrivals) and self.arrivals[self._next_arrival].time < horizon:
            ev = self.arrivals[self._next_arrival]
            self._next_arrival += 1
            entry, movement = ev.od[0], ev.movement
            lanes = self.network.lanes_for(entry, movement)
            lane = lanes[int(self._lane_rng.integers(len(lanes)))]
            self.pending[lane.key].append((self._next_id, ev.kind, movement))
            self._next_id += 1

    def _insert(self) -> None:
        c = self.config
        for key, queue in self.pending.items():
            if not queue:
                continue
            lane = self.network.lanes[key]
            vid, kind, movement = queue[0]
            v_ins = c.speed_limit
            if lane.vehicles:
                back = lane.vehicles[-1]
                gap = c.approach_length - back.pos - c.vehicle_length
                if kind is VehicleKind.CAV:
                    if gap < self.cacc.min_gap:
                        continue
                    v_ins = min(v_ins, cav_speed_envelope(gap, back.speed, c.dt, self.cacc))
                else:
                    if gap < self.krauss.min_gap:
                        continue
                    v_ins = min(v_ins, krauss_obstacle_speed(c.speed_limit, back.speed, gap, self.krauss, c.dt))
                v_ins = max(0.0, v_ins)
            queue.popleft()
            veh = Vehicle(vid, kind, key[0], movement, lane, c.approach_length, v_ins, self.clock,
                          c.box_path_length[movement])
            lane.vehicles.append(veh)
            self.spawned += 1

    def _must_stop(self, veh: Vehicle, color: Color) -> bool:
        if veh.phase_of_travel is not TravelPhase.APPROACHING or veh.committed:
            return False
        if color is Color.GREEN:
            return False
        if color is Color.RED:
            return True
        # yellow: stop unless that needs more than the maximum deceleration
        dt = self.config.dt
        if veh.is_cav:
            can_stop = veh.pos - self.cacc.min_gap >= veh.speed * veh.speed / (2.0 * self.cacc.b)
        else:
            v_stop = krauss_obstacle_speed(veh.speed, 0.0, veh.pos, self.krauss, dt)
            can_stop = v_stop >= veh.speed - self.krauss.b * dt - 1e-9
        if not can_stop:
            veh.committed = True
        return can_stop

    def _box_users(self) -> list[Vehicle]:
        """Vehicles inside the box or committed to entering it."""
        out = []
        for lane in self.network.lanes.values():
            for veh in lane.vehicles:
                if veh.phase_of_travel is TravelPhase.CROSSING or veh.committed:
                    out.append(veh)
                elif veh.pos > YIELD_LOOKAHEAD:
                    break
        return out

    def _must_yield(self, veh: Vehicle, users: list[Vehicle]) -> bool:
        """A CAV on green holds at the stop line while a conflicting vehicle
        will still occupy the shared area when it could arrive there."""
        p = self.cacc
        if veh.pos > YIELD_LOOKAHEAD or veh.pos - p.min_gap < veh.speed * veh.speed / (2.0 * p.b):
            return False
        L = self.config.vehicle_length
        for other in users:
            area = self.network.conflicts.get((veh.route, other.route))
            if area is None:
                continue
            remaining = area.entry_b + area.length_b + L + other.pos
            if remaining <= 0:
                continue
            t_clear = remaining / other.speed if other.speed >= STOP_SPEED else math.inf
            t_arrive = _time_to_cover(veh.pos + area.entry_a, veh.speed, p.accel)
            if t_clear + YIELD_MARGIN > t_arrive:
                return True
        return False

    def _hdv_speed(self, veh: Vehicle, leader: Optional[Vehicle], stop: bool) -> float:
        p, dt, L = self.krauss, self.config.dt, self.config.vehicle_length
        v = veh.speed
        v_des = min(p.v_max, v + p.accel * dt)
        if leader is not None:
            gap = veh.pos - leader.pos - L
            v_des = min(v_des, krauss_obstacle_speed(v, leader.speed, gap, p, dt))
        if stop:
            v_des = min(v_des, krauss_obstacle_speed(v, 0.0, veh.pos, p, dt))
        return krauss_dawdle(v_des, v, p, self._noise_rng.random(), dt)

    def _cav_profile(self, veh: Vehicle, leader: Optional[Vehicle], lead_profile, stop: bool) -> list[float]:
        p, L = self.cacc, self.config.vehicle_length
        n = self._substeps
        h = self.config.dt / n
        v, a, pos, mode = veh.speed, veh.accel, veh.pos, veh.mode
        lead_pos = leader.pos if leader is not None else math.inf
        profile = []
        for k in range(n):
            gap_l = pos - lead_pos - L if leader is not None else math.inf
            v_l = lead_profile[k] if leader is not None else None
            # the controller follows whichever obstacle is nearer
            if stop and pos < gap_l:
                ctl_gap, ctl_v = pos, 0.0
            else:
                ctl_gap, ctl_v = gap_l, v_l
            mode = select_mode(v, ctl_v, ctl_gap, p, mode)
            v_new = controller_speed(v, ctl_v, ctl_gap, a, h, p, mode)
            if leader is not None:
                v_new = min(v_new, cav_speed_envelope(gap_l, v_l, h, p))
            if stop:
                v_new = min(v_new, cav_speed_envelope(pos, 0.0, h, p))
            a = (v_new - v) / h
            v = v_new
            pos -= v * h
            if leader is not None:
                lead_pos -= v_l * h
            profile.append(v)
        veh.mode = mode
        return profile

    def step(self, signal: SignalState) -> None:
        """Advance the world by one ``dt`` under the given signal state."""
        c = self.config
        dt = c.dt
        self._queue_arrivals()
        self._insert()
        users = self._box_users() if any(v.is_cav for v in self.vehicles()) else []
        for lane in self.network.lanes.values():
            vehicles = lane.vehicles
            if not vehicles:
                continue
            color = signal.color(lane.approach, Movement.LEFT if lane.index == 0 else Movement.STRAIGHT)
            profiles = []
            for i, veh in enumerate(vehicles):
                leader = vehicles[i - 1] if i > 0 else None
                stop = self._must_stop(veh, color)
                veh.yielding = False
                if (not stop and veh.is_cav and users and veh.phase_of_travel is TravelPhase.APPROACHING
                        and not veh.committed):
                    stop = veh.yielding = self._must_yield(veh, users)
                veh.stopping = stop
                if veh.is_cav:
                    lead_profile = profiles[i - 1] if leader is not None else None
                    profiles.append(self._cav_profile(veh, leader, lead_profile, stop))
                else:
                    v_new = self._hdv_speed(veh, leader, stop)
                    profiles.append([v_new] * self._substeps)
            h = dt / self._substeps
            for veh, profile in zip(vehicles, profiles):
                v_new = profile[-1]
                if veh.is_cav:
                    veh.pos -= math.fsum(profile) * h
                    veh.accel = (v_new - profile[-2]) / h if len(profile) > 1 else (v_new - veh.speed) / dt
                else:
                    veh.pos -= v_new * dt
                    veh.accel = (v_new - veh.speed) / dt
                veh.speed = v_new
                if veh.phase_of_travel is TravelPhase.APPROACHING and veh.pos < 0:
                    veh.phase_of_travel = TravelPhase.CROSSING
                if v_new < STOP_SPEED:
                    veh.awt += dt
                    self.cumulative_delay += dt
        self.clock = (self.step_count + 1) * dt
        self.step_count += 1
        self._depart()
        self._check_overlap()

    def _depart(self) -> None:
        for lane in self.network.lanes.values():
            vehicles = lane.vehicles
            while vehicles and vehicles[0].pos <= -vehicles[0].path_length:
                veh = vehicles.pop(0)
                veh.phase_of_travel = TravelPhase.DEPARTED
                self.departed.append(TravelRecord(veh.id, veh.kind, veh.spawn_time, self.clock, veh.awt))

    def _check_overlap(self) -> None:
        L = self.config.vehicle_length
        for lane in self.network.lanes.values():
            vs = lane.vehicles
            for lead, foll in zip(vs, vs[1:]):
                if foll.pos - lead.pos - L < -1e-6:
                    raise InvariantViolation(
                        f"t={self.clock:g}: vehicles {lead.id} and {foll.id} overlap in lane "
                        f"{lane.approach.name}{lane.index} (gap {foll.pos - lead.pos - L:.3f} m)"
                    )


def step(world: World, signal: SignalState, dt: Optional[float] = None) -> World:
    """Advance ``world`` in place by one step and return it."""
    if dt is not None and abs(dt - world.config.dt) > 1e-12:
        raise ValueError(f"step dt {dt} differs from the configured dt {world.config.dt}")
    world.step(signal)
    return world


def accumulated_total_waiting(world: World, t: Optional[float] = None) -> float:
    """Sum of accumulated waiting time over vehicles currently in the network."""
    if t is not None and abs(t - world.clock) > 1e-9:
        raise ValueError(f"requested t={t} but the world clock is {world.clock}")
    return math.fsum(v.awt for v in world.vehicles())


def snapshot(world: World) -> str:
    """One line per vehicle: id, kind, lane, pos, speed."""
    lines = [
        f"{v.id} {v.kind.value} {v.lane.approach.name}{v.lane.index} {v.pos!r} {v.speed!r}"
        for v in world.vehicles()
    ]
    return "\n".join(lines) + ("\n" if lines else "")
