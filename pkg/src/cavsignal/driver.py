"""Longitudinal driver models.

Human-driven vehicles follow the Krauss safe-speed model with a random
dawdling term. Connected automated vehicles follow a four-mode cooperative
adaptive cruise controller (speed control, gap control, gap closing and
collision avoidance).

All functions here are pure: they take value inputs and return speeds.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class KraussParams:
    t_r: float = 1.0
    b: float = 4.5
    accel: float = 2.6
    v_max: float = 13.89
    sigma: float = 0.5
    min_gap: float = 1.5
    time_headway: float = 1.0

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError(f"b must be positive, got {self.b}")
        if self.t_r <= 0:
            raise ValueError(f"t_r must be positive, got {self.t_r}")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in [0, 1], got {self.sigma}")


@dataclass(frozen=True)
class CaccParams:
    """Gains and set points of the cooperative adaptive cruise controller.

    Gains are per controller update. ``control_period`` is the length of one
    update; the simulator runs ``dt / control_period`` updates per step.
    """

    k4: float = 0.4
    gap_control: tuple[float, float] = (0.45, 0.0125)
    gap_closing: tuple[float, float] = (0.005, 0.05)
    collision_avoidance: tuple[float, float] = (0.45, 0.05)
    t_d: float = 0.5
    min_gap: float = 0.5
    v_d: float = 13.89
    v_max: float = 13.89
    accel: float = 2.6
    b: float = 4.5
    speed_mode_gap_threshold: float = 2.0
    gap_tolerance: float = 0.2
    speed_tolerance: float = 0.1
    collision_avoidance_error: float = -0.5
    # a gap-control vehicle keeps that mode while |spacing error| stays below this
    gap_hold: float = 1.0
    # closing-speed envelope towards slower or stopped obstacles
    comfort_decel: float = 2.25
    control_period: float = 0.1

    def __post_init__(self):
        gains = (self.k4, *self.gap_control, *self.gap_closing, *self.collision_avoidance)
        if any(g <= 0 for g in gains):
            raise ValueError("all controller gains must be positive")
        if self.t_d <= 0:
            raise ValueError(f"t_d must be positive, got {self.t_d}")
        if self.control_period <= 0:
            raise ValueError("control_period must be positive")


@dataclass(frozen=True)
class FollowInput:
    """Kinematic situation of one vehicle relative to its leader.

    ``gap`` is front bumper of the follower to rear bumper of the leader.
    ``v_leader`` of ``None`` means free road ahead.
    """

    v_self: float
    v_leader: Optional[float] = None
    gap: float = math.inf
    a_self: float = 0.0
    dt: float = 1.0


class CaccMode(enum.Enum):
    SPEED_CONTROL = "speed_control"
    GAP_CONTROL = "gap_control"
    GAP_CLOSING = "gap_closing"
    COLLISION_AVOIDANCE = "collision_avoidance"


# --- Krauss -----------------------------------------------------------------

def krauss_safe_speed(inp: FollowInput, p: KraussParams) -> float:
    """Krauss safe speed for the follower given its leader.

    Returns ``v_l + (g - v_l t_r) / ((v_l + v_f) / (2 b) + t_r)``. The value
    can be negative when the gap is already too small; callers clamp.
    """
    if inp.v_leader is None:
        raise ValueError("krauss_safe_speed needs a leader")
    v_l, v_f = inp.v_leader, inp.v_self
    return v_l + (inp.gap - v_l * p.t_r) / ((v_l + v_f) / (2.0 * p.b) + p.t_r)


def krauss_desired_speed(inp: FollowInput, p: KraussParams) -> float:
    """Deterministic part of the Krauss update (no dawdling).

    The safe speed is evaluated against the leader's worst-case state one step
    ahead (leader braking at ``b``), with the gap reduced by ``min_gap``. This
    keeps the follower collision free under Euler position updates.
    """
    v_des = min(p.v_max, inp.v_self + p.accel * inp.dt)
    if inp.v_leader is not None:
        v_lead_next = max(0.0, inp.v_leader - p.b * inp.dt)
        gap_next = inp.gap + v_lead_next * inp.dt - p.min_gap
        v_safe = krauss_safe_speed(
            FollowInput(v_self=inp.v_self, v_leader=v_lead_next, gap=gap_next, dt=inp.dt), p
        )
        v_des = min(v_des, v_safe)
    return v_des


def krauss_dawdle(v_des: float, v_self: float, p: KraussParams, u: float, dt: float) -> float:
    """Apply the imperfection draw ``u`` in [0, 1) to a desired speed.

    Dawdling never pushes deceleration beyond ``b`` on its own; only the safe
    speed may demand harder braking.
    """
    v = v_des - p.sigma * p.accel * dt * u
    v = max(v, min(v_des, v_self - p.b * dt))
    return max(0.0, v)


def krauss_next_speed(inp: FollowInput, p: KraussParams, rng: np.random.Generator) -> float:
    """One Krauss step including driver imperfection.

    The dawdling draw is uniform on ``[v_des - eps, v_des]`` with
    ``eps = sigma * accel * dt``.
    """
    return krauss_dawdle(krauss_desired_speed(inp, p), inp.v_self, p, rng.random(), inp.dt)


def krauss_obstacle_speed(v_self: float, v_obstacle: float, gap: float, p: KraussParams, dt: float) -> float:
    """Float-only form of the leader term of :func:`krauss_desired_speed`."""
    v_lead_next = v_obstacle - p.b * dt
    if v_lead_next < 0.0:
        v_lead_next = 0.0
    g = gap + v_lead_next * dt - p.min_gap
    return v_lead_next + (g - v_lead_next * p.t_r) / ((v_lead_next + v_self) / (2.0 * p.b) + p.t_r)


# --- CACC -------------------------------------------------------------------

def spacing_error(inp: FollowInput, p: CaccParams) -> float:
    """Gap error in meters: gap minus standstill gap minus desired time gap."""
    return inp.gap - p.min_gap - p.t_d * inp.v_self


def spacing_error_rate(inp: FollowInput, p: CaccParams) -> float:
    return inp.v_leader - inp.v_self - p.t_d * inp.a_self


def select_mode(v: float, v_leader: Optional[float], gap: float, p: CaccParams,
                prev: Optional[CaccMode]) -> CaccMode:
    if v_leader is None or gap / max(v, 0.1) > p.speed_mode_gap_threshold:
        return CaccMode.SPEED_CONTROL
    e = gap - p.min_gap - p.t_d * v
    if prev is CaccMode.GAP_CONTROL and abs(e) < p.gap_hold:
        return CaccMode.GAP_CONTROL
    if abs(e) < p.gap_tolerance and abs(v_leader - v) < p.speed_tolerance:
        return CaccMode.GAP_CONTROL
    if e < p.collision_avoidance_error:
        return CaccMode.COLLISION_AVOIDANCE
    return CaccMode.GAP_CLOSING


def cacc_select_mode(
    inp: FollowInput, p: CaccParams, prev: Optional[CaccMode] = None
) -> CaccMode:
    """Pick the active controller mode.

    Total over valid inputs. A vehicle already in gap control keeps it while
    the spacing error stays within ``gap_hold``; otherwise the entry rules
    apply in order: speed control, gap control, collision avoidance, gap
    closing.
    """
    return select_mode(inp.v_self, inp.v_leader, inp.gap, p, prev)


def controller_speed(v: float, v_leader: Optional[float], gap: float, a: float, h: float,
                     p: CaccParams, mode: CaccMode) -> float:
    if mode is CaccMode.SPEED_CONTROL:
        v_new = v + p.k4 * (p.v_d - v) * h
    else:
        if v_leader is None:
            raise ValueError(f"{mode.value} needs a leader")
        if mode is CaccMode.GAP_CONTROL:
            k5, k6 = p.gap_control
        elif mode is CaccMode.GAP_CLOSING:
            k5, k6 = p.gap_closing
        else:
            k5, k6 = p.collision_avoidance
        e = gap - p.min_gap - p.t_d * v
        e_rate = v_leader - v - p.t_d * a
        v_new = v + k5 * e + k6 * e_rate
    hi = min(v + p.accel * h, p.v_max)
    if v_new > hi:
        v_new = hi
    lo = max(v - p.b * h, 0.0)
    if v_new < lo:
        v_new = lo
    return v_new


def cacc_next_speed(inp: FollowInput, p: CaccParams, mode: CaccMode) -> float:
    """One controller update of length ``inp.dt``.

    Speed control integrates ``k4 (v_d - v)`` over ``dt``. The other modes
    apply ``v + k5 e + k6 e'`` with mode-specific gains. The result is clamped
    to ``[0, v_max]`` and to ``[v - b dt, v + accel dt]``.
    """
    return controller_speed(inp.v_self, inp.v_leader, inp.gap, inp.a_self, inp.dt, p, mode)


def cav_speed_envelope(gap: float, v_leader: float, h: float, p: CaccParams) -> float:
    """Upper speed bound applied to a CAV after its controller update.

    Two limits over one control period ``h`` with the leader at constant
    ``v_leader``:

    * closing speed after the move stays below ``sqrt(2 d_c (gap' - min_gap))``
      (comfortable deceleration ``d_c``), so approaches to queues and stop
      lines are smooth;
    * the follower can still stop behind the leader if both brake at ``b``.
    """
    free = max(0.0, gap - p.min_gap)
    dc = p.comfort_decel
    # closing speed c solves c^2 = 2 dc (free - c h)
    closing = -dc * h + math.sqrt((dc * h) ** 2 + 2.0 * dc * free)
    v_close = v_leader + closing
    # v h + v^2 / 2b <= free + v_leader h + v_leader^2 / 2b
    budget = free + v_leader * h + v_leader**2 / (2.0 * p.b)
    bh = p.b * h
    v_stop = -bh + math.sqrt(bh * bh + 2.0 * p.b * budget)
    return max(0.0, min(v_close, v_stop))
