"""Episode drivers: the decision-epoch environment and the fixed-time baseline."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dqn import forward
from .network import WorldConfig
from .signals import (
    DEFAULT_PLAN,
    DtseEncoder,
    FixedTimePlan,
    Interval,
    Phase,
    RewardAccumulator,
    SignalController,
    SignalState,
    compute_reward,
    fixed_time_next,
)
from .sim import World, accumulated_total_waiting
from .ssm import ConflictMonitor, SsmEvent, SsmThresholds, update_conflicts


@dataclass
class EpisodeResult:
    controller: str
    seed: int
    cumulative_negative_reward: float
    cumulative_reward: float
    cumulative_delay: float
    events: list[SsmEvent]
    travel_times: list[float]
    spawned: int
    in_network: int
    rewards: list[float] = field(default_factory=list)
    timeline: list[tuple[float, SignalState]] = field(default_factory=list)

    @property
    def vehicles_completed(self) -> int:
        return len(self.travel_times)

    @property
    def mean_travel_time(self) -> float:
        return float(np.mean(self.travel_times)) if self.travel_times else math.nan

    def conflict_count(self, kind: Optional[str] = None) -> int:
        return sum(1 for e in self.events if kind is None or e.kind.value == kind)


class IntersectionEnv:
    """One intersection driven phase-by-phase at decision epochs.

    ``reset`` runs the initial 10 s NSA green and returns the first
    observation. ``step(action)`` applies the chosen phase, simulates until the
    next decision epoch (or the end of the episode) and returns
    ``(obs, reward, done, info)``. The reward is the drop in accumulated total
    waiting time since the previous epoch.
    """

    def __init__(self, config: WorldConfig, thresholds: SsmThresholds = SsmThresholds(),
                 encoder: Optional[DtseEncoder] = None, record_timeline: bool = False):
        self.config = config
        self.thresholds = thresholds
        self.encoder = encoder or DtseEncoder()
        self.record_timeline = record_timeline
        self.world: Optional[World] = None

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        cfg = self.config if seed is None else dataclasses.replace(self.config, seed=int(seed))
        self.world = World(cfg)
        self.monitor = ConflictMonitor(self.thresholds)
        self.signal = SignalController(SignalState(Phase.NSA))
        self.rewards: list[float] = []
        self.timeline: list[tuple[float, SignalState]] = []
        self.acc = RewardAccumulator()
        self._advance()
        self.acc.push(accumulated_total_waiting(self.world))
        return self.encoder.encode(self.world)

    @property
    def done(self) -> bool:
        return self.world.step_count >= self.world.config.n_steps

    def _advance(self) -> None:
        w = self.world
        while not self.done:
            if self.record_timeline:
                self.timeline.append((w.clock, self.signal.state))
            w.step(self.signal.state)
            update_conflicts(w, self.monitor)
            self.signal.tick(w.config.dt)
            if self.signal.at_decision_epoch:
                break

    def step(self, action: int):
        if self.world is None:
            raise RuntimeError("call reset() first")
        if self.done:
            raise RuntimeError("episode already finished")
        self.signal.decide(Phase(int(action)))
        self._advance()
        self.acc.push(accumulated_total_waiting(self.world))
        r = compute_reward(self.acc)
        self.rewards.append(r)
        return self.encoder.encode(self.world), r, self.done, {"clock": self.world.clock}

    def result(self, controller: str = "dqn") -> EpisodeResult:
        return _result(controller, self.world, self.monitor, self.rewards, self.timeline)


def _result(controller, world, monitor, rewards, timeline) -> EpisodeResult:
    return EpisodeResult(
        controller=controller,
        seed=world.config.seed,
        cumulative_negative_reward=math.fsum(min(r, 0.0) for r in rewards),
        cumulative_reward=math.fsum(rewards),
        cumulative_delay=world.cumulative_delay,
        events=monitor.finish(),
        travel_times=[r.travel_time for r in world.departed],
        spawned=world.spawned,
        in_network=world.in_network,
        rewards=list(rewards),
        timeline=list(timeline),
    )


def run_fixed_time(config: WorldConfig, thresholds: SsmThresholds = SsmThresholds(),
                   plan: FixedTimePlan = DEFAULT_PLAN, record_timeline: bool = False) -> EpisodeResult:
    """One episode under the cyclic plan.

    Rewards are sampled at the end of every green interval so that the
    cumulative negative reward is comparable with the learned controller.
    """
    world = World(config)
    monitor = ConflictMonitor(thresholds)
    acc = RewardAccumulator()
    rewards, timeline = [], []
    first = True
    for _ in range(config.n_steps):
        state = fixed_time_next(world.clock, plan)
        if record_timeline:
            timeline.append((world.clock, state))
        world.step(state)
        update_conflicts(world, monitor)
        nxt = fixed_time_next(world.clock, plan)
        if state.interval is Interval.GREEN and nxt.interval is Interval.YELLOW:
            acc.push(accumulated_total_waiting(world))
            if not first:
                rewards.append(compute_reward(acc))
            first = False
    return _result("fixed", world, monitor, rewards, timeline)


def run_greedy(config: WorldConfig, net, thresholds: SsmThresholds = SsmThresholds(),
               record_timeline: bool = False) -> EpisodeResult:
    """One evaluation episode with the greedy policy of ``net``."""
    env = IntersectionEnv(config, thresholds, record_timeline=record_timeline)
    obs = env.reset()
    done = False
    while not done:
        obs, _, done, _ = env.step(int(np.argmax(forward(net, obs))))
    return env.result("dqn")
