"""Fully connected Q-network, experience replay and the training loop.

The network is plain numpy: rectified-linear hidden layers and a linear
output head with one Q-value per signal phase. Targets are bootstrapped from
the same network (no target copy).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

N_ACTIONS = 4
OBS_SIZE = 80


@dataclass(frozen=True)
class AgentConfig:
    alpha: float = 1e-4
    gamma: float = 0.9
    batch_size: int = 64
    replay_capacity: int = 50_000
    episodes: int = 40
    warmup: int = 500
    hidden: tuple[int, ...] = (400, 400, 400, 400, 400)
    # "sgd" or "adam"
    optimizer: str = "sgd"
    # rewards (seconds of waiting) are multiplied by this before entering the
    # replay memory; unscaled targets make plain SGD at alpha=1e-4 diverge
    reward_scale: float = 0.1
    # rescale the batch gradient to at most this global L2 norm; None disables
    grad_clip: Optional[float] = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size <= 0 or self.replay_capacity <= 0 or self.episodes <= 0:
            raise ValueError("batch_size, replay_capacity and episodes must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive or None")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (OBS_SIZE, *self.hidden, N_ACTIONS)

    def epsilon(self, episode: int) -> float:
        """Linearly decaying exploration rate, 1 at the first episode."""
        return max(0.0, 1.0 - episode / self.episodes)


class QNetwork:
    """Weights ``W[l]`` have shape ``(fan_in, fan_out)``; inputs are rows."""

    def __init__(self, sizes: Sequence[int], weights: list[np.ndarray], biases: list[np.ndarray]):
        self.sizes = tuple(int(s) for s in sizes)
        if len(weights) != len(self.sizes) - 1 or len(biases) != len(weights):
            raise ValueError("need one weight matrix and bias vector per layer")
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (self.sizes[l], self.sizes[l + 1]) or b.shape != (self.sizes[l + 1],):
                raise ValueError(f"layer {l} has shapes {w.shape}, {b.shape}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self._adam: Optional[dict] = None

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: np.random.Generator) -> "QNetwork":
        """Uniform fan-in scaled weights (He-uniform), zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "QNetwork":
        return cls(sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    def copy(self) -> "QNetwork":
        return QNetwork(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]


def _check_input(net: QNetwork, s: np.ndarray) -> np.ndarray:
    x = np.asarray(s, dtype=np.float64)
    if x.shape[-1] != net.sizes[0] or x.ndim not in (1, 2):
        raise ValueError(f"expected input of width {net.sizes[0]}, got shape {x.shape}")
    return x


def forward(net: QNetwork, s: np.ndarray) -> np.ndarray:
    """Q-values for one observation (1-D) or a batch of rows (2-D)."""
    x = _check_input(net, s)
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        x = x @ w + b
        if l < last:
            x = np.maximum(x, 0.0)
    return x


def loss_and_gradients(net: QNetwork, states: np.ndarray, actions: np.ndarray,
                       targets: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared error of the taken actions' Q-values and its gradients."""
    x = _check_input(net, states)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[0]
    acts = [x]
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        acts.append(np.maximum(z, 0.0) if l < last else z)
    q = acts[-1]
    rows = np.arange(n)
    err = q[rows, actions] - targets
    loss = float(np.mean(err * err))
    delta = np.zeros_like(q)
    delta[rows, actions] = 2.0 * err / n
    gw: list[np.ndarray] = [None] * len(net.weights)
    gb: list[np.ndarray] = [None] * len(net.weights)
    for l in range(last, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l].T) * (acts[l] > 0)
    return loss, gw, gb


def _apply(net: QNetwork, gw, gb, cfg: AgentConfig) -> None:
    if cfg.optimizer == "sgd":
        for l in range(len(net.weights)):
            net.weights[l] -= cfg.alpha * gw[l]
            net.biases[l] -= cfg.alpha * gb[l]
        return
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    if net._adam is None:
        net._adam = {"t": 0, "m": [np.zeros_like(p) for p in net.parameters()],
                     "v": [np.zeros_like(p) for p in net.parameters()]}
    st = net._adam
    st["t"] += 1
    t = st["t"]
    grads = [g for pair in zip(gw, gb) for g in pair]
    for p, g, m, v in zip(net.parameters(), grads, st["m"], st["v"]):
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= cfg.alpha * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool

    def __post_init__(self):
        if not 0 <= self.a < N_ACTIONS:
            raise ValueError(f"action {self.a} outside 0..{N_ACTIONS - 1}")


def bellman_targets(net: QNetwork, batch: Sequence[Transition], gamma: float) -> np.ndarray:
    r = np.array([t.r for t in batch], dtype=np.float64)
    terminal = np.array([t.terminal for t in batch])
    q_next = forward(net, np.stack([t.s_next for t in batch])).max(axis=1)
    return np.where(terminal, r, r + gamma * q_next)


def train_batch(net: QNetwork, batch: Sequence[Transition], cfg: AgentConfig) -> tuple[QNetwork, float]:
    """One gradient step on the batch; updates ``net`` in place.

    Targets ``r + gamma * max Q(s')`` (``r`` for terminal transitions) are
    computed with the current weights and held fixed during the step.
    """
    if not batch:
        raise ValueError("empty batch")
    targets = bellman_targets(net, batch, cfg.gamma)
    states = np.stack([t.s for t in batch])
    actions = np.array([t.a for t in batch])
    loss, gw, gb = loss_and_gradients(net, states, actions, targets)
    if cfg.grad_clip is not None:
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in (*gw, *gb)))
        if norm > cfg.grad_clip:
            k = cfg.grad_clip / norm
            gw, gb = [g * k for g in gw], [g * k for g in gb]
    _apply(net, gw, gb, cfg)
    return net, loss


def q_learning_update(q: np.ndarray, action: int, reward: float, max_next: float,
                      alpha: float, gamma: float) -> np.ndarray:
    """Tabular Q-learning step for a single state, returned as a new table."""
    out = np.array(q, dtype=np.float64)
    out[action] += alpha * (reward + gamma * max_next - out[action])
    return out


def select_action(net: QNetwork, s: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice; greedy ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(forward(net, s)))


class ReplayBuffer:
    """Bounded FIFO memory of transitions."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, t: Transition) -> None:
        self._items.append(t)

    def items(self) -> list[Transition]:
        return list(self._items)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform sample without replacement (all items if fewer than ``n``)."""
        k = min(n, len(self._items))
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]


# --- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, net: QNetwork, seed: int = 0, episode: int = 0) -> None:
    """Text checkpoint: header, then row-major weights and biases per layer.

    Values are written with ``repr`` so a reload is bit-identical.
    """
    with open(path, "w") as fh:
        fh.write("qnetwork 1\n")
        fh.write("sizes " + " ".join(str(s) for s in net.sizes) + "\n")
        fh.write(f"seed {seed}\nepisode {episode}\n")
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            fh.write(f"W {l} {w.shape[0]} {w.shape[1]}\n")
            for row in w:
                fh.write(" ".join(map(repr, row.tolist())) + "\n")
            fh.write(f"b {l} {b.shape[0]}\n")
            fh.write(" ".join(map(repr, b.tolist())) + "\n")


def load_checkpoint(path) -> tuple[QNetwork, dict]:
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
        if next(lines).split() != ["qnetwork", "1"]:
            raise ValueError(f"{path} is not a Q-network checkpoint")
        sizes = [int(x) for x in next(lines).split()[1:]]
        meta = {}
        for _ in range(2):
            k, v = next(lines).split()
            meta[k] = int(v)
        weights, biases = [], []
        for l in range(len(sizes) - 1):
            tag, _, rows, cols = next(lines).split()
            w = np.array([[float(x) for x in next(lines).split()] for _ in range(int(rows))])
            weights.append(w.reshape(int(rows), int(cols)))
            next(lines)
            biases.append(np.array([float(x) for x in next(lines).split()]))
    return QNetwork(sizes, weights, biases), meta


# --- training ---------------------------------------------------------------------

@dataclass
class EpisodeLog:
    episode: int
    epsilon: float
    cumulative_negative_reward: float
    cumulative_reward: float
    cumulative_delay: float
    decisions: int
    mean_loss: float


@dataclass
class TrainingResult:
    net: QNetwork
    logs: list[EpisodeLog] = field(default_factory=list)


def run_training(env, cfg: AgentConfig, base_seed: int = 0,
                 on_episode: Optional[Callable[[EpisodeLog], None]] = None) -> TrainingResult:
    """Train a fresh network for ``cfg.episodes`` episodes.

    Episode ``e`` uses world seed ``base_seed + e`` and exploration
    ``cfg.epsilon(e)``. After ``cfg.warmup`` stored transitions, one batch
    update runs per decision.
    """
    seq = np.random.SeedSequence([cfg.seed, base_seed])
    init_seq, act_seq, replay_seq = seq.spawn(3)
    net = QNetwork.initialize(cfg.layer_sizes, np.random.default_rng(init_seq))
    act_rng = np.random.default_rng(act_seq)
    replay_rng = np.random.default_rng(replay_seq)
    memory = ReplayBuffer(cfg.replay_capacity)
    result = TrainingResult(net)
    for episode in range(cfg.episodes):
        eps = cfg.epsilon(episode)
        obs = env.reset(base_seed + episode)
        done = False
        neg = total = 0.0
        losses = []
        n = 0
        while not done:
            a = select_action(net, obs, eps, act_rng)
            obs_next, r, done, _ = env.step(a)
            memory.push(Transition(obs, a, r * cfg.reward_scale, obs_next, done))
            neg += min(r, 0.0)
            total += r
            n += 1
            if len(memory) >= max(cfg.warmup, 1):
                _, loss = train_batch(net, memory.sample(cfg.batch_size, replay_rng), cfg)
                losses.append(loss)
            obs = obs_next
        log = EpisodeLog(episode, eps, neg, total, env.world.cumulative_delay, n,
                         float(np.mean(losses)) if losses else math.nan)
        result.logs.append(log)
        if on_episode is not None:
            on_episode(log)
    return result
