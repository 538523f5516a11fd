"""Deep Q-learning in plain numpy.

Q-network: two dense ReLU layers, two residual blocks of two ReLU layers
each (block input added to block output), and a linear head with one output
per action.  Trained by RMSprop on the mean squared TD error of minibatches
drawn from a small FIFO replay buffer.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .env import N_ACTIONS, N_FEATURES, SplitEnv, Transition
from .errors import WeightsFormatError
from .solver import solve_optimal

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------

def _relu(x):
    return np.maximum(x, 0.0)


class QNetwork:
    """Residual MLP Q-function.

    ``params`` holds ``[W0, b0, W1, b1, ..., W_out, b_out]``; weight matrices
    are ``(fan_in, fan_out)`` so a batch ``X`` of shape ``(B, n_inputs)`` maps
    to ``X @ W + b``.  Layer order: 2 dense, then ``n_blocks`` pairs, then
    the head.
    """

    def __init__(self, params: Sequence[np.ndarray], n_inputs: int = N_FEATURES,
                 hidden: int = 128, n_actions: int = N_ACTIONS, n_blocks: int = 2):
        self.n_inputs = n_inputs
        self.hidden = hidden
        self.n_actions = n_actions
        self.n_blocks = n_blocks
        self.params = [np.asarray(p, dtype=np.float64) for p in params]
        expected = self.param_shapes(n_inputs, hidden, n_actions, n_blocks)
        got = [p.shape for p in self.params]
        if got != expected:
            raise ValueError(f"parameter shapes {got} do not match topology {expected}")

    @staticmethod
    def param_shapes(n_inputs, hidden, n_actions, n_blocks=2):
        dims = [(n_inputs, hidden)] + [(hidden, hidden)] * (1 + 2 * n_blocks) + [(hidden, n_actions)]
        shapes = []
        for fan_in, fan_out in dims:
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    @classmethod
    def init(cls, rng: np.random.Generator, n_inputs: int = N_FEATURES, hidden: int = 128,
             n_actions: int = N_ACTIONS, n_blocks: int = 2) -> "QNetwork":
        """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
        params = []
        for shape in cls.param_shapes(n_inputs, hidden, n_actions, n_blocks):
            if len(shape) == 2:
                params.append(rng.normal(0.0, math.sqrt(2.0 / shape[0]), size=shape))
            else:
                params.append(np.zeros(shape))
        return cls(params, n_inputs, hidden, n_actions, n_blocks)

    @classmethod
    def zeros(cls, **topology) -> "QNetwork":
        t = {"n_inputs": N_FEATURES, "hidden": 128, "n_actions": N_ACTIONS, "n_blocks": 2, **topology}
        return cls([np.zeros(s) for s in cls.param_shapes(**t)], **t)

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    @property
    def topology(self) -> tuple[int, int, int, int]:
        return (self.n_inputs, self.hidden, self.n_actions, self.n_blocks)

    def copy(self) -> "QNetwork":
        return QNetwork([p.copy() for p in self.params], *self.topology)

    def _layer(self, k):
        return self.params[2 * k], self.params[2 * k + 1]

    def _forward(self, X):
        cache = {"X": X, "z": [], "h_in": []}
        h = X
        for k in range(2):
            W, b = self._layer(k)
            z = h @ W + b
            cache["z"].append(z)
            h = _relu(z)
        for blk in range(self.n_blocks):
            cache["h_in"].append(h)
            Wa, ba = self._layer(2 + 2 * blk)
            Wb, bb = self._layer(3 + 2 * blk)
            za = h @ Wa + ba
            zb = _relu(za) @ Wb + bb
            cache["z"] += [za, zb]
            h = _relu(zb) + h
        W, b = self._layer(self.n_layers - 1)
        cache["h_out"] = h
        return h @ W + b, cache

    def forward(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got shape {x.shape}")
        q, _ = self._forward(X)
        return q[0] if single else q

    __call__ = forward

    def backward(self, X, dq) -> list[np.ndarray]:
        """Parameter gradients given dLoss/dQ of shape ``(B, n_actions)``."""
        _, cache = self._forward(X)
        return self._backward(cache, dq)

    def _backward(self, cache, dq):
        grads = [None] * len(self.params)
        z = cache["z"]
        last = self.n_layers - 1
        W, _ = self._layer(last)
        grads[2 * last] = cache["h_out"].T @ dq
        grads[2 * last + 1] = dq.sum(axis=0)
        dh = dq @ W.T
        for blk in reversed(range(self.n_blocks)):
            ka, kb = 2 + 2 * blk, 3 + 2 * blk
            za, zb = z[ka], z[kb]
            h_in = cache["h_in"][blk]
            Wa, _ = self._layer(ka)
            Wb, _ = self._layer(kb)
            dzb = dh * (zb > 0)
            grads[2 * kb] = _relu(za).T @ dzb
            grads[2 * kb + 1] = dzb.sum(axis=0)
            dza = (dzb @ Wb.T) * (za > 0)
            grads[2 * ka] = h_in.T @ dza
            grads[2 * ka + 1] = dza.sum(axis=0)
            dh = dh + dza @ Wa.T
        for k in (1, 0):
            dz = dh * (z[k] > 0)
            h_prev = cache["X"] if k == 0 else _relu(z[0])
            W, _ = self._layer(k)
            grads[2 * k] = h_prev.T @ dz
            grads[2 * k + 1] = dz.sum(axis=0)
            dh = dz @ W.T
        return grads


def forward(net: QNetwork, features) -> np.ndarray:
    return net.forward(features)


# --------------------------------------------------------------------------
# Replay, exploration, targets, gradients
# --------------------------------------------------------------------------

class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        if not transitions:
            raise ValueError("empty batch")
        return cls(
            np.stack([t.state for t in transitions]),
            np.array([t.action for t in transitions], dtype=np.intp),
            np.array([t.reward for t in transitions], dtype=np.float64),
            np.stack([t.next_state for t in transitions]),
            np.array([t.done for t in transitions], dtype=bool),
        )


class ReplayBuffer:
    """FIFO experience store; the oldest transition is evicted when full."""

    def __init__(self, capacity: int = 200):
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def push(self, transition) -> None:
        self._items.append(transition)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def sample(self, n: int, rng: np.random.Generator) -> list:
        """``n`` distinct stored transitions, uniformly at random."""
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    initial: float = 0.5
    decay_per_step: float = 0.995
    floor: float = 0.0005

    def value(self, n: int) -> float:
        return max(self.floor, self.initial * self.decay_per_step ** n)

    __call__ = value


def td_targets(batch: Batch, net: QNetwork, gamma: float) -> np.ndarray:
    """``r + gamma * max_a Q(s', a)``, or just ``r`` on terminal transitions."""
    next_q = net.forward(batch.next_states).max(axis=1)
    return batch.rewards + gamma * np.where(batch.dones, 0.0, next_q)


def td_loss(net: QNetwork, batch: Batch, targets: np.ndarray) -> float:
    q = net.forward(batch.states)
    sel = q[np.arange(len(batch.actions)), batch.actions]
    return float(np.mean((sel - targets) ** 2))


def _loss_and_grads(net, batch, targets):
    q, cache = net._forward(batch.states)
    rows = np.arange(len(batch.actions))
    resid = q[rows, batch.actions] - targets
    dq = np.zeros_like(q)
    dq[rows, batch.actions] = 2.0 * resid / len(resid)
    return float(np.mean(resid ** 2)), net._backward(cache, dq)


def backward(net: QNetwork, batch: Batch, targets: np.ndarray) -> list[np.ndarray]:
    """Gradient of the mean squared TD error; only taken actions contribute."""
    return _loss_and_grads(net, batch, targets)[1]


class RMSprop:
    def __init__(self, net: QNetwork, lr: float = 1e-3, rho: float = 0.9, eps: float = 1e-8):
        self.lr, self.rho, self.eps = lr, rho, eps
        self.v = [np.zeros_like(p) for p in net.params]

    def update(self, net: QNetwork, grads: Sequence[np.ndarray]) -> QNetwork:
        for p, g, v in zip(net.params, grads, self.v):
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            p -= self.lr * g / (np.sqrt(v) + self.eps)
        return net


def rmsprop_update(net: QNetwork, grads, state: RMSprop) -> QNetwork:
    return state.update(net, grads)


def act(net: QNetwork, features, epsilon: float, rng: np.random.Generator,
        mask: np.ndarray | None = None) -> int:
    """Epsilon-greedy choice; greedy ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    allowed = np.arange(net.n_actions) if mask is None else np.flatnonzero(mask)
    if rng.random() < epsilon:
        return int(allowed[rng.integers(len(allowed))])
    q = net.forward(features)
    if mask is not None:
        q = np.where(mask, q, -np.inf)
    return int(np.argmax(q))


# --------------------------------------------------------------------------
# Training and evaluation
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    episodes: int = 300
    steps_per_episode: int = 96
    minibatch_size: int = 100
    buffer_capacity: int = 200
    gamma: float = 0.9
    learning_rate: float = 1e-3
    rho: float = 0.9
    rms_eps: float = 1e-8
    hidden: int = 128
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    target_update_every: int = 0  # 0 disables the target network
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.minibatch_size <= self.buffer_capacity:
            raise ValueError("need 0 < minibatch_size <= buffer_capacity")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.episodes < 0 or self.steps_per_episode <= 0:
            raise ValueError("episodes and steps_per_episode must be positive")


@dataclass(frozen=True)
class EpisodeMetrics:
    episode: int
    cumulative_reward: float
    mean_power_w: float
    violation_rate: float
    oracle_match_rate: float
    updates: int


class StepRecord(NamedTuple):
    episode: int
    transition: Transition
    epsilon: float
    decision: object  # OptimalDecision or Infeasible

    @property
    def oracle_match(self) -> bool:
        return self.decision.feasible and self.decision.assignment == self.transition.assignment


def episode_seed(seed: int, episode: int) -> tuple[int, int]:
    return (seed, episode)


def heldout_seed(seed: int, day: int) -> tuple[int, int, int]:
    # Three-word entropy never collides with the two-word training seeds.
    return (seed, day, 1)


def _summarise(episode, records, updates) -> EpisodeMetrics:
    n = len(records)
    return EpisodeMetrics(
        episode=episode,
        cumulative_reward=float(sum(r.transition.reward for r in records)),
        mean_power_w=float(sum(r.transition.power_w for r in records) / n),
        violation_rate=sum(not r.transition.feasible for r in records) / n,
        oracle_match_rate=sum(r.oracle_match for r in records) / n,
        updates=updates,
    )


def train(env: SplitEnv, cfg: TrainConfig,
          on_step: Callable[[StepRecord], None] | None = None) -> tuple[QNetwork, list[EpisodeMetrics]]:
    """Run ``cfg.episodes`` episodes of epsilon-greedy DQN training.

    Epsilon decays per environment step.  An update happens on every step
    once the buffer holds at least ``minibatch_size`` transitions.
    """
    env.steps_per_episode = cfg.steps_per_episode
    net_seq, act_seq, batch_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    act_rng = np.random.default_rng(act_seq)
    batch_rng = np.random.default_rng(batch_seq)
    net = QNetwork.init(np.random.default_rng(net_seq), hidden=cfg.hidden)
    target_net = net.copy() if cfg.target_update_every else None
    opt = RMSprop(net, cfg.learning_rate, cfg.rho, cfg.rms_eps)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    metrics = []
    t_global = 0
    updates = 0
    for e in range(cfg.episodes):
        env.reset(seed=episode_seed(cfg.seed, e))
        features = env.features()
        records = []
        done = False
        while not done:
            eps = cfg.epsilon.value(t_global)
            mask = env.action_mask() if env.mask_actions else None
            a = act(net, features, eps, act_rng, mask)
            features, _, done, t = env.step(a)
            buffer.push(t)
            rec = StepRecord(e, t, eps, solve_optimal(t.lambda_ru, env.scenario))
            records.append(rec)
            if on_step is not None:
                on_step(rec)
            if len(buffer) >= cfg.minibatch_size:
                batch = Batch.from_transitions(buffer.sample(cfg.minibatch_size, batch_rng))
                targets = td_targets(batch, target_net or net, cfg.gamma)
                _, grads = _loss_and_grads(net, batch, targets)
                opt.update(net, grads)
                updates += 1
                if target_net is not None and updates % cfg.target_update_every == 0:
                    target_net = net.copy()
            t_global += 1
        m = _summarise(e, records, updates)
        metrics.append(m)
        log.debug("episode %d reward %.2f power %.2f viol %.3f match %.3f",
                  e, m.cumulative_reward, m.mean_power_w, m.violation_rate, m.oracle_match_rate)
    return net, metrics


def run_greedy_episode(net: QNetwork, env: SplitEnv, seed, episode: int = 0) -> list[StepRecord]:
    """One episode with epsilon fixed at 0, annotated with the oracle decision."""
    env.reset(seed=seed)
    features = env.features()
    rng = np.random.default_rng(0)  # unused at epsilon 0
    records = []
    done = False
    while not done:
        mask = env.action_mask() if env.mask_actions else None
        features, _, done, t = env.step(act(net, features, 0.0, rng, mask))
        records.append(StepRecord(episode, t, 0.0, solve_optimal(t.lambda_ru, env.scenario)))
    return records


@dataclass(frozen=True)
class EvalSummary:
    steps: int
    oracle_match_rate: float
    violation_rate: float
    mean_power_w: float
    oracle_mean_power_w: float

    @property
    def power_ratio(self) -> float:
        return self.mean_power_w / self.oracle_mean_power_w


def summarise_eval(records: Sequence[StepRecord]) -> EvalSummary:
    oracle = [r.decision.power_w for r in records if r.decision.feasible]
    return EvalSummary(
        steps=len(records),
        oracle_match_rate=sum(r.oracle_match for r in records) / len(records),
        violation_rate=sum(not r.transition.feasible for r in records) / len(records),
        mean_power_w=float(np.mean([r.transition.power_w for r in records])),
        oracle_mean_power_w=float(np.mean(oracle)) if oracle else float("nan"),
    )


def evaluate(net: QNetwork, env: SplitEnv, seed: int, days: int = 1) -> tuple[EvalSummary, list[StepRecord]]:
    """Greedy rollouts on ``days`` held-out days (traffic draws unseen in training)."""
    records = []
    for d in range(days):
        records += run_greedy_episode(net, env, heldout_seed(seed, d), episode=d)
    return summarise_eval(records), records


# --------------------------------------------------------------------------
# Weights file
# --------------------------------------------------------------------------
#
# Little-endian binary, version 1:
#   8 bytes   magic b"NTNSQNET"
#   u32       format version
#   u32 x 4   n_inputs, hidden, n_actions, n_blocks
#   u32       number of arrays (2 per layer: weight then bias, input to output)
#   per array: u32 ndim, u32 x ndim shape, float64 x prod(shape) row-major data
#   32 bytes  SHA-256 of everything above

MAGIC = b"NTNSQNET"
WEIGHTS_VERSION = 1


def save_weights(net: QNetwork, path) -> None:
    parts = [MAGIC, struct.pack("<I", WEIGHTS_VERSION), struct.pack("<4I", *net.topology),
             struct.pack("<I", len(net.params))]
    for p in net.params:
        parts.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    body = b"".join(parts)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    os.replace(tmp, path)


def load_weights(path, expect_topology: tuple | None = None) -> QNetwork:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise WeightsFormatError(f"cannot read weights file {path}: {exc}") from None
    if len(data) < len(MAGIC) + 4 or not data.startswith(MAGIC):
        raise WeightsFormatError(f"{path}: not a Q-network weights file")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"{path}: format version {version}, this build reads {WEIGHTS_VERSION}")
    if len(data) < 32 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise WeightsFormatError(f"{path}: checksum mismatch (truncated or corrupt)")
    body = data[:-32]
    try:
        off = len(MAGIC) + 4
        topology = struct.unpack_from("<4I", body, off)
        off += 16
        (n_arrays,) = struct.unpack_from("<I", body, off)
        off += 4
        params = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack_from("<I", body, off)
            shape = struct.unpack_from(f"<{ndim}I", body, off + 4)
            off += 4 + 4 * ndim
            count = int(np.prod(shape))
            if off + 8 * count > len(body):
                raise WeightsFormatError(f"{path}: array data runs past end of file")
            params.append(np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape).copy())
            off += 8 * count
    except struct.error as exc:
        raise WeightsFormatError(f"{path}: truncated header ({exc})") from None
    if off != len(body):
        raise WeightsFormatError(f"{path}: {len(body) - off} trailing bytes")
    if expect_topology is not None and tuple(expect_topology) != tuple(topology):
        raise WeightsFormatError(f"{path}: topology {topology} != expected {tuple(expect_topology)}")
    try:
        return QNetwork(params, *topology)
    except ValueError as exc:
        raise WeightsFormatError(f"{path}: {exc}") from None
