"""Advantage actor-critic: returns, loss, parameter updates and the training driver."""
from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AllMaskedError, DrlPartError
from .nn import ParamStore, Tensor, scale, square, stack_scalars, total

log = logging.getLogger(__name__)

NORMALIZE_EPS = 1e-8


@dataclass
class TrainConfig:
    gamma: float = 0.9
    alpha: float = 0.1
    lr: float = 1e-3
    workers: int = 1
    update_every: int = 20
    epochs: int = 1
    seed: int = 0
    returns_mode: str = "to_go"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.workers < 1 or self.update_every < 1:
            raise ValueError("workers and update_every must be at least 1")
        if self.returns_mode not in ("to_go", "past"):
            raise ValueError("returns_mode must be 'to_go' or 'past'")


@dataclass
class Episode:
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    log_probs: list[Tensor] = field(default_factory=list)
    values: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def append(self, action: int, reward: float, log_prob: Tensor, value: Tensor) -> None:
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.log_probs.append(log_prob)
        self.values.append(value)


def discounted_returns(rewards: Sequence[float], gamma: float, mode: str = "to_go") -> np.ndarray:
    """Discounted returns of a reward sequence.

    ``to_go``: R_t = r_t + gamma * R_{t+1}. ``past`` accumulates earlier rewards
    instead, R_t = r_t + gamma * R_{t-1}, for compatibility with that variant.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("reward sequence is empty")
    out = np.empty_like(r)
    acc = 0.0
    idx = range(len(r) - 1, -1, -1) if mode == "to_go" else range(len(r))
    for t in idx:
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def normalize_returns(returns: Sequence[float]) -> np.ndarray:
    R = np.asarray(returns, dtype=float)
    if R.size <= 1:
        return np.zeros_like(R)
    return (R - R.mean()) / (R.std() + NORMALIZE_EPS)


def a2c_loss(episode: Episode, returns: np.ndarray, alpha: float) -> Tensor:
    """Actor loss with a constant advantage plus the weighted squared critic error."""
    if len(returns) != len(episode):
        raise ValueError("returns and episode have different lengths")
    logp = stack_scalars(episode.log_probs)
    v = stack_scalars(episode.values)
    advantage = np.asarray(returns, dtype=float) - v.value
    actor = scale(total(logp * advantage), -1.0)
    critic = scale(total(square(Tensor(returns) - v)), alpha)
    return actor + critic


def update_parameters(store: ParamStore, leaves: dict[str, Tensor], episode: Episode, cfg: TrainConfig) -> float:
    """One plain gradient step on the A2C loss of ``episode``; returns the loss value."""
    if len(episode) == 0:
        raise ValueError("cannot update from an empty episode")
    R = normalize_returns(discounted_returns(episode.rewards, cfg.gamma, cfg.returns_mode))
    loss = a2c_loss(episode, R, cfg.alpha)
    for leaf in leaves.values():
        leaf.grad = None
    loss.backward()
    store.apply_gradients(store.collect_grads(leaves), cfg.lr)
    return loss.item()


def sample_action(log_probs: np.ndarray, mode: str, rng: np.random.Generator | None = None) -> int:
    """Greedy picks the lowest-id argmax; sample draws from exp(log_probs)."""
    lp = np.asarray(log_probs, dtype=float).reshape(-1)
    finite = np.isfinite(lp)
    if not finite.any():
        raise AllMaskedError("no action has finite log-probability")
    if mode == "greedy":
        return int(np.argmax(np.where(finite, lp, -np.inf)))
    if mode != "sample":
        raise ValueError(f"unknown action mode {mode!r}")
    p = np.where(finite, np.exp(lp - lp[finite].max()), 0.0)
    cum = np.cumsum(p)
    u = rng.random() * cum[-1]
    idx = int(np.searchsorted(cum, u, side="right"))
    last = int(np.flatnonzero(p > 0)[-1])
    return min(idx, last)


class Learner:
    """Collects steps of a running episode and applies A2C updates every few steps.

    Agents read parameters through :meth:`params`, which returns leaves over a
    snapshot taken at the last update boundary.
    """

    def __init__(self, store: ParamStore, cfg: TrainConfig):
        self.store = store
        self.cfg = cfg
        self.leaves = store.as_tensors()
        self.segment = Episode()
        self.steps = 0
        self.total_reward = 0.0
        self.total_loss = 0.0
        self.updates = 0

    def params(self) -> dict[str, Tensor]:
        return self.leaves

    def record(self, action: int, reward: float, log_prob: Tensor, value: Tensor) -> None:
        self.segment.append(action, reward, log_prob, value)
        self.steps += 1
        self.total_reward += reward
        if len(self.segment) >= self.cfg.update_every:
            self.flush()

    def flush(self) -> None:
        if len(self.segment) == 0:
            return
        self.total_loss += update_parameters(self.store, self.leaves, self.segment, self.cfg)
        self.updates += 1
        self.segment = Episode()
        self.leaves = self.store.as_tensors()


EpisodeFn = Callable[[object, Learner, np.random.Generator], None]


@dataclass
class LogRecord:
    epoch: int
    graph_id: int
    episode_length: int
    cumulative_reward: float
    loss: float
    wall_time: float
    skipped: str | None = None

    def to_json(self) -> str:
        d = {k: v for k, v in self.__dict__.items() if not (k == "skipped" and v is None)}
        return json.dumps(d)


def train_driver(dataset: Sequence, cfg: TrainConfig, episode_fn: EpisodeFn, store: ParamStore,
                 log_file=None) -> tuple[ParamStore, list[LogRecord]]:
    """Run ``cfg.epochs`` passes over ``dataset``, one training episode per graph.

    ``episode_fn(graph, learner, rng)`` runs one episode and reports steps to the
    learner. With several workers, graph ``i`` goes to worker ``i % workers``;
    rollouts run in threads and updates are serialized by the store lock.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.workers)
    rngs = [np.random.default_rng(s) for s in seeds]
    records: list[LogRecord] = []
    rec_lock = threading.Lock()

    def run_one(epoch: int, gid: int, rng) -> None:
        learner = Learner(store, cfg)
        t0 = time.perf_counter()
        skipped = None
        try:
            episode_fn(dataset[gid], learner, rng)
            learner.flush()
        except DrlPartError as exc:
            skipped = f"{type(exc).__name__}: {exc}"
            log.warning("graph %d skipped: %s", gid, skipped)
        rec = LogRecord(epoch, gid, learner.steps, learner.total_reward, learner.total_loss,
                        time.perf_counter() - t0, skipped)
        with rec_lock:
            records.append(rec)
            if log_file is not None:
                log_file.write(rec.to_json() + "\n")
                log_file.flush()

    for epoch in range(cfg.epochs):
        if cfg.workers == 1:
            for gid in range(len(dataset)):
                run_one(epoch, gid, rngs[0])
            continue

        def worker(w: int) -> None:
            for gid in range(w, len(dataset), cfg.workers):
                run_one(epoch, gid, rngs[w])

        threads = [threading.Thread(target=worker, args=(w,)) for w in range(cfg.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    return store, records
