"""Multilevel edge separator with reinforcement-learning refinement."""
from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .a2c import Learner, sample_action
from .coarsen import coarsening_chain, heavy_edge_matching, interpolate_bisection
from .errors import DegeneratePartitionError, DisconnectedGraphError, DrlPartError
from .graph import A, B, Bisection, Graph, Subgraph, balance, cut_frontier, k_hop_subgraph, move_node_edge
from .nn import GraphContext, ParamStore, coarse_agent_forward, pick, refine_agent_forward

log = logging.getLogger(__name__)

EDGE_CHANNELS = 5
EDGE_MASK_FEATURES = (2,)
# channel permutation exchanging the roles of A and B
EDGE_SIDE_SWAP = (1, 0, 2, 4, 3)
COARSE_MASK_FEATURES = (1,)


@dataclass
class RefineConfig:
    n_min: int = 100
    k_hops: int = 3
    coarse_solver: str = "auto"
    mode: str = "eval"
    imbalance: float = 1.0
    seed: int | None = 0
    external_cmd: str | None = None
    audit: bool = False
    max_balance: float | None = None

    def __post_init__(self):
        if self.n_min < 4:
            raise ValueError("n_min must be at least 4")
        if self.k_hops < 1:
            raise ValueError("k_hops must be at least 1")
        if self.coarse_solver not in ("auto", "rl", "greedy", "external"):
            raise ValueError(f"unknown coarse solver {self.coarse_solver!r}")
        if self.mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")


@dataclass
class LevelRecord:
    n: int
    before: float
    after: float
    steps: int


@dataclass
class EpisodeResult:
    actions: list[int]
    rewards: list[float]
    result: object

    @property
    def peak(self) -> int:
        return peak_prefix(self.rewards)


def peak_prefix(rewards, allowed=None) -> int:
    """Length of the prefix with the largest cumulative reward (0 if none is positive).

    ``allowed`` optionally flags which prefix lengths ``0..len(rewards)`` may be chosen;
    the empty prefix is always allowed.
    """
    if len(rewards) == 0:
        return 0
    cum = np.concatenate([[0.0], np.cumsum(rewards)])
    if allowed is not None:
        ok = np.asarray(allowed, dtype=bool).copy()
        ok[0] = True
        cum = np.where(ok, cum, -np.inf)
    return int(np.argmax(cum))


# ---------------------------------------------------------------- features

def build_edge_features(g: Graph, sub: Subgraph, b: Bisection) -> np.ndarray:
    lab = b.label[sub.nodes]
    vol = float(b.vol_a + b.vol_b)
    F = np.empty((sub.n, EDGE_CHANNELS))
    F[:, 0] = lab == A
    F[:, 1] = lab == B
    F[:, 2] = sub.boundary
    F[:, 3] = b.vol_a / vol
    F[:, 4] = b.vol_b / vol
    return F


def _emptying_mask(labels: np.ndarray, card_a: int, card_b: int) -> np.ndarray | None:
    if card_a > 1 and card_b > 1:
        return None
    mask = np.zeros(len(labels), dtype=bool)
    if card_a == 1:
        mask |= labels == A
    if card_b == 1:
        mask |= labels == B
    return mask


# ---------------------------------------------------------------- refinement episode

def refine_episode(g: Graph, sub: Subgraph, b: Bisection, params, mode: str = "eval",
                   rng: np.random.Generator | None = None, learner: Learner | None = None,
                   steps: int | None = None, audit: bool = False,
                   max_balance: float | None = None) -> EpisodeResult:
    """Move up to ``steps`` (default: the cut size) nodes of ``sub`` across the cut.

    In eval mode the initial bisection is restored afterwards and only the
    action prefix reaching the peak cumulative reward is replayed; the
    returned result is that replayed bisection. With ``max_balance`` set, only
    prefixes whose volume balance stays within ``max(max_balance, initial
    balance)`` are candidates. In train mode actions are sampled, each step is
    reported to ``learner`` and the final state is returned.
    """
    training = learner is not None
    if steps is None:
        steps = b.cut
    ctx = GraphContext.of(sub.graph)
    start = b.copy()
    cur = b.copy()
    F = build_edge_features(g, sub, cur)
    vol = float(cur.vol_a + cur.vol_b)
    actions, rewards, balances = [], [], [balance(cur)]
    for _ in range(steps):
        extra = _emptying_mask(cur.label[sub.nodes], cur.card_a, cur.card_b)
        p = learner.params() if training else params
        try:
            out = refine_agent_forward(ctx, F, EDGE_MASK_FEATURES, p, training=training, extra_mask=extra,
                                       side_swap=EDGE_SIDE_SWAP)
        except DrlPartError:
            break
        a = sample_action(out.log_probs, "sample" if mode == "train" else "greedy", rng)
        v = int(sub.nodes[a])
        r = move_node_edge(cur, g, v)
        side = cur.label[v]
        F[a, 0] = side == A
        F[a, 1] = side == B
        F[:, 3] = cur.vol_a / vol
        F[:, 4] = cur.vol_b / vol
        if audit:
            ref = build_edge_features(g, sub, cur)
            if not np.array_equal(ref, F):
                raise AssertionError("edge features drifted from the bisection")
        actions.append(v)
        rewards.append(r)
        balances.append(balance(cur))
        if training:
            learner.record(a, r, pick(out.actor, a), out.critic)
    if mode == "train":
        return EpisodeResult(actions, rewards, cur)
    allowed = None
    if max_balance is not None:
        allowed = np.array(balances) <= max(max_balance, balances[0])
    result = start
    for v in actions[:peak_prefix(rewards, allowed)]:
        move_node_edge(result, g, v)
    return EpisodeResult(actions, rewards, result)


# ---------------------------------------------------------------- coarsest level

def _min_degree_node(g: Graph) -> int:
    return int(np.argmin(g.degree))


def coarse_initial(g: Graph) -> Bisection:
    label = np.full(g.n, B, dtype=np.int8)
    label[_min_degree_node(g)] = A
    return Bisection(g, label)


def coarse_edge_separator(g: Graph, params, mode: str = "eval", rng=None, learner: Learner | None = None,
                          imbalance: float = 1.0) -> Bisection:
    """Grow part A one node at a time from a single minimum-degree node.

    Features: nodes in B carry [1, 0], nodes already moved to A carry [0, 1]
    and are masked. Training runs floor(n/2) - 1 steps; evaluation may take
    up to floor(imbalance * n / 100) extra steps and keeps the prefix with the
    smallest normalized cut.
    """
    n = g.n
    if n < 2:
        raise ValueError("coarse partitioning needs at least two nodes")
    training = learner is not None
    b = coarse_initial(g)
    base = n // 2 - 1
    steps = base if training else base + int(imbalance * n // 100)
    steps = max(0, min(steps, n - 2))
    ctx = GraphContext.of(g)
    F = np.zeros((n, 2))
    F[b.label == B, 0] = 1.0
    F[b.label == A, 1] = 1.0
    actions, ncs = [], [b.nc()]
    for _ in range(steps):
        p = learner.params() if training else params
        out = coarse_agent_forward(ctx, F, p, training=training, mask_features=COARSE_MASK_FEATURES)
        a = sample_action(out.log_probs, "sample" if mode == "train" else "greedy", rng)
        r = move_node_edge(b, g, a)
        F[a] = (0.0, 1.0)
        actions.append(a)
        ncs.append(b.nc())
        if training:
            learner.record(a, r, pick(out.actor, a), out.critic)
    if training:
        return b
    best = int(np.argmin(ncs))
    out_b = coarse_initial(g)
    for a in actions[:best]:
        move_node_edge(out_b, g, a)
    return out_b


def pseudo_peripheral_node(g: Graph, start: int = 0) -> int:
    """George-Liu search: walk to a minimum-degree node of the last BFS level while eccentricity grows."""
    r = start
    levels = bfs_levels(g, r)
    ecc = int(levels.max())
    while True:
        last = np.flatnonzero(levels == ecc)
        cand = int(last[np.argmin(g.degree[last])])
        cand_levels = bfs_levels(g, cand)
        if int(cand_levels.max()) <= ecc:
            return r
        r, levels, ecc = cand, cand_levels, int(cand_levels.max())


def bfs_levels(g: Graph, root: int) -> np.ndarray:
    lev = np.full(g.n, -1, dtype=np.int64)
    lev[root] = 0
    adj = g.adj
    q = deque([root])
    while q:
        v = q.popleft()
        for w in adj[v]:
            if lev[w] < 0:
                lev[w] = lev[v] + 1
                q.append(w)
    return lev


def bfs_order(g: Graph, root: int) -> list[int]:
    seen = [False] * g.n
    seen[root] = True
    order = [root]
    adj = g.adj
    i = 0
    while i < len(order):
        for w in adj[order[i]]:
            if not seen[w]:
                seen[w] = True
                order.append(w)
        i += 1
    order.extend(v for v in range(g.n) if not seen[v])
    return order


def nc_after_move(b: Bisection, g: Graph, v: int) -> float:
    side = b.label[v]
    d = int(g.degree[v])
    same = int(np.count_nonzero(b.label[g.neighbors(v)] == side))
    cut = b.cut + same - (d - same)
    va, vb = (b.vol_a - d, b.vol_b + d) if side == A else (b.vol_a + d, b.vol_b - d)
    if va <= 0 or vb <= 0:
        return float("inf")
    return cut * (1.0 / va + 1.0 / vb)


def greedy_pass(g: Graph, b: Bisection) -> int:
    """Move each cut-frontier node (ascending id) whose move lowers the normalized cut."""
    moved = 0
    for v in cut_frontier(g, b).tolist():
        if (b.label[v] == A and b.card_a == 1) or (b.label[v] == B and b.card_b == 1):
            continue
        if nc_after_move(b, g, v) < b.nc() - 1e-15:
            move_node_edge(b, g, v)
            moved += 1
    return moved


def greedy_refine(g: Graph, b: Bisection, max_passes: int = 50) -> Bisection:
    """Repeat greedy boundary passes until one moves nothing."""
    b = b.copy()
    for _ in range(max_passes):
        if greedy_pass(g, b) == 0:
            break
    return b


def greedy_fallback_partition(g: Graph) -> Bisection:
    """BFS-grown half from a pseudo-peripheral node plus one greedy boundary pass."""
    if g.n < 2:
        raise ValueError("need at least two nodes")
    root = pseudo_peripheral_node(g)
    half = g.degree.sum() / 2.0
    label = np.full(g.n, B, dtype=np.int8)
    vol = 0
    count = 0
    for v in bfs_order(g, root):
        if vol >= half or count == g.n - 1:
            break
        label[v] = A
        vol += int(g.degree[v])
        count += 1
    b = Bisection(g, label)
    if b.vol_a > 0 and b.vol_b > 0:
        greedy_pass(g, b)
    return b


def multilevel_greedy_bisection(g: Graph, n_min: int = 100, seed=None) -> Bisection:
    """Baseline bisection: coarsen, BFS-grow the coarsest graph, greedy local search at every level."""
    chain = coarsening_chain(g, max(2, n_min), seed)
    coarsest = chain[-1].coarse if chain else g
    b = greedy_refine(coarsest, greedy_fallback_partition(coarsest))
    for lvl in reversed(chain):
        b = greedy_refine(lvl.fine, interpolate_bisection(lvl, b))
    return b


# ---------------------------------------------------------------- external hook

def write_metis_graph(g: Graph, path) -> None:
    lines = [f"{g.n} {g.m}"]
    for v in range(g.n):
        lines.append(" ".join(str(w + 1) for w in g.adj[v]))
    Path(path).write_text("\n".join(lines) + "\n")


def external_partition(g: Graph, cmd: str) -> Bisection:
    """Run a METIS-style partitioner: ``cmd <graphfile> 2`` writing ``<graphfile>.part.2``."""
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "graph.metis")
        write_metis_graph(g, path)
        subprocess.run(shlex.split(cmd) + [path, "2"], check=True, capture_output=True)
        parts = np.loadtxt(path + ".part.2", dtype=np.int64, ndmin=1)
    if parts.shape != (g.n,) or np.any((parts != 0) & (parts != 1)):
        raise DrlPartError("external partitioner produced an unreadable partition")
    return Bisection(g, parts.astype(np.int8))


# ---------------------------------------------------------------- multilevel driver

def solve_coarsest(g: Graph, cfg: RefineConfig, coarse_params=None) -> Bisection:
    solver = cfg.coarse_solver
    if solver == "auto":
        solver = "rl" if coarse_params is not None else "greedy"
    if solver == "rl":
        if coarse_params is None:
            raise ValueError("the rl coarse solver needs coarse-agent parameters")
        params = coarse_params.as_tensors(False) if isinstance(coarse_params, ParamStore) else coarse_params
        return coarse_edge_separator(g, params, "eval", imbalance=cfg.imbalance)
    if solver == "external":
        if not cfg.external_cmd:
            raise ValueError("the external coarse solver needs a command")
        return external_partition(g, cfg.external_cmd)
    return greedy_refine(g, greedy_fallback_partition(g))


def edge_separator(g: Graph, cfg: RefineConfig | None = None, refine_params=None, coarse_params=None,
                   trace: list | None = None) -> Bisection:
    """Multilevel bisection: coarsen, solve the coarsest graph, then interpolate and refine level by level.

    ``refine_params`` may be ``None`` to interpolate without refinement.
    ``trace`` receives one :class:`LevelRecord` per refined level.
    """
    cfg = cfg or RefineConfig()
    if g.n < 2:
        raise ValueError("need at least two nodes")
    if not g.is_connected():
        raise DisconnectedGraphError("edge_separator expects a connected graph")
    chain = coarsening_chain(g, cfg.n_min, cfg.seed)
    coarsest = chain[-1].coarse if chain else g
    b = solve_coarsest(coarsest, cfg, coarse_params)
    params = None
    if refine_params is not None:
        params = refine_params.as_tensors(False) if isinstance(refine_params, ParamStore) else refine_params
    for lvl in reversed(chain):
        b = interpolate_bisection(lvl, b)
        b = refine_level(lvl.fine, b, params, cfg, trace)
    return b


def refine_level(g: Graph, b: Bisection, params, cfg: RefineConfig, trace=None) -> Bisection:
    if params is None or b.cut == 0 or b.vol_a == 0 or b.vol_b == 0:
        return b
    before = b.nc()
    sub = k_hop_subgraph(g, cut_frontier(g, b), cfg.k_hops)
    res = refine_episode(g, sub, b, params, "eval", audit=cfg.audit, max_balance=cfg.max_balance)
    if trace is not None:
        trace.append(LevelRecord(g.n, before, res.result.nc(), len(res.actions)))
    return res.result


# ---------------------------------------------------------------- training episodes

def train_edge_episode(g: Graph, learner: Learner, rng: np.random.Generator, cfg: RefineConfig) -> None:
    """One training episode: coarsen once, bisect the coarse graph with the greedy baseline, refine by sampling."""
    if g.n < cfg.n_min or g.n < 4:
        return
    lvl = heavy_edge_matching(g, seed=rng.integers(2**63))
    if lvl.coarse.n < 2:
        return
    coarse_b = multilevel_greedy_bisection(lvl.coarse, cfg.n_min, seed=int(rng.integers(2**31)))
    b = interpolate_bisection(lvl, coarse_b)
    if b.cut == 0 or b.vol_a == 0 or b.vol_b == 0:
        return
    sub = k_hop_subgraph(g, cut_frontier(g, b), cfg.k_hops)
    refine_episode(g, sub, b, None, "train", rng=rng, learner=learner, audit=cfg.audit)


def train_coarse_episode(g: Graph, learner: Learner, rng: np.random.Generator, cfg: RefineConfig) -> None:
    if g.n < 4:
        return
    coarse_edge_separator(g, None, "train", rng=rng, learner=learner, imbalance=cfg.imbalance)
