"""Multilevel vertex separator with reinforcement-learning refinement."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_bipartite_matching

from .a2c import Learner, sample_action
from .coarsen import coarsening_chain, heavy_edge_matching, interpolate_separator
from .edge_sep import (EpisodeResult, LevelRecord, RefineConfig, edge_separator, greedy_fallback_partition,
                       greedy_refine, multilevel_greedy_bisection, peak_prefix, solve_coarsest)
from .errors import DisconnectedGraphError, DrlPartError, EssentialNodeError
from .graph import A, B, S, Bisection, Graph, Separator3, Subgraph, k_hop_subgraph, side_neighbor_counts
from .nn import GraphContext, ParamStore, pick, refine_agent_forward

VERTEX_CHANNELS = 7
VERTEX_MASK_FEATURES = (3, 4)
VERTEX_SIDE_SWAP = (1, 0, 2, 3, 4, 6, 5)


def _touches(g: Graph, label: np.ndarray, v: int) -> tuple[bool, bool]:
    nb = label[g.neighbors(v)]
    return bool(np.any(nb == A)), bool(np.any(nb == B))


def is_essential(g: Graph, s: Separator3, v: int) -> bool:
    if s.label[v] != S:
        return False
    ta, tb = _touches(g, s.label, v)
    return ta and tb


def apply_action_vertex(a: int, g: Graph, s: Separator3) -> float:
    """Move ``a`` into the separator, or out of it if it is already there.

    A separator node joins A if it touches A, else B if it touches B, else the
    smaller side (A on ties). Returns the decrease of the normalized separator.
    """
    before = s.ns()
    lab = s.label[a]
    if lab == A:
        s.label[a] = S
        s.card_a -= 1
        s.card_s += 1
    elif lab == B:
        s.label[a] = S
        s.card_b -= 1
        s.card_s += 1
    else:
        ta, tb = _touches(g, s.label, a)
        if ta and tb:
            raise EssentialNodeError(f"node {a} touches both sides and cannot leave the separator")
        s.card_s -= 1
        if ta or (not tb and s.card_a <= s.card_b):
            s.label[a] = A
            s.card_a += 1
        else:
            s.label[a] = B
            s.card_b += 1
    return before - s.ns()


def build_vertex_features(g: Graph, sub: Subgraph, s: Separator3) -> np.ndarray:
    lab = s.label[sub.nodes]
    F = np.zeros((sub.n, VERTEX_CHANNELS))
    F[:, 0] = lab == A
    F[:, 1] = lab == B
    F[:, 2] = lab == S
    F[:, 3] = sub.boundary
    in_s = np.flatnonzero(lab == S)
    if len(in_s):
        na, nb = side_neighbor_counts(g, s.label, sub.nodes[in_s])
        F[in_s, 4] = (na > 0) & (nb > 0)
    F[:, 5] = s.card_a / g.n
    F[:, 6] = s.card_b / g.n
    return F


def _emptying_mask(lab: np.ndarray, s: Separator3) -> np.ndarray | None:
    if s.card_a > 1 and s.card_b > 1:
        return None
    mask = np.zeros(len(lab), dtype=bool)
    if s.card_a == 1:
        mask |= lab == A
    if s.card_b == 1:
        mask |= lab == B
    return mask


def vertex_episode(g: Graph, sub: Subgraph, s: Separator3, params, mode: str = "eval",
                   rng: np.random.Generator | None = None, learner: Learner | None = None,
                   steps: int | None = None, audit: bool = False) -> EpisodeResult:
    """Refinement episode of ``2 |S|`` actions (by default) on the subgraph around the separator.

    Boundary and essential nodes are masked. Eval mode replays the peak
    cumulative-reward prefix from the initial separator.
    """
    training = learner is not None
    if steps is None:
        steps = 2 * s.card_s
    ctx = GraphContext.of(sub.graph)
    start = s.copy()
    cur = s.copy()
    F = build_vertex_features(g, sub, cur)
    local = sub.local_index()
    adj = g.adj
    actions, rewards = [], []
    for _ in range(steps):
        extra = _emptying_mask(cur.label[sub.nodes], cur)
        p = learner.params() if training else params
        try:
            out = refine_agent_forward(ctx, F, VERTEX_MASK_FEATURES, p, training=training, extra_mask=extra,
                                       side_swap=VERTEX_SIDE_SWAP)
        except DrlPartError:
            break
        a = sample_action(out.log_probs, "sample" if mode == "train" else "greedy", rng)
        v = int(sub.nodes[a])
        r = apply_action_vertex(v, g, cur)
        lab = cur.label[v]
        F[a, 0:3] = (lab == A, lab == B, lab == S)
        for w in [v] + adj[v]:
            lw = local[w]
            if lw >= 0:
                F[lw, 4] = is_essential(g, cur, w)
        F[:, 5] = cur.card_a / g.n
        F[:, 6] = cur.card_b / g.n
        if audit:
            if not cur.is_valid():
                raise AssertionError(f"separator invalid after action on node {v}")
            if not np.array_equal(F, build_vertex_features(g, sub, cur)):
                raise AssertionError("vertex features drifted from the separator")
        actions.append(v)
        rewards.append(r)
        if training:
            learner.record(a, r, pick(out.actor, a), out.critic)
    if mode == "train":
        return EpisodeResult(actions, rewards, cur)
    result = start
    for v in actions[:peak_prefix(rewards)]:
        apply_action_vertex(v, g, result)
    return EpisodeResult(actions, rewards, result)


def edge_to_vertex_separator(g: Graph, b: Bisection) -> Separator3:
    """Minimum vertex cover of the cut edges (maximum matching plus the Koenig construction).

    The search starts from the larger part (A on ties), so when several
    minimum covers exist the larger part gives up nodes.
    """
    e = g.edge_array
    cut = e[b.label[e[:, 0]] != b.label[e[:, 1]]]
    label = b.label.copy()
    if len(cut) == 0:
        return Separator3(g, label)
    left_side = A if b.card_a >= b.card_b else B
    u = np.where(b.label[cut[:, 0]] == left_side, cut[:, 0], cut[:, 1])
    w = np.where(b.label[cut[:, 0]] == left_side, cut[:, 1], cut[:, 0])
    left = np.unique(u)
    right = np.unique(w)
    li = np.searchsorted(left, u)
    ri = np.searchsorted(right, w)
    bip = sp.csr_matrix((np.ones(len(li)), (li, ri)), shape=(len(left), len(right)))
    match = maximum_bipartite_matching(bip, perm_type="column")
    match_r = np.full(len(right), -1, dtype=np.int64)
    matched = match >= 0
    match_r[match[matched]] = np.flatnonzero(matched)
    z_left = np.zeros(len(left), dtype=bool)
    z_right = np.zeros(len(right), dtype=bool)
    stack = np.flatnonzero(~matched).tolist()
    z_left[stack] = True
    ip, ind = bip.indptr, bip.indices
    while stack:
        i = stack.pop()
        for j in ind[ip[i]:ip[i + 1]].tolist():
            if z_right[j]:
                continue
            z_right[j] = True
            k = int(match_r[j])
            if k >= 0 and not z_left[k]:
                z_left[k] = True
                stack.append(k)
    label[left[~z_left]] = S
    label[right[z_right]] = S
    return Separator3(g, label)


def fallback_separator(g: Graph) -> Separator3:
    """Separator without a trained agent: multilevel bisection, greedy local search, minimum cover."""
    if g.n < 2:
        return Separator3(g, np.full(g.n, S, dtype=np.int8))
    if g.is_connected():
        b = multilevel_greedy_bisection(g, 100, seed=0)
    else:
        b = greedy_refine(g, greedy_fallback_partition(g))
    return edge_to_vertex_separator(g, b)


def coarsest_separator(g: Graph, cfg: RefineConfig, coarse_params=None) -> Separator3:
    if g.n < 2:
        return Separator3(g, np.full(g.n, S, dtype=np.int8))
    return edge_to_vertex_separator(g, solve_coarsest(g, cfg, coarse_params))


def vertex_separator(g: Graph, cfg: RefineConfig | None = None, params=None, coarse_params=None,
                     trace: list | None = None) -> Separator3:
    """Multilevel vertex separator: coarsest solve by minimum cover, then interpolate and refine per level."""
    cfg = cfg or RefineConfig()
    if not g.is_connected():
        raise DisconnectedGraphError("vertex_separator expects a connected graph")
    chain = coarsening_chain(g, cfg.n_min, cfg.seed)
    coarsest = chain[-1].coarse if chain else g
    s = coarsest_separator(coarsest, cfg, coarse_params)
    if params is not None and isinstance(params, ParamStore):
        params = params.as_tensors(False)
    for lvl in reversed(chain):
        s = interpolate_separator(lvl, s)
        s = refine_vertex_level(lvl.fine, s, params, cfg, trace)
    return s


def refine_vertex_level(g: Graph, s: Separator3, params, cfg: RefineConfig, trace=None) -> Separator3:
    if params is None or s.card_s == 0 or s.card_a == 0 or s.card_b == 0:
        return s
    before = s.ns()
    sub = k_hop_subgraph(g, s.part(S), cfg.k_hops)
    res = vertex_episode(g, sub, s, params, "eval", audit=cfg.audit)
    if trace is not None:
        trace.append(LevelRecord(g.n, before, res.result.ns(), len(res.actions)))
    return res.result


def train_vertex_episode(g: Graph, learner: Learner, rng: np.random.Generator, cfg: RefineConfig) -> None:
    if g.n < cfg.n_min or g.n < 4:
        return
    lvl = heavy_edge_matching(g, seed=rng.integers(2**63))
    if lvl.coarse.n < 2:
        return
    s = interpolate_separator(lvl, coarsest_separator(lvl.coarse, RefineConfig(n_min=cfg.n_min,
                                                                            coarse_solver="greedy")))
    if s.card_s == 0 or s.card_a == 0 or s.card_b == 0:
        return
    sub = k_hop_subgraph(g, s.part(S), cfg.k_hops)
    vertex_episode(g, sub, s, None, "train", rng=rng, learner=learner, audit=cfg.audit)


def edge_cover_separator(g: Graph, cfg: RefineConfig, edge_params, vertex_params=None,
                         coarse_params=None, trace: list | None = None) -> Separator3:
    """Separator from the multilevel edge pipeline: bisect, take the minimum cover, then refine once.

    The vertex agent (if given) runs a single episode on the full graph, so
    the result is never worse than the cover itself.
    """
    if not g.is_connected():
        raise DisconnectedGraphError("edge_cover_separator expects a connected graph")
    if g.n < 2:
        return Separator3(g, np.full(g.n, S, dtype=np.int8))
    s = edge_to_vertex_separator(g, edge_separator(g, cfg, edge_params, coarse_params))
    if vertex_params is not None:
        if isinstance(vertex_params, ParamStore):
            vertex_params = vertex_params.as_tensors(False)
        s = refine_vertex_level(g, s, vertex_params, cfg, trace)
    return s


def make_provider(cfg: RefineConfig, params=None, coarse_params=None, edge_params=None):
    """Separator provider for nested dissection.

    Without ``edge_params`` every block goes through :func:`vertex_separator`;
    with them, through :func:`edge_cover_separator`.
    """
    frozen = params.as_tensors(False) if isinstance(params, ParamStore) else params
    edge = edge_params.as_tensors(False) if isinstance(edge_params, ParamStore) else edge_params

    def provider(g: Graph) -> Separator3:
        local = replace(cfg, n_min=min(cfg.n_min, max(4, g.n // 2)))
        if edge is not None:
            return edge_cover_separator(g, local, edge, frozen, coarse_params)
        return vertex_separator(g, local, frozen, coarse_params)

    return provider
