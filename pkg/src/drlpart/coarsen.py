"""Matching-based graph coarsening and interpolation of labelings to finer graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSeparatorError
from .graph import Bisection, Graph, Separator3


@dataclass(frozen=True)
class CoarseLevel:
    fine: Graph
    coarse: Graph
    fine2coarse: np.ndarray
    cluster_size: np.ndarray


def heavy_edge_matching(g: Graph, seed=None, order=None) -> CoarseLevel:
    """Pair each node with an unmatched neighbor, visiting nodes in random order.

    The graphs are unweighted, so among unmatched neighbors the one with the
    fewest unmatched neighbors of its own is chosen (ties to the lowest id).
    Pass ``order`` to fix the visiting order instead of drawing it from ``seed``.
    """
    n = g.n
    if order is None:
        order = np.random.default_rng(seed).permutation(n)
    adj = g.adj
    free_deg = g.degree.tolist()
    f2c = [-1] * n
    nc = 0
    for v in np.asarray(order).tolist():
        if f2c[v] >= 0:
            continue
        best, best_deg = -1, 0
        for w in adj[v]:
            if f2c[w] < 0 and (best < 0 or free_deg[w] < best_deg or (free_deg[w] == best_deg and w < best)):
                best, best_deg = w, free_deg[w]
        f2c[v] = nc
        for w in adj[v]:
            free_deg[w] -= 1
        if best >= 0:
            f2c[best] = nc
            for w in adj[best]:
                free_deg[w] -= 1
        nc += 1
    fine2coarse = np.asarray(f2c, dtype=np.int64)
    e = g.edge_array
    coarse = Graph.from_edges(nc, fine2coarse[e]) if len(e) else Graph.from_edges(nc, [])
    sizes = np.bincount(fine2coarse, minlength=nc)
    return CoarseLevel(fine=g, coarse=coarse, fine2coarse=fine2coarse, cluster_size=sizes)


def interpolate_bisection(lvl: CoarseLevel, coarse_b: Bisection) -> Bisection:
    return Bisection(lvl.fine, coarse_b.label[lvl.fine2coarse])


def interpolate_separator(lvl: CoarseLevel, coarse_s: Separator3) -> Separator3:
    if not coarse_s.is_valid():
        raise InvalidSeparatorError("coarse separator has an A-B edge")
    return Separator3(lvl.fine, coarse_s.label[lvl.fine2coarse])


def coarsening_chain(g: Graph, n_min: int, seed=None) -> list[CoarseLevel]:
    """Coarsen repeatedly until the coarsest graph has fewer than ``n_min`` nodes.

    Stops early when a matching step no longer shrinks the graph.
    """
    if n_min < 2:
        raise ValueError("n_min must be at least 2")
    rng = np.random.default_rng(seed)
    chain: list[CoarseLevel] = []
    cur = g
    while cur.n >= n_min:
        lvl = heavy_edge_matching(cur, order=rng.permutation(cur.n))
        if lvl.coarse.n == cur.n:
            break
        chain.append(lvl)
        cur = lvl.coarse
    return chain


def chain_length_bound(n: int, n_min: int) -> int:
    return max(0, math.ceil(math.log2(n / n_min))) if n >= n_min else 0
