"""Graph representation, partition state and partition-quality metrics.

Node sets are returned as sorted ``int64`` arrays. Labels are stored as
``int8`` arrays with ``A = 0``, ``B = 1`` and (for three-way labelings) ``S = 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegeneratePartitionError, InvalidSeparatorError

A, B, S = 0, 1, 2
LABEL_NAMES = "ABS"


class Graph:
    """Immutable simple undirected graph in compressed adjacency form.

    Use :meth:`from_edges` or :meth:`from_matrix` to build one; the plain
    constructor trusts that ``indptr``/``indices`` are already symmetric,
    sorted and free of self-loops and duplicates.
    """

    __slots__ = ("indptr", "indices", "n", "m", "degree", "__dict__")

    def __init__(self, indptr: np.ndarray, indices: np.ndarray):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.n = len(self.indptr) - 1
        self.m = len(self.indices) // 2
        self.degree = np.diff(self.indptr)
        self.indptr.flags.writeable = False
        self.indices.flags.writeable = False
        self.degree.flags.writeable = False

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        """Build from any iterable of (u, v) pairs; self-loops and duplicates are dropped."""
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        if e.size == 0:
            return cls(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
        e = e.reshape(-1, 2)
        if e.min() < 0 or e.max() >= n:
            raise ValueError("edge endpoint out of range")
        u = np.concatenate([e[:, 0], e[:, 1]])
        v = np.concatenate([e[:, 1], e[:, 0]])
        keep = u != v
        key = np.unique(u[keep] * n + v[keep])
        rows, cols = key // n, key % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(np.cumsum(indptr), cols)

    @classmethod
    def from_matrix(cls, mat) -> "Graph":
        """Graph of the symmetrized off-diagonal sparsity pattern of a square matrix."""
        mat = sp.coo_matrix(mat)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("matrix must be square")
        return cls.from_edges(mat.shape[0], np.column_stack([mat.row, mat.col]))

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @cached_property
    def csr(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    @cached_property
    def adj(self) -> list[list[int]]:
        """Neighbor lists as Python lists, for loop-heavy algorithms."""
        ip = self.indptr.tolist()
        ind = self.indices.tolist()
        return [ind[ip[i]:ip[i + 1]] for i in range(self.n)]

    @cached_property
    def edge_array(self) -> np.ndarray:
        """(m, 2) array of edges with u < v, sorted."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), self.degree)
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    @cached_property
    def mean_operator(self) -> sp.csr_matrix:
        """Row-normalized adjacency; rows of isolated nodes are zero."""
        deg = self.degree.astype(float)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        data = np.repeat(inv, self.degree)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def component_labels(self) -> tuple[int, np.ndarray]:
        if self.n == 0:
            return 0, np.zeros(0, dtype=np.int64)
        k, lab = connected_components(self.csr, directed=False)
        return k, lab.astype(np.int64)

    def is_connected(self) -> bool:
        return self.n > 0 and self.component_labels()[0] == 1

    def induced(self, nodes: np.ndarray) -> "Graph":
        """Induced subgraph on ``nodes`` (local id i <-> nodes[i])."""
        nodes = np.asarray(nodes, dtype=np.int64)
        sub = self.csr[nodes][:, nodes].tocsr()
        sub.sort_indices()
        return Graph(sub.indptr, sub.indices)

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    __hash__ = None


def _as_node_array(nodes, n: int | None = None) -> np.ndarray:
    arr = np.asarray(list(nodes) if not isinstance(nodes, np.ndarray) else nodes)
    if arr.dtype == bool:
        return np.flatnonzero(arr)
    return np.unique(arr.astype(np.int64))


class Bisection:
    """Two-way labeling with cached volumes, cardinalities and cut size."""

    def __init__(self, g: Graph, label):
        label = np.asarray(label, dtype=np.int8).copy()
        if label.shape != (g.n,) or np.any((label != A) & (label != B)):
            raise ValueError("bisection labels must be 0 (A) or 1 (B) for every node")
        self.g = g
        self.label = label
        self.recompute()

    @classmethod
    def from_part(cls, g: Graph, part_a) -> "Bisection":
        label = np.ones(g.n, dtype=np.int8)
        label[_as_node_array(part_a)] = A
        return cls(g, label)

    def recompute(self) -> None:
        g, lab = self.g, self.label
        self.vol_a = int(g.degree[lab == A].sum())
        self.vol_b = int(g.degree[lab == B].sum())
        self.card_a = int(np.count_nonzero(lab == A))
        self.card_b = g.n - self.card_a
        e = g.edge_array
        self.cut = int(np.count_nonzero(lab[e[:, 0]] != lab[e[:, 1]]))

    def copy(self) -> "Bisection":
        other = object.__new__(Bisection)
        other.g = self.g
        other.label = self.label.copy()
        other.vol_a, other.vol_b = self.vol_a, self.vol_b
        other.card_a, other.card_b = self.card_a, self.card_b
        other.cut = self.cut
        return other

    def nc(self) -> float:
        """Normalized cut from the cached values."""
        if self.vol_a == 0 or self.vol_b == 0:
            raise DegeneratePartitionError("normalized cut needs two parts with positive volume")
        return self.cut * (1.0 / self.vol_a + 1.0 / self.vol_b)

    def balance(self) -> float:
        if self.vol_a == 0 or self.vol_b == 0:
            return float("inf")
        return max(self.vol_a / self.vol_b, self.vol_b / self.vol_a)

    def part(self, side: int) -> np.ndarray:
        return np.flatnonzero(self.label == side)


class Separator3:
    """Three-way labeling (A, B, S) with cached cardinalities."""

    def __init__(self, g: Graph, label):
        label = np.asarray(label, dtype=np.int8).copy()
        if label.shape != (g.n,) or np.any((label < 0) | (label > 2)):
            raise ValueError("separator labels must be 0 (A), 1 (B) or 2 (S) for every node")
        self.g = g
        self.label = label
        self.recompute()

    def recompute(self) -> None:
        counts = np.bincount(self.label, minlength=3)
        self.card_a, self.card_b, self.card_s = (int(c) for c in counts[:3])

    def copy(self) -> "Separator3":
        other = object.__new__(Separator3)
        other.g = self.g
        other.label = self.label.copy()
        other.card_a, other.card_b, other.card_s = self.card_a, self.card_b, self.card_s
        return other

    def ns(self) -> float:
        """Normalized separator from cached cardinalities (validity not checked)."""
        if self.card_a == 0 or self.card_b == 0:
            raise DegeneratePartitionError("normalized separator needs non-empty A and B")
        return self.card_s * (1.0 / self.card_a + 1.0 / self.card_b)

    def is_valid(self) -> bool:
        e = self.g.edge_array
        la, lb = self.label[e[:, 0]], self.label[e[:, 1]]
        return not np.any(((la == A) & (lb == B)) | ((la == B) & (lb == A)))

    def part(self, side: int) -> np.ndarray:
        return np.flatnonzero(self.label == side)


@dataclass(frozen=True)
class Subgraph:
    """Induced subgraph with the parent ids of its nodes and its boundary flags."""

    nodes: np.ndarray
    graph: Graph
    boundary: np.ndarray
    parent: Graph

    @property
    def n(self) -> int:
        return self.graph.n

    def local_index(self) -> np.ndarray:
        """Parent-sized map from parent id to local id (-1 if absent)."""
        idx = np.full(self.parent.n, -1, dtype=np.int64)
        idx[self.nodes] = np.arange(len(self.nodes))
        return idx


# ---------------------------------------------------------------- metrics

def cut_size(g: Graph, b: Bisection) -> int:
    e = g.edge_array
    return int(np.count_nonzero(b.label[e[:, 0]] != b.label[e[:, 1]]))


def volume(g: Graph, part) -> int:
    return int(g.degree[_as_node_array(part)].sum())


def normalized_cut(g: Graph, b: Bisection) -> float:
    vol_a = volume(g, b.label == A)
    vol_b = volume(g, b.label == B)
    if vol_a == 0 or vol_b == 0:
        raise DegeneratePartitionError("normalized cut needs two parts with positive volume")
    return cut_size(g, b) * (1.0 / vol_a + 1.0 / vol_b)


def normalized_separator(g: Graph, s: Separator3) -> float:
    if not s.is_valid():
        raise InvalidSeparatorError("an edge joins A and B")
    card = np.bincount(s.label, minlength=3)
    if card[A] == 0 or card[B] == 0:
        raise DegeneratePartitionError("normalized separator needs non-empty A and B")
    return card[S] * (1.0 / card[A] + 1.0 / card[B])


def cut_frontier(g: Graph, b: Bisection) -> np.ndarray:
    e = g.edge_array
    crossing = b.label[e[:, 0]] != b.label[e[:, 1]]
    return np.unique(e[crossing].ravel())


def k_hop_subgraph(g: Graph, seeds, k: int = 3) -> Subgraph:
    """Induced subgraph on all nodes within ``k`` hops of ``seeds``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    seeds = _as_node_array(seeds)
    inside = np.zeros(g.n, dtype=bool)
    inside[seeds] = True
    frontier = seeds
    csr = g.csr
    for _ in range(k):
        if len(frontier) == 0:
            break
        reach = np.unique(csr[frontier].indices)
        frontier = reach[~inside[reach]]
        inside[frontier] = True
    nodes = np.flatnonzero(inside)
    sub = g.induced(nodes)
    boundary = g.degree[nodes] != sub.degree
    return Subgraph(nodes=nodes, graph=sub, boundary=boundary, parent=g)


def side_neighbor_counts(g: Graph, label: np.ndarray, rows=None) -> tuple[np.ndarray, np.ndarray]:
    """Number of A-labeled and B-labeled neighbors per node (or per node in ``rows``)."""
    mat = g.csr if rows is None else g.csr[rows]
    return mat @ (label == A).astype(float), mat @ (label == B).astype(float)


def essential_separator_nodes(g: Graph, s: Separator3) -> np.ndarray:
    """Separator nodes with at least one neighbor in A and one in B."""
    in_s = np.flatnonzero(s.label == S)
    if len(in_s) == 0:
        return in_s
    na, nb = side_neighbor_counts(g, s.label, in_s)
    return in_s[(na > 0) & (nb > 0)]


def move_node_edge(b: Bisection, g: Graph, v: int) -> float:
    """Flip node ``v`` to the other part, updating caches from adj(v) only.

    Returns the decrease in normalized cut.
    """
    side = b.label[v]
    if (side == A and b.card_a == 1) or (side == B and b.card_b == 1):
        raise DegeneratePartitionError(f"moving node {v} would empty its part")
    before = b.nc()
    nbrs = g.neighbors(v)
    same = int(np.count_nonzero(b.label[nbrs] == side))
    d = int(g.degree[v])
    b.cut += same - (d - same)
    if side == A:
        b.label[v] = B
        b.vol_a -= d
        b.vol_b += d
        b.card_a -= 1
        b.card_b += 1
    else:
        b.label[v] = A
        b.vol_b -= d
        b.vol_a += d
        b.card_b -= 1
        b.card_a += 1
    return before - b.nc()


def balance(b: Bisection) -> float:
    return b.balance()
