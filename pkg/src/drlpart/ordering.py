"""Fill-reducing orderings and symbolic factorization.

Fill is measured by symmetric symbolic Cholesky analysis of the permuted
pattern: no pivoting, so the factor L has the same structure whichever
numerical values the matrix carries. LU nonzeros are reported as
``2 * nnz(L) - n`` (L and U share the diagonal).
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import NonSquareError
from .graph import A, B, S, Graph, Separator3


class Permutation:
    """``p[k]`` is the old index placed at new position ``k``."""

    def __init__(self, p):
        p = np.asarray(p, dtype=np.int64)
        n = len(p)
        inv = np.full(n, -1, dtype=np.int64)
        if n and (p.min() < 0 or p.max() >= n):
            raise ValueError("permutation entry out of range")
        inv[p] = np.arange(n)
        if np.any(inv < 0):
            raise ValueError("not a permutation: repeated entries")
        self.p = p
        self.inverse = inv

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def __len__(self) -> int:
        return len(self.p)

    def compose(self, other: "Permutation") -> "Permutation":
        """Apply ``self`` first, then reorder the result by ``other``."""
        return Permutation(self.p[other.p])

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and np.array_equal(self.p, other.p)

    __hash__ = None


def is_permutation(p, n: int | None = None) -> bool:
    p = np.asarray(p)
    n = len(p) if n is None else n
    return len(p) == n and np.array_equal(np.sort(p), np.arange(n))


class SparsePattern:
    """Symmetric sparsity structure with an implicit full diagonal."""

    def __init__(self, mat: sp.spmatrix, symmetrize: bool = True):
        mat = sp.csr_matrix(mat)
        if mat.shape[0] != mat.shape[1]:
            raise NonSquareError(f"pattern must be square, got {mat.shape}")
        s = sp.csr_matrix((np.ones(mat.nnz, dtype=bool), mat.indices, mat.indptr), shape=mat.shape)
        if symmetrize:
            s = (s + s.T).tocsr()
        s.setdiag(False)
        s.eliminate_zeros()
        s.sort_indices()
        self.n = s.shape[0]
        self.mat = s

    @classmethod
    def from_graph(cls, g: Graph) -> "SparsePattern":
        return cls(g.csr, symmetrize=False)

    @property
    def nnz(self) -> int:
        """Structural nonzeros of the full matrix, diagonal included."""
        return int(self.mat.nnz) + self.n

    @property
    def nnz_lower(self) -> int:
        return int(self.mat.nnz) // 2 + self.n

    def is_symmetric(self) -> bool:
        return (self.mat != self.mat.T).nnz == 0

    def graph(self) -> Graph:
        return Graph(self.mat.indptr, self.mat.indices)

    def permute(self, perm: Permutation) -> "SparsePattern":
        """Pattern of P^T A P."""
        q = perm.p
        m = self.mat[q][:, q]
        return SparsePattern(m, symmetrize=False)


# ---------------------------------------------------------------- symbolic factorization

def elimination_tree(indptr, indices, n: int) -> list[int]:
    """Parent array of the elimination tree of a symmetric pattern."""
    parent = [-1] * n
    ancestor = [-1] * n
    ip = indptr.tolist() if hasattr(indptr, "tolist") else indptr
    ind = indices.tolist() if hasattr(indices, "tolist") else indices
    for k in range(n):
        for pos in range(ip[k], ip[k + 1]):
            i = ind[pos]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


def postorder(parent: list[int]) -> list[int]:
    n = len(parent)
    head = [-1] * n
    nxt = [-1] * n
    for j in range(n - 1, -1, -1):
        p = parent[j]
        if p != -1:
            nxt[j] = head[p]
            head[p] = j
    post = []
    for root in range(n):
        if parent[root] != -1:
            continue
        stack = [root]
        while stack:
            p = stack[-1]
            child = head[p]
            if child == -1:
                stack.pop()
                post.append(p)
            else:
                head[p] = nxt[child]
                stack.append(child)
    return post


def column_counts(indptr, indices, parent: list[int], post: list[int]) -> list[int]:
    """Nonzeros per column of L (diagonal included) by the skeleton/least-common-ancestor method."""
    n = len(parent)
    ip = indptr.tolist()
    ind = indices.tolist()
    first = [-1] * n
    maxfirst = [-1] * n
    prevleaf = [-1] * n
    ancestor = list(range(n))
    delta = [0] * n
    for k in range(n):
        j = post[k]
        delta[j] = 1 if first[j] == -1 else 0
        while j != -1 and first[j] == -1:
            first[j] = k
            j = parent[j]
    for k in range(n):
        j = post[k]
        if parent[j] != -1:
            delta[parent[j]] -= 1
        fj = first[j]
        for pos in range(ip[j], ip[j + 1]):
            i = ind[pos]
            if i <= j or fj <= maxfirst[i]:
                continue
            maxfirst[i] = fj
            jprev = prevleaf[i]
            prevleaf[i] = j
            delta[j] += 1
            if jprev == -1:
                continue
            q = jprev
            while q != ancestor[q]:
                q = ancestor[q]
            s = jprev
            while s != q:
                sp_ = ancestor[s]
                ancestor[s] = q
                s = sp_
            delta[q] -= 1
        if parent[j] != -1:
            ancestor[j] = parent[j]
    for j in range(n):
        if parent[j] != -1:
            delta[parent[j]] += delta[j]
    return delta


@dataclass
class FillStats:
    n: int
    nnz: int
    nnz_factor: int
    fill_count: int

    @property
    def lu_nnz(self) -> int:
        return 2 * self.nnz_factor - self.n


def symbolic_fill(pattern: SparsePattern, perm: Permutation | None = None) -> FillStats:
    """Symbolic Cholesky of the (permuted) pattern: factor size and fill-in."""
    pp = pattern if perm is None else pattern.permute(perm)
    m = pp.mat
    parent = elimination_tree(m.indptr, m.indices, pp.n)
    post = postorder(parent)
    counts = column_counts(m.indptr, m.indices, parent, post)
    nnz_l = int(sum(counts))
    return FillStats(n=pp.n, nnz=pattern.nnz, nnz_factor=nnz_l, fill_count=nnz_l - pp.nnz_lower)


def dense_symbolic_fill(pattern: SparsePattern, perm: Permutation | None = None) -> FillStats:
    """Reference: Boolean Gaussian elimination on a dense matrix (small n only)."""
    pp = pattern if perm is None else pattern.permute(perm)
    n = pp.n
    M = pp.mat.toarray().astype(bool) | np.eye(n, dtype=bool)
    for k in range(n):
        rows = np.flatnonzero(M[k + 1:, k]) + k + 1
        if len(rows):
            M[np.ix_(rows, rows)] = True
    nnz_l = int(np.tril(M).sum())
    return FillStats(n=n, nnz=pattern.nnz, nnz_factor=nnz_l, fill_count=nnz_l - pp.nnz_lower)


# ---------------------------------------------------------------- minimum degree

def minimum_degree(g: Graph) -> Permutation:
    """Exact minimum degree ordering on the quotient graph (ties to the lowest id).

    Eliminated nodes become elements; a variable's degree is the size of the
    union of its variable neighbors and the variables of its adjacent elements.
    """
    n = g.n
    var_adj = [set(a) for a in g.adj]
    elem_adj: list[set[int]] = [set() for _ in range(n)]
    elem_vars: dict[int, set[int]] = {}
    degree = [len(a) for a in var_adj]
    heap = [(degree[v], v) for v in range(n)]
    heapq.heapify(heap)
    done = [False] * n
    order = []
    while heap:
        d, p = heapq.heappop(heap)
        if done[p] or d != degree[p]:
            continue
        done[p] = True
        order.append(p)
        reach = set(var_adj[p])
        for e in elem_adj[p]:
            reach |= elem_vars.pop(e)
        reach.discard(p)
        absorbed = elem_adj[p]
        elem_vars[p] = reach
        for i in reach:
            ea = elem_adj[i]
            ea -= absorbed
            ea.add(p)
            va = var_adj[i]
            va.discard(p)
            va -= reach
        for i in reach:
            u = set(var_adj[i])
            for e in elem_adj[i]:
                u |= elem_vars[e]
            u.discard(i)
            nd = len(u)
            if nd != degree[i]:
                degree[i] = nd
                heapq.heappush(heap, (nd, i))
        var_adj[p] = set()
        elem_adj[p] = set()
    return Permutation(order)


# ---------------------------------------------------------------- nested dissection

SeparatorProvider = Callable[[Graph], Separator3]


def nested_dissection(g: Graph, n_min: int = 100, provider: SeparatorProvider | None = None) -> Permutation:
    """Nested dissection with an explicit work stack.

    Blocks smaller than ``n_min`` (or whose separator is degenerate) are
    ordered by :func:`minimum_degree`; disconnected blocks are split into
    components ordered one after another. Otherwise the A block is ordered,
    then the B block, then the separator.
    """
    if provider is None:
        from .vertex_sep import fallback_separator
        provider = fallback_separator
    order: list[int] = []
    stack: list[tuple[str, np.ndarray]] = [("order", np.arange(g.n, dtype=np.int64))]
    while stack:
        kind, nodes = stack.pop()
        if kind == "emit":
            order.extend(nodes.tolist())
            continue
        if len(nodes) == 0:
            continue
        sub = g.induced(nodes) if len(nodes) < g.n else g
        if len(nodes) < n_min:
            order.extend(nodes[minimum_degree(sub).p].tolist())
            continue
        ncomp, comp = sub.component_labels()
        if ncomp > 1:
            for c in range(ncomp - 1, -1, -1):
                stack.append(("order", nodes[comp == c]))
            continue
        sep = provider(sub)
        if sep.card_a == 0 or sep.card_b == 0 or not sep.is_valid():
            order.extend(nodes[minimum_degree(sub).p].tolist())
            continue
        stack.append(("emit", nodes[sep.label == S]))
        stack.append(("order", nodes[sep.label == B]))
        stack.append(("order", nodes[sep.label == A]))
    return Permutation(order)


# ---------------------------------------------------------------- driver

@dataclass
class FillRecord:
    matrix_id: str
    n: int
    nnz: int
    ordering: str
    factor_nnz: int
    fill: int
    wall_time: float

    def to_line(self) -> str:
        return (f"{self.matrix_id}\t{self.n}\t{self.nnz}\t{self.ordering}\t{self.factor_nnz}\t"
                f"{self.fill}\t{self.wall_time:.6f}")


FILL_HEADER = "matrix_id\tn\tnnz\tordering\tfactor_nnz\tfill\twall_time"


def as_pattern(a) -> SparsePattern:
    if isinstance(a, SparsePattern):
        return a
    mat = sp.csr_matrix(a)
    if mat.shape[0] != mat.shape[1]:
        raise NonSquareError(f"matrix must be square, got {mat.shape}")
    return SparsePattern(mat, symmetrize=True)


def order_matrix(a, n_min: int = 100, provider: SeparatorProvider | None = None,
                 matrix_id: str = "matrix") -> tuple[Permutation, list[FillRecord]]:
    """Symmetrize, order by nested dissection and report symbolic fill before and after.

    Factor sizes come from symmetric symbolic analysis (no pivoting).
    """
    pattern = as_pattern(a)
    records = []
    t0 = time.perf_counter()
    natural = symbolic_fill(pattern)
    records.append(FillRecord(matrix_id, pattern.n, pattern.nnz, "natural", natural.lu_nnz,
                              natural.lu_nnz - pattern.nnz, time.perf_counter() - t0))
    t0 = time.perf_counter()
    perm = nested_dissection(pattern.graph(), n_min, provider)
    stats = symbolic_fill(pattern, perm)
    records.append(FillRecord(matrix_id, pattern.n, pattern.nnz, "nested_dissection", stats.lu_nnz,
                              stats.lu_nnz - pattern.nnz, time.perf_counter() - t0))
    return perm, records


def evaluate_orderings(pattern: SparsePattern, orderings: dict[str, Callable[[Graph], Permutation]],
                       matrix_id: str = "matrix") -> list[FillRecord]:
    """One fill record per named ordering; wall time covers ordering plus analysis."""
    g = pattern.graph()
    out = []
    for name, fn in orderings.items():
        t0 = time.perf_counter()
        perm = None if fn is None else fn(g)
        stats = symbolic_fill(pattern, perm)
        out.append(FillRecord(matrix_id, pattern.n, pattern.nnz, name, stats.lu_nnz,
                              stats.lu_nnz - pattern.nnz, time.perf_counter() - t0))
    return out
