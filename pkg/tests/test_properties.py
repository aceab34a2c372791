"""Property-based checks of the structural invariants."""
import numpy as np
from hypothesis import given, settings, strategies as st

from drlpart.a2c import discounted_returns, normalize_returns
from drlpart.coarsen import heavy_edge_matching, interpolate_bisection
from drlpart.dataio import generate_delaunay
from drlpart.graph import Bisection, Graph, move_node_edge
from drlpart.ordering import (Permutation, SparsePattern, dense_symbolic_fill, is_permutation, minimum_degree,
                              nested_dissection, symbolic_fill)
from drlpart.vertex_sep import apply_action_vertex, edge_to_vertex_separator


@st.composite
def graphs(draw, min_n=2, max_n=16):
    n = draw(st.integers(min_n, max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return Graph.from_edges(n, [p for p, k in zip(pairs, keep) if k])


@st.composite
def graph_and_labels(draw, sides=2):
    g = draw(graphs())
    lab = draw(st.lists(st.integers(0, sides - 1), min_size=g.n, max_size=g.n))
    return g, np.array(lab, dtype=np.int8)


@settings(max_examples=60, deadline=None)
@given(graph_and_labels())
def test_nc_bounds_and_handshake(data):
    g, lab = data
    b = Bisection(g, lab)
    assert b.vol_a + b.vol_b == 2 * g.m
    if b.vol_a and b.vol_b:
        assert 0.0 <= b.nc() <= 2.0


@settings(max_examples=60, deadline=None)
@given(graph_and_labels(), st.data())
def test_incremental_move(data, draw):
    g, lab = data
    b = Bisection(g, lab)
    v = draw.draw(st.integers(0, g.n - 1))
    side = b.label[v]
    if (side == 0 and b.card_a <= 1) or (side == 1 and b.card_b <= 1) or g.degree[v] == 0:
        return
    if b.vol_a == 0 or b.vol_b == 0:
        return
    if (side == 0 and b.vol_a == g.degree[v]) or (side == 1 and b.vol_b == g.degree[v]):
        return
    before = b.nc()
    r = move_node_edge(b, g, v)
    fresh = Bisection(g, b.label)
    assert (b.cut, b.vol_a, b.vol_b) == (fresh.cut, fresh.vol_a, fresh.vol_b)
    assert np.isclose(r, before - fresh.nc())


@settings(max_examples=60, deadline=None)
@given(graph_and_labels())
def test_cover_is_valid_and_keeps_labels(data):
    g, lab = data
    b = Bisection(g, lab)
    s = edge_to_vertex_separator(g, b)
    assert s.is_valid()
    assert np.all((s.label == 2) | (s.label == b.label))


@settings(max_examples=40, deadline=None)
@given(graph_and_labels(), st.lists(st.integers(0, 15), max_size=30))
def test_vertex_actions_preserve_validity(data, moves):
    g, lab = data
    s = edge_to_vertex_separator(g, Bisection(g, lab))
    for v in moves:
        v %= g.n
        if s.card_a <= 1 or s.card_b <= 1:
            break
        if s.label[v] == 2:
            nb = s.label[g.neighbors(v)]
            if (nb == 0).any() and (nb == 1).any():
                continue
        apply_action_vertex(v, g, s)
        assert s.is_valid()


@settings(max_examples=40, deadline=None)
@given(graphs(), st.integers(0, 2**31 - 1))
def test_symbolic_fill_matches_dense(g, seed):
    perm = Permutation(np.random.default_rng(seed).permutation(g.n))
    pat = SparsePattern.from_graph(g)
    assert symbolic_fill(pat, perm) == dense_symbolic_fill(pat, perm)


@settings(max_examples=40, deadline=None)
@given(graphs(min_n=1, max_n=30), st.integers(2, 12))
def test_orderings_are_permutations(g, n_min):
    assert is_permutation(minimum_degree(g).p, g.n)
    assert is_permutation(nested_dissection(g, n_min).p, g.n)


@settings(max_examples=40, deadline=None)
@given(graphs(), st.integers(0, 1000))
def test_coarsening_preserves_volume_and_cut(g, seed):
    lvl = heavy_edge_matching(g, seed=seed)
    assert lvl.cluster_size.sum() == g.n
    lab = np.random.default_rng(seed).integers(0, 2, lvl.coarse.n)
    coarse = Bisection(lvl.coarse, lab)
    fine = interpolate_bisection(lvl, coarse)
    # cut edges never get lost by interpolation, they can only be merged in the coarse graph
    assert fine.cut >= coarse.cut


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(0, 1))
def test_returns_properties(rewards, gamma):
    R = discounted_returns(rewards, gamma)
    assert len(R) == len(rewards)
    assert np.isclose(R[-1], rewards[-1])
    Z = normalize_returns(R)
    if len(R) > 1 and np.std(R) > 1e-6:
        assert abs(Z.mean()) < 1e-6 and abs(Z.std() - 1) < 1e-4


@settings(max_examples=10, deadline=None)
@given(st.integers(3, 150), st.integers(0, 10**6))
def test_delaunay_planar_connected(n, seed):
    g = generate_delaunay(n, seed)
    assert g.is_connected()
    assert g.m <= max(3, 3 * n - 6)
