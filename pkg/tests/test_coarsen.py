import numpy as np
import pytest

from drlpart.coarsen import (chain_length_bound, coarsening_chain, heavy_edge_matching,
                             interpolate_bisection, interpolate_separator)
from drlpart.errors import InvalidSeparatorError
from drlpart.graph import A, B, S, Bisection, Graph, Separator3

from conftest import path_graph, random_graph


def test_matching_path_identity_order():
    lvl = heavy_edge_matching(path_graph(4), order=np.arange(4))
    assert lvl.fine2coarse.tolist() == [0, 0, 1, 1]
    assert lvl.coarse.n == 2 and lvl.coarse.m == 1
    assert lvl.cluster_size.tolist() == [2, 2]


def test_matching_single_node():
    g = Graph.from_edges(1, [])
    lvl = heavy_edge_matching(g, seed=0)
    assert lvl.coarse == g


def test_matching_is_valid(rng):
    for _ in range(20):
        g = random_graph(30, 0.15, rng)
        lvl = heavy_edge_matching(g, seed=int(rng.integers(1000)))
        sizes = np.bincount(lvl.fine2coarse)
        assert sizes.max() <= 2
        for c in np.flatnonzero(sizes == 2):
            u, v = np.flatnonzero(lvl.fine2coarse == c)
            assert v in g.neighbors(u)
        # every coarse edge comes from a fine edge between different clusters
        want = {tuple(sorted(x)) for x in lvl.fine2coarse[g.edge_array].tolist() if x[0] != x[1]}
        assert {tuple(x) for x in lvl.coarse.edge_array.tolist()} == want


def test_matching_deterministic_under_seed():
    g = path_graph(40)
    a = heavy_edge_matching(g, seed=5).fine2coarse
    b = heavy_edge_matching(g, seed=5).fine2coarse
    assert np.array_equal(a, b)


def test_interpolate_bisection():
    lvl = heavy_edge_matching(path_graph(4), order=np.arange(4))
    fine = interpolate_bisection(lvl, Bisection(lvl.coarse, [A, B]))
    assert fine.label.tolist() == [A, A, B, B]
    fine = interpolate_bisection(lvl, Bisection(lvl.coarse, [A, A]))
    assert fine.label.tolist() == [A] * 4


def test_interpolate_separator():
    lvl = heavy_edge_matching(path_graph(6), order=np.arange(6))
    fine = interpolate_separator(lvl, Separator3(lvl.coarse, [A, S, B]))
    assert fine.label.tolist() == [A, A, S, S, B, B] and fine.is_valid()
    fine = interpolate_separator(lvl, Separator3(lvl.coarse, [S, S, S]))
    assert fine.label.tolist() == [S] * 6
    with pytest.raises(InvalidSeparatorError):
        interpolate_separator(lvl, Separator3(lvl.coarse, [A, B, S]))


def test_interpolated_random_separator_is_valid(rng):
    for _ in range(20):
        g = random_graph(25, 0.15, rng)
        lvl = heavy_edge_matching(g, seed=1)
        lab = rng.integers(0, 2, lvl.coarse.n).astype(np.int8)
        e = lvl.coarse.edge_array
        bad = e[lab[e[:, 0]] != lab[e[:, 1]]]
        lab[bad[:, 0]] = S
        assert interpolate_separator(lvl, Separator3(lvl.coarse, lab)).is_valid()


def test_chain_path_of_eight():
    chain = coarsening_chain(path_graph(8), 3, seed=0)
    assert [lvl.coarse.n for lvl in chain][-1] == 2
    assert len(chain) in (2, 3)


def test_chain_small_graph_empty():
    assert coarsening_chain(path_graph(5), 10, seed=0) == []


def test_chain_length_bounded(rng):
    g = random_graph(200, 0.03, rng)
    chain = coarsening_chain(g, 10, seed=0)
    assert chain[-1].coarse.n < 10 or chain[-1].coarse.n == chain[-1].fine.n
    assert chain_length_bound(200, 10) == 5


def test_chain_bad_n_min():
    with pytest.raises(ValueError):
        coarsening_chain(path_graph(4), 1)
