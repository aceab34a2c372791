import itertools

import numpy as np
import pytest

from drlpart.a2c import Learner, TrainConfig
from drlpart.coarsen import coarsening_chain, interpolate_bisection
from drlpart.edge_sep import (RefineConfig, build_edge_features, coarse_edge_separator, edge_separator,
                              greedy_fallback_partition, greedy_refine, multilevel_greedy_bisection, peak_prefix,
                              refine_episode, solve_coarsest, train_coarse_episode, train_edge_episode)
from drlpart.errors import DisconnectedGraphError
from drlpart.graph import A, B, Bisection, Graph, cut_frontier, k_hop_subgraph
from drlpart.nn import coarse_agent_params, refine_agent_params

from conftest import complete_graph, grid_graph, path_graph, random_connected_graph, star_graph


def frontier_sub(g, b, k=3):
    return k_hop_subgraph(g, cut_frontier(g, b), k)


class TestPeakPrefix:
    def test_all_negative(self):
        assert peak_prefix([-1.0, -0.5]) == 0

    def test_peak(self):
        assert peak_prefix([1.0, -2.0, 3.0, -0.1]) == 3

    def test_ties_take_shortest(self):
        assert peak_prefix([1.0, 0.0, -1.0, 1.0]) == 1

    def test_allowed(self):
        # prefix lengths 0..3; the best one (3) is not allowed
        assert peak_prefix([1.0, -2.0, 3.0], np.array([True, True, True, False])) == 1

    def test_empty(self):
        assert peak_prefix([]) == 0


class TestFeatures:
    def test_examples(self):
        g = path_graph(8)
        b = Bisection.from_part(g, range(4))
        sub = k_hop_subgraph(g, [3, 4], 2)
        F = build_edge_features(g, sub, b)
        vol = b.vol_a + b.vol_b
        row = {int(v): F[i] for i, v in enumerate(sub.nodes)}
        assert row[3].tolist() == [1, 0, 0, b.vol_a / vol, b.vol_b / vol]
        assert row[6][:3].tolist() == [0, 1, 1]
        assert np.all(F[:, 3] == F[0, 3])


class TestRefineEpisode:
    def test_replay_identity(self, rng):
        for seed in range(10):
            g = random_connected_graph(40, 0.06, np.random.default_rng(seed))
            b = greedy_fallback_partition(g)
            if b.cut == 0:
                continue
            sub = frontier_sub(g, b)
            params = refine_agent_params(5, seed).as_tensors(False)
            res = refine_episode(g, sub, b, params, "eval")
            best = max(0.0, max(np.cumsum(res.rewards), default=0.0))
            assert res.result.nc() == pytest.approx(b.nc() - best)
            assert res.result.nc() <= b.nc() + 1e-12

    def test_negative_rewards_leave_partition(self):
        g = path_graph(6)
        b = Bisection.from_part(g, range(3))
        res = refine_episode(g, frontier_sub(g, b), b, refine_agent_params(5, 0).as_tensors(False), "eval")
        assert all(r < 0 for r in res.rewards)
        assert np.array_equal(res.result.label, b.label)

    def test_boundary_never_chosen(self):
        rng = np.random.default_rng(0)
        g = grid_graph(12, 12)
        params = refine_agent_params(5, 1).as_tensors(False)
        steps = 0
        while steps < 1000:
            b = Bisection.from_part(g, [v for v in range(144) if v % 12 < 6])
            sub = frontier_sub(g, b, 1)
            res = refine_episode(g, sub, b, params, "train", rng=rng, steps=100, audit=True)
            boundary = set(sub.nodes[sub.boundary].tolist())
            assert not boundary & set(res.actions)
            steps += len(res.actions)

    def test_episode_length_defaults_to_cut(self):
        g = grid_graph(6, 6)
        b = Bisection.from_part(g, [v for v in range(36) if v % 6 < 3])
        res = refine_episode(g, frontier_sub(g, b), b, refine_agent_params(5, 0).as_tensors(False), "eval")
        assert len(res.actions) == b.cut == 6

    def test_balance_guard(self):
        rng = np.random.default_rng(4)
        g = random_connected_graph(60, 0.05, rng)
        b = greedy_fallback_partition(g)
        res = refine_episode(g, frontier_sub(g, b), b, refine_agent_params(5, 2).as_tensors(False), "eval",
                             max_balance=1.0)
        assert res.result.balance() <= max(1.0, b.balance()) + 1e-12


class TestCoarse:
    def test_path_of_four(self):
        g = path_graph(4)
        params = coarse_agent_params(2, 0).as_tensors(False)
        out = coarse_edge_separator(g, params, "eval", imbalance=1.0)
        assert out.card_a in (1, 2)
        initial = Bisection.from_part(g, [0])
        assert out.nc() <= initial.nc()

    def test_k2(self):
        g = complete_graph(2)
        out = coarse_edge_separator(g, coarse_agent_params(2, 0).as_tensors(False))
        assert out.label.tolist() == [A, B]

    def test_star_starts_at_leaf(self):
        g = star_graph(4)
        out = coarse_edge_separator(g, coarse_agent_params(2, 0).as_tensors(False))
        assert out.label[0] == B or out.card_a > 1

    def test_best_prefix_over_random_agents(self):
        g = grid_graph(4, 5)
        for seed in range(5):
            out = coarse_edge_separator(g, coarse_agent_params(2, seed).as_tensors(False))
            start = Bisection.from_part(g, [int(np.argmin(g.degree))])
            assert out.nc() <= start.nc()

    def test_too_small(self):
        with pytest.raises(ValueError):
            coarse_edge_separator(Graph.from_edges(1, []), None)

    def test_training_episode_runs(self):
        g = grid_graph(4, 4)
        store = coarse_agent_params(2, 0)
        before = store.flat()
        learner = Learner(store, TrainConfig(update_every=3))
        train_coarse_episode(g, learner, np.random.default_rng(0), RefineConfig())
        learner.flush()
        assert learner.steps == 7 and not np.array_equal(before, store.flat())


class TestGreedy:
    def test_path_of_four(self):
        b = greedy_fallback_partition(path_graph(4))
        assert sorted(b.part(b.label[0]).tolist()) == [0, 1] and b.cut == 1

    def test_k4(self):
        b = greedy_fallback_partition(complete_graph(4))
        assert b.card_a == 2 and b.cut == 4

    def test_grid_four_by_four(self):
        g = grid_graph(4, 4)
        b = greedy_fallback_partition(g)
        best = min(Bisection.from_part(g, part).cut for part in itertools.combinations(range(16), 8))
        assert best == 4 and b.cut <= 6

    def test_deterministic(self, rng):
        g = random_connected_graph(50, 0.05, rng)
        assert np.array_equal(greedy_fallback_partition(g).label, greedy_fallback_partition(g).label)

    def test_refine_never_worse(self, rng):
        for _ in range(10):
            g = random_connected_graph(40, 0.08, rng)
            b = Bisection(g, rng.integers(0, 2, 40))
            assert greedy_refine(g, b).nc() <= b.nc()

    def test_multilevel_baseline(self):
        g = grid_graph(20, 20)
        b = multilevel_greedy_bisection(g, 20, seed=0)
        assert b.balance() < 1.5 and b.cut <= 40


class TestEdgeSeparator:
    def test_ladder_not_worse_than_greedy(self):
        g = grid_graph(2, 8)
        cfg = RefineConfig(n_min=4, seed=0)
        b = edge_separator(g, cfg, refine_agent_params(5, 0))
        chain = coarsening_chain(g, cfg.n_min, cfg.seed)
        coarse = solve_coarsest(chain[-1].coarse, cfg)
        interp = coarse
        for lvl in reversed(chain):
            interp = interpolate_bisection(lvl, interp)
        interp_chain = coarse
        for lvl in reversed(chain):
            interp_chain = greedy_refine(lvl.fine, interpolate_bisection(lvl, interp_chain))
        assert b.cut <= max(greedy_refine(g, interp).cut, interp_chain.cut)

    def test_small_graph_goes_to_coarsest_solver(self):
        g = grid_graph(3, 3)
        cfg = RefineConfig(n_min=100)
        assert np.array_equal(edge_separator(g, cfg, refine_agent_params(5, 0)).label,
                              solve_coarsest(g, cfg).label)

    def test_monotone_every_level(self):
        for seed in range(5):
            g = random_connected_graph(300, 0.01, np.random.default_rng(seed))
            trace = []
            edge_separator(g, RefineConfig(n_min=20, seed=seed), refine_agent_params(5, seed), trace=trace)
            assert trace and all(t.after <= t.before + 1e-12 for t in trace)

    def test_disconnected(self):
        with pytest.raises(DisconnectedGraphError):
            edge_separator(Graph.from_edges(4, [(0, 1), (2, 3)]))

    def test_rl_coarse_solver(self):
        g = grid_graph(10, 10)
        b = edge_separator(g, RefineConfig(n_min=30), refine_agent_params(5, 0), coarse_agent_params(2, 0))
        assert 0 < b.card_a < 100

    def test_bad_config(self):
        with pytest.raises(ValueError):
            RefineConfig(n_min=2)
        with pytest.raises(ValueError):
            RefineConfig(coarse_solver="metis")

    def test_training_episode_reports_steps(self):
        g = grid_graph(12, 12)
        learner = Learner(refine_agent_params(5, 0), TrainConfig())
        train_edge_episode(g, learner, np.random.default_rng(0), RefineConfig(n_min=10))
        assert learner.steps > 0
