import math

import numpy as np
import pytest

from deeppipe import bo, gp
from deeppipe import metadata as md
from deeppipe import search_space as ss
from deeppipe.embed import ArchitectureSpec, build_network
from deeppipe.errors import ValidationError


def mc_expected_improvement(mu, sigma, y_best, n=200_000, seed=0):
    rng = np.random.default_rng(seed)
    draws = rng.normal(mu, sigma, size=n)
    gains = np.maximum(draws - y_best, 0.0)
    return gains.mean(), gains.std() / math.sqrt(n)


class TestExpectedImprovement:
    def test_deterministic_improvement(self):
        assert bo.expected_improvement(0.9, 0.0, 0.7) == pytest.approx(0.2)

    def test_deterministic_no_improvement(self):
        assert bo.expected_improvement(0.5, 0.0, 0.7) == 0.0

    def test_at_incumbent_with_unit_sigma(self):
        # closed form at z = 0 is sigma / sqrt(2 pi)
        val = bo.expected_improvement(1.0, 1.0, 1.0)
        assert val == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-12)

    def test_hopeless_candidate(self):
        assert bo.expected_improvement(-10.0, 0.01, 0.0) < 1e-12

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(1)
        for k in range(5):
            mu, sigma, best = rng.normal(), rng.uniform(0.1, 2.0), rng.normal()
            closed = bo.expected_improvement(mu, sigma**2, best)
            est, se = mc_expected_improvement(mu, sigma, best, seed=k)
            assert abs(closed - est) < 3 * se + 1e-12

    def test_negative_variance_rejected(self):
        with pytest.raises(ValidationError):
            bo.expected_improvement(0.0, -1e-3, 0.0)

    def test_argmax_invariant_under_shared_shift(self):
        rng = np.random.default_rng(2)
        mean = rng.normal(size=30)
        var = rng.uniform(0.01, 0.5, size=30)
        best = 0.4
        base = bo.expected_improvement(mean, var, best)
        shifted = bo.expected_improvement(mean + 5.0, var, best + 5.0)
        assert np.argmax(base) == np.argmax(shifted)
        assert np.allclose(base, shifted)


class TestGreedyInitialization:
    def test_dominant_pipeline_first(self):
        matrix = np.array([[0.9, 0.2, 0.5], [0.8, 0.3, 0.4], [0.95, 0.1, 0.2]])
        assert bo.greedy_initialization(matrix, 1) == [0]

    def test_complementary_specialists_beat_generalist(self):
        # ranks per (pipeline, task): p0 -> (1, 3), p1 -> (3, 1), p2 -> (2, 2)
        matrix = np.array([[0.9, 0.5, 0.7], [0.5, 0.9, 0.7]])
        picks = bo.greedy_initialization(matrix, 2)
        assert sorted(picks) == [0, 1]
        # brute-force oracle over all 2-subsets
        best = None
        for a in range(3):
            for b in range(a + 1, 3):
                from scipy.stats import rankdata

                score = 0.0
                for t in range(2):
                    r = rankdata(-matrix[t], method="average")
                    score += min(r[a], r[b])
                if best is None or score < best[0]:
                    best = (score, {a, b})
        assert set(picks) == best[1]

    def test_exhaustive_selection_returns_all(self):
        matrix = np.array([[0.3, 0.2, 0.9]])
        picks = bo.greedy_initialization(matrix, 3)
        assert sorted(picks) == [0, 1, 2]
        assert picks[0] == 2  # greedy order starts at the best

    def test_too_many_requested(self):
        with pytest.raises(ValidationError):
            bo.greedy_initialization(np.ones((2, 3)), 4)

    def test_sparse_tasks_use_worst_rank_fallback(self):
        matrix = np.array([[0.9, np.nan, 0.1], [np.nan, 0.5, 0.6]])
        picks = bo.greedy_initialization(matrix, 2)
        assert len(set(picks)) == 2


def make_bench(toy_space, n_tasks=6, n_pipelines=40, seed=0):
    spec = md.SyntheticSpec(toy_space, n_tasks=n_tasks, n_pipelines=n_pipelines, noise=0.01)
    meta = md.split_assign(md.generate_synthetic(spec, seed=seed), 0.5, 0.25, seed=seed)
    active = np.stack([ss.infer_mask(toy_space, r).active for r in meta.features])
    stats = ss.preprocess_fit(meta.features, toy_space.slot_names, toy_space, active)
    pool = bo.CandidatePool(
        np.asarray(meta.pipeline_ids),
        ss.preprocess_apply(stats, meta.features, toy_space, active),
        active,
    )
    return meta, pool


class TestBORun:
    def test_forced_single_candidate(self, toy_space):
        meta, pool = make_bench(toy_space, n_pipelines=6)
        task = meta.tasks_in("test")[0]
        oracle = lambda pid: (meta.oracle(task, pid), 1.0)
        cfg = bo.BOConfig(mode="random", n_initial=5, n_iterations=5, seed=0)
        history = bo.bo_run(cfg, pool, oracle, initial_ids=[0, 1, 2, 3, 4])
        assert history.observed_ids[5] == 5  # only one candidate left

    def test_random_mode_reproducible(self, toy_space):
        meta, pool = make_bench(toy_space)
        task = meta.tasks_in("test")[0]
        oracle = lambda pid: (meta.oracle(task, pid), 1.0)
        cfg = bo.BOConfig(mode="random", n_initial=3, n_iterations=10, seed=7)
        a = bo.bo_run(cfg, pool, oracle, initial_ids=[0, 1, 2])
        b = bo.bo_run(cfg, pool, oracle, initial_ids=[0, 1, 2])
        assert a.observed_ids == b.observed_ids

    def test_no_reobservation_and_monotone_incumbent(self, toy_space):
        meta, pool = make_bench(toy_space)
        task = meta.tasks_in("test")[0]
        oracle = lambda pid: (meta.oracle(task, pid), 1.0)
        net = build_network(
            toy_space, ArchitectureSpec(2, 1, 3, embedding_dim=6), seed=0
        )
        cfg = bo.BOConfig(mode="deeppipe", n_initial=3, n_iterations=12,
                          fine_tune_steps=10, seed=0)
        history = bo.bo_run(cfg, pool, oracle, [0, 1, 2], net=net, params=gp.KernelParams())
        ids = history.observed_ids
        assert len(ids) == len(set(ids)) == 15
        inc = history.incumbents
        assert all(a <= b for a, b in zip(inc, inc[1:]))

    def test_missing_oracle_entries_skipped(self, toy_space):
        meta, pool = make_bench(toy_space, n_pipelines=12)
        task = meta.tasks_in("test")[0]
        missing = {5, 6}
        oracle = lambda pid: (None if pid in missing else meta.oracle(task, pid), 1.0)
        cfg = bo.BOConfig(mode="random", n_initial=2, n_iterations=20, seed=3)
        history = bo.bo_run(cfg, pool, oracle, initial_ids=[0, 1])
        assert set(history.skipped) <= missing
        assert not (set(history.observed_ids) & missing)
        assert len(history.observed_ids) == 10

    def test_budget_stops_run(self, toy_space):
        meta, pool = make_bench(toy_space)
        task = meta.tasks_in("test")[0]
        oracle = lambda pid: (meta.oracle(task, pid), 2.0)
        cfg = bo.BOConfig(mode="random", n_initial=2, n_iterations=50, seed=0, budget=9.0)
        history = bo.bo_run(cfg, pool, oracle, initial_ids=[0, 1])
        # 2.0 per observation: the run must stop once the budget is exceeded
        assert history.entries[-1][2] <= 9.0 + 2.0
        assert len(history.entries) <= 5

    def test_deeppipe_needs_surrogate(self, toy_space):
        meta, pool = make_bench(toy_space)
        cfg = bo.BOConfig(mode="deeppipe")
        with pytest.raises(ValidationError):
            bo.bo_run(cfg, pool, lambda pid: (0.5, 1.0), [0])


class TestRankAndRegret:
    def test_tied_traces_share_rank(self):
        traces = {
            "a": {(0, 0): [0.5, 0.6]},
            "b": {(0, 0): [0.5, 0.6]},
        }
        ranks, regrets = bo.rank_and_regret(traces, {0: 0.8})
        assert ranks["a"] == [1.5, 1.5]
        assert ranks["b"] == [1.5, 1.5]
        assert regrets["a"] == pytest.approx([0.3, 0.2])

    def test_regret_zero_after_optimum_found(self):
        traces = {"a": {(0, 0): [0.4, 1.0, 1.0]}}
        _, regrets = bo.rank_and_regret(traces, {0: 1.0})
        assert regrets["a"] == pytest.approx([0.6, 0.0, 0.0])

    def test_hand_computed_table(self):
        # three methods, one task/seed, four iterations
        traces = {
            "m1": {(0, 0): [0.2, 0.5, 0.5, 0.9]},
            "m2": {(0, 0): [0.3, 0.4, 0.6, 0.6]},
            "m3": {(0, 0): [0.1, 0.5, 0.7, 0.9]},
        }
        ranks, _ = bo.rank_and_regret(traces, {0: 1.0})
        assert ranks["m1"] == [2.0, 1.5, 3.0, 1.5]
        assert ranks["m2"] == [1.0, 3.0, 2.0, 3.0]
        assert ranks["m3"] == [3.0, 1.5, 1.0, 1.5]

    def test_ragged_traces_rejected(self):
        traces = {
            "a": {(0, 0): [0.5, 0.6]},
            "b": {(0, 0): [0.5]},
        }
        with pytest.raises(ValidationError, match="ragged"):
            bo.rank_and_regret(traces, {0: 1.0})

    def test_grid_mismatch_rejected(self):
        traces = {
            "a": {(0, 0): [0.5]},
            "b": {(0, 1): [0.5]},
        }
        with pytest.raises(ValidationError, match="grid"):
            bo.rank_and_regret(traces, {0: 1.0})
