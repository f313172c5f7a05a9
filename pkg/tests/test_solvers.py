import itertools
import math

import numpy as np
import pytest

from semcache import (BudgetExceededError, Cache, DegenerateInstanceError,
                      DistanceMetric, QuerySpace, brute_force, cache_loss,
                      curvature, epsilon_greedy_cache, expected_loss,
                      lfu_cache, reverse_greedy, reverse_greedy_matrix)
from semcache.solvers import _rg_alive

from conftest import clustered_space, random_valid_space


def naive_reverse_greedy(space, k):
    """From-scratch re-evaluation of every removal; ties evict the highest id."""
    D, p, c = space.metric.matrix, space.arrival_probs, space.costs
    members = list(range(space.m))
    while len(members) > k:
        best_j, best_loss = None, math.inf
        for j in members:
            loss = cache_loss(D, p, c, [q for q in members if q != j])
            if loss <= best_loss:
                best_loss, best_j = loss, j
        members.remove(best_j)
    return Cache.of(members)


class TestReverseGreedy:
    def test_k_equals_m(self, three_query_space):
        res = reverse_greedy(three_query_space, 3)
        assert res.cache.members == (0, 1, 2)
        assert res.loss == 0.0
        assert res.evaluations == 0

    def test_hand_trace(self, three_query_space):
        # first removal is q1 (loss 0.03 beats 0.05 and 0.04), then q2
        assert reverse_greedy(three_query_space, 2).cache.members == (0, 2)
        res = reverse_greedy(three_query_space, 1)
        assert res.cache.members == (0,)
        assert res.loss == pytest.approx(0.07, abs=1e-12)

    def test_exact_match_returns_top_k_by_weight(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            space = random_valid_space(rng, 7, metric="threshold", epsilon=0.0)
            weight = space.arrival_probs * space.costs
            order = np.argsort(-weight, kind="stable")
            for k in range(1, 8):
                res = reverse_greedy(space, k)
                assert res.cache.members == tuple(sorted(order[:k]))
                outside = [q for q in range(7) if q not in res.cache]
                expected = float(weight[outside].sum())
                assert res.loss == pytest.approx(expected, abs=1e-12)

    def test_matches_from_scratch_evaluation(self):
        for seed in range(15):
            space = clustered_space(seed, m=int(3 + seed % 6))
            for k in range(1, space.m + 1):
                fast = reverse_greedy(space, k)
                slow = naive_reverse_greedy(space, k)
                assert fast.cache.members == slow.members
                assert fast.loss == pytest.approx(
                    expected_loss(space, slow), abs=1e-12)

    def test_degenerate_ties_keep_lowest_ids(self):
        # all-zero estimates: every removal is a tie, the highest id goes
        D = DistanceMetric.euclidean(np.random.default_rng(0).normal(size=(6, 3)))
        res = reverse_greedy_matrix(D.matrix, np.zeros(6), np.zeros(6), 2)
        assert res.cache.members == (0, 1)

    def test_uniform_everything_ties(self):
        emb = np.ones((5, 2))  # all pairwise distances collapse to 1
        p = np.full(5, 0.2)
        c = np.full(5, 0.5)
        space = QuerySpace.build(emb, p, c)
        assert reverse_greedy(space, 2).cache.members == (0, 1)

    def test_size_and_range_checks(self, three_query_space):
        with pytest.raises(ValueError, match="out of range"):
            reverse_greedy(three_query_space, 0)
        with pytest.raises(ValueError, match="out of range"):
            reverse_greedy(three_query_space, 4)

    def test_deterministic(self):
        space = clustered_space(3, m=9)
        a = reverse_greedy(space, 4)
        b = reverse_greedy(space, 4)
        assert a.cache == b.cache and a.loss == b.loss

    def test_monotone_in_k(self):
        for seed in range(8):
            space = clustered_space(seed, m=8)
            rg_losses = [reverse_greedy(space, k).loss for k in range(1, 9)]
            bf_losses = [brute_force(space, k).loss for k in range(1, 9)]
            assert all(a >= b - 1e-12 for a, b in zip(rg_losses, rg_losses[1:]))
            assert all(a >= b - 1e-12 for a, b in zip(bf_losses, bf_losses[1:]))

    def test_jit_matches_python_fallback(self):
        if not hasattr(_rg_alive, "py_func"):
            pytest.skip("solver core not compiled")
        for seed in range(5):
            space = clustered_space(seed, m=7)
            args = (space.metric.matrix, space.arrival_probs, space.costs, 3)
            assert np.array_equal(_rg_alive(*args), _rg_alive.py_func(*args))


class TestBruteForce:
    def test_k_equals_m(self, three_query_space):
        res = brute_force(three_query_space, 3)
        assert res.cache.members == (0, 1, 2) and res.loss == 0.0

    def test_singletons(self, three_query_space):
        singles = [expected_loss(three_query_space, Cache.of([q]))
                   for q in range(3)]
        assert singles == pytest.approx([0.07, 0.09, 0.38], abs=1e-12)
        res = brute_force(three_query_space, 1)
        assert res.cache.members == (0,)
        assert res.loss == pytest.approx(0.07, abs=1e-12)
        assert res.evaluations == 3

    def test_dominates_greedy(self):
        for seed in range(10):
            space = clustered_space(seed, m=8)
            for k in (1, 3, 5):
                assert brute_force(space, k).loss <= \
                    reverse_greedy(space, k).loss + 1e-12

    def test_matches_enumeration(self):
        space = clustered_space(2, m=6)
        for k in (1, 2, 3):
            best = min(
                (cache_loss(space.metric.matrix, space.arrival_probs,
                            space.costs, combo), combo)
                for combo in itertools.combinations(range(6), k))
            res = brute_force(space, k)
            assert res.loss == pytest.approx(best[0], abs=1e-12)
            assert res.cache.members == best[1]

    def test_budget_error_names_the_count(self, three_query_space):
        with pytest.raises(BudgetExceededError, match=r"C\(3,1\) = 3"):
            brute_force(three_query_space, 1, budget=2)


class TestCurvature:
    def test_additive_loss_has_zero_curvature(self):
        space = random_valid_space(np.random.default_rng(0), 6,
                                   metric="threshold", epsilon=0.0)
        report = curvature(space)
        assert report.curvature == pytest.approx(0.0, abs=1e-12)
        assert report.beta == pytest.approx(0.0, abs=1e-12)
        assert report.approx_ratio == pytest.approx(1.0, abs=1e-9)

    def test_shadowed_query_maxes_curvature(self):
        emb = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [2.0, -3.0]])
        p = np.full(4, 0.25)
        c = np.full(4, 0.8)
        space = QuerySpace.build(emb, p, c)
        report = curvature(space)
        assert report.curvature == 1.0
        assert math.isinf(report.beta) and math.isinf(report.approx_ratio)

    def test_greedy_within_ratio_of_optimum(self):
        for seed in range(20):
            space = clustered_space(seed, m=6)
            report = curvature(space)
            if not math.isfinite(report.approx_ratio):
                continue
            assert report.approx_ratio >= 1.0
            for k in (1, 2, 4):
                rg = reverse_greedy(space, k).loss
                bf = brute_force(space, k).loss
                assert rg <= report.approx_ratio * bf + 1e-12

    def test_requires_two_queries(self):
        metric = DistanceMetric.from_matrix(np.zeros((1, 1)))
        space = QuerySpace(np.zeros((1, 2)), np.array([1.0]), np.array([0.5]),
                           metric)
        with pytest.raises(ValueError, match="at least 2"):
            curvature(space)


class TestLfu:
    def test_uniform_frequencies_tie_to_lowest_ids(self):
        assert lfu_cache(np.ones(6), 3).members == (0, 1, 2)

    def test_top_k_by_probability(self):
        freq = np.array([0.1, 0.4, 0.2, 0.3])
        assert lfu_cache(freq, 2).members == (1, 3)

    def test_exact_match_uniform_costs_matches_greedy(self):
        rng = np.random.default_rng(9)
        emb = rng.normal(size=(6, 3))
        p = rng.uniform(0.5, 1.0, 6)
        p /= p.sum()
        c = np.full(6, 0.7)
        space = QuerySpace.build(emb, p, c, metric="threshold", epsilon=0.0)
        k = 3
        lfu_loss = expected_loss(space, lfu_cache(space, k))
        assert lfu_loss == pytest.approx(reverse_greedy(space, k).loss, abs=1e-12)
        assert lfu_loss == pytest.approx(brute_force(space, k).loss, abs=1e-12)


class TestEpsilonGreedyCache:
    def test_zero_epsilon_matches_greedy(self):
        space = clustered_space(4, m=8)
        rng = np.random.default_rng(0)
        cache = epsilon_greedy_cache(space.metric.matrix, space.arrival_probs,
                                     space.costs, 3, 0.0, rng)
        assert cache == reverse_greedy(space, 3).cache

    def test_full_epsilon_is_uniformly_random(self):
        space = clustered_space(4, m=8)
        seen = set()
        for seed in range(30):
            rng = np.random.default_rng(seed)
            cache = epsilon_greedy_cache(space.metric.matrix,
                                         space.arrival_probs, space.costs, 3,
                                         1.0, rng)
            assert cache.size == 3
            seen.add(cache.members)
        assert len(seen) > 10  # far more variety than the single greedy answer

    def test_seed_reproducibility(self):
        space = clustered_space(4, m=8)
        caches = [
            epsilon_greedy_cache(space.metric.matrix, space.arrival_probs,
                                 space.costs, 3, 0.5,
                                 np.random.default_rng(123))
            for _ in range(2)
        ]
        assert caches[0] == caches[1]

    def test_epsilon_validation(self):
        space = clustered_space(4, m=5)
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            epsilon_greedy_cache(space.metric.matrix, space.arrival_probs,
                                 space.costs, 2, 1.5, np.random.default_rng(0))
