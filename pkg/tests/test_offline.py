import math

import numpy as np
import pytest

from semcache import (Cache, FormatError, OfflineRecord, WorkloadSpec,
                      brute_force, cache_loss, clcb_sc_offline, cucb_sc,
                      curvature, epsilon_greedy_offline, estimate,
                      expected_loss, generate, load_dataset,
                      reverse_greedy, reverse_greedy_matrix, save_dataset,
                      suboptimality_gap, synthesize_offline_dataset)

from conftest import clustered_space


def rec(t, q, cost, cache=Cache.empty()):
    return OfflineRecord(round=t, cache=cache, query=q, observed_cost=cost)


class TestEstimate:
    def test_counting(self):
        data = [rec(t, 0, None) for t in range(1, 5)]
        est = estimate(data, m=3)
        np.testing.assert_array_equal(est.p_hat, [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(est.arrivals, [4, 0, 0])
        np.testing.assert_array_equal(est.feedback_counts, [0, 0, 0])

    def test_unseen_queries_get_extreme_bounds(self):
        est = estimate([rec(1, 0, 0.4)], m=3)
        assert est.c_upper[1] == 1.0 and est.c_upper[2] == 1.0
        assert est.c_lower[1] == 0.0 and est.c_lower[2] == 0.0

    def test_radius_formula(self):
        # two observations of query 0 with mean 0.5; delta chosen so the log
        # term is exactly 1, giving radius sqrt(1/4) = 0.5
        data = [rec(1, 0, 0.4), rec(2, 0, 0.6)]
        m, n = 2, 2
        delta = 6.0 * m * n / math.e
        est = estimate(data, m=m, delta=delta)
        assert est.c_hat[0] == pytest.approx(0.5, abs=1e-12)
        assert est.c_upper[0] == pytest.approx(1.0, abs=1e-9)
        assert est.c_lower[0] == pytest.approx(0.0, abs=1e-9)

    def test_bounds_bracket_mean_and_clip(self):
        space = generate(WorkloadSpec(m=6, d_e=4, seed=0))
        data = synthesize_offline_dataset(space, None, 500, nu_override=0.8,
                                          seed=1)
        est = estimate(data, m=6)
        seen = est.feedback_counts > 0
        assert (est.c_upper[seen] >= est.c_hat[seen]).all()
        assert (est.c_hat[seen] >= est.c_lower[seen]).all()
        assert (est.c_upper <= 1.0).all() and (est.c_lower >= 0.0).all()
        assert est.p_hat.sum() == pytest.approx(1.0, abs=1e-12)

    def test_record_order_irrelevant(self):
        space = generate(WorkloadSpec(m=5, d_e=4, seed=2))
        data = synthesize_offline_dataset(space, None, 300, nu_override=0.6,
                                          seed=3)
        shuffled = list(data)
        np.random.default_rng(0).shuffle(shuffled)
        a = estimate(data, m=5)
        b = estimate(shuffled, m=5)
        np.testing.assert_array_equal(a.arrivals, b.arrivals)
        np.testing.assert_allclose(a.c_hat, b.c_hat, atol=1e-14)
        np.testing.assert_allclose(a.c_upper, b.c_upper, atol=1e-14)

    def test_rejects_empty_and_out_of_range(self):
        with pytest.raises(ValueError, match="at least one"):
            estimate([], m=3)
        with pytest.raises(ValueError, match="out of range"):
            estimate([rec(1, 7, None)], m=3)


class TestCucbSc:
    def test_full_universe_cache_when_k_is_m(self):
        space = clustered_space(1, m=5)
        data = synthesize_offline_dataset(space, None, 10, nu_override=1.0,
                                          seed=0)
        assert cucb_sc(data, space.metric, 5).members == (0, 1, 2, 3, 4)

    def test_single_record_matches_direct_solver_call(self):
        space = clustered_space(2, m=6)
        data = [rec(1, 2, 0.6)]
        cache = cucb_sc(data, space.metric, 3, delta=0.05)
        est = estimate(data, m=6, delta=0.05)
        oracle = reverse_greedy_matrix(space.metric.matrix, est.p_hat,
                                       est.c_upper, 3).cache
        assert cache == oracle

    def test_converges_to_truth_with_large_datasets(self):
        space = generate(WorkloadSpec(m=8, d_e=6, seed=0))
        truth = reverse_greedy(space, 3).loss
        hits = 0
        for seed in range(10):
            data = synthesize_offline_dataset(space, None, 100_000,
                                              nu_override=1.0, seed=seed)
            cache = cucb_sc(data, space.metric, 3)
            if abs(expected_loss(space, cache) - truth) <= 1e-3:
                hits += 1
        assert hits >= 9

    def test_pessimism_holds_with_stated_frequency(self):
        space = generate(WorkloadSpec(m=6, d_e=4, seed=4))
        delta = 0.05
        ok = 0
        seeds = 40
        for seed in range(seeds):
            data = synthesize_offline_dataset(space, None, 2_000,
                                              nu_override=1.0, seed=seed)
            est = estimate(data, m=6, delta=delta)
            if (est.c_upper >= space.costs - 1e-12).all():
                ok += 1
        assert ok / seeds >= 1 - delta


class TestClcbOffline:
    def test_no_feedback_degenerates_to_first_k(self):
        space = clustered_space(5, m=6)
        data = [rec(t, t % 6, None) for t in range(1, 30)]
        assert clcb_sc_offline(data, space.metric, 3).members == (0, 1, 2)

    def test_single_record_matches_direct_solver_call(self):
        space = clustered_space(6, m=6)
        data = [rec(1, 4, 0.3)]
        est = estimate(data, m=6)
        oracle = reverse_greedy_matrix(space.metric.matrix, est.p_hat,
                                       est.c_lower, 3).cache
        assert clcb_sc_offline(data, space.metric, 3) == oracle

    def test_agrees_with_cucb_at_large_n(self):
        space = generate(WorkloadSpec(m=8, d_e=6, seed=0))
        hits = 0
        for seed in range(10):
            data = synthesize_offline_dataset(space, None, 100_000,
                                              nu_override=1.0, seed=seed)
            lo = expected_loss(space, clcb_sc_offline(data, space.metric, 3))
            hi = expected_loss(space, cucb_sc(data, space.metric, 3))
            if abs(lo - hi) <= 1e-3:
                hits += 1
        assert hits >= 9


class TestEpsilonGreedyOffline:
    def test_zero_epsilon_matches_plain_greedy_on_empirical_costs(self):
        space = clustered_space(7, m=7)
        data = synthesize_offline_dataset(space, None, 2_000, nu_override=1.0,
                                          seed=0)
        est = estimate(data, m=7)
        oracle = reverse_greedy_matrix(space.metric.matrix, est.p_hat,
                                       est.c_hat, 3).cache
        assert epsilon_greedy_offline(data, space.metric, 3, 0.0, seed=1) == oracle

    def test_full_epsilon_is_random_but_reproducible(self):
        space = clustered_space(7, m=7)
        data = synthesize_offline_dataset(space, None, 100, nu_override=1.0,
                                          seed=0)
        a = epsilon_greedy_offline(data, space.metric, 3, 1.0, seed=42)
        b = epsilon_greedy_offline(data, space.metric, 3, 1.0, seed=42)
        assert a == b and a.size == 3


class TestSuboptimalityGap:
    def test_optimum_has_zero_gap(self, three_query_space):
        best = brute_force(three_query_space, 1).cache
        assert suboptimality_gap(three_query_space, best) == pytest.approx(
            0.0, abs=1e-12)

    def test_worst_singleton_gap(self, three_query_space):
        assert suboptimality_gap(three_query_space, Cache.of([2])) == \
            pytest.approx(0.31, abs=1e-12)

    def test_greedy_gap_nonpositive_under_curvature_alpha(self):
        for seed in range(5):
            space = clustered_space(seed, m=7)
            alpha = curvature(space).approx_ratio
            if not math.isfinite(alpha):
                continue
            rg = reverse_greedy(space, 3).cache
            assert suboptimality_gap(space, rg, alpha=alpha) <= 1e-12


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        space = generate(WorkloadSpec(m=5, d_e=3, seed=6))
        records = synthesize_offline_dataset(space, Cache.of([0, 2]), 50,
                                             seed=7)
        path = str(tmp_path / "data.jsonl")
        save_dataset(records, path)
        assert load_dataset(path, m=5) == records

    def _write_lines(self, tmp_path, lines):
        path = tmp_path / "data.jsonl"
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    def test_rejects_nonpositive_cost(self, tmp_path):
        path = self._write_lines(tmp_path, [
            '{"t": 1, "cache": [0], "q": 1, "cost": 0.5}',
            '{"t": 2, "cache": [0], "q": 1, "cost": 0.0}',
        ])
        with pytest.raises(FormatError, match=r"data\.jsonl:2.*\(0, 1\]"):
            load_dataset(path)

    def test_rejects_cost_above_one(self, tmp_path):
        path = self._write_lines(tmp_path,
                                 ['{"t": 1, "cache": [], "q": 0, "cost": 1.2}'])
        with pytest.raises(FormatError, match=r"\(0, 1\]"):
            load_dataset(path)

    def test_rejects_malformed_json_with_line_number(self, tmp_path):
        path = self._write_lines(tmp_path, [
            '{"t": 1, "cache": [], "q": 0, "cost": null}',
            "not json",
        ])
        with pytest.raises(FormatError, match=":2: invalid JSON"):
            load_dataset(path)

    def test_rejects_missing_field(self, tmp_path):
        path = self._write_lines(tmp_path, ['{"t": 1, "q": 0, "cost": null}'])
        with pytest.raises(FormatError, match="missing or malformed"):
            load_dataset(path)

    def test_rejects_out_of_range_query(self, tmp_path):
        path = self._write_lines(tmp_path,
                                 ['{"t": 1, "cache": [], "q": 9, "cost": null}'])
        with pytest.raises(FormatError, match="'q' out of range"):
            load_dataset(path, m=5)
