import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpq.distributions import DiscreteDistribution, exact_derivative, exact_missing_mass, make_uniform
from cpq.errors import InvalidInput, InvalidParameter
from cpq.oracle import QueryRecord, ReplayOracle, SyntheticOracle
from cpq.policy import (
    PolicyConfig,
    default_beta_grid,
    derivative_path,
    greedy_allocate,
    greedy_threshold,
    run_query_loop,
    select_beta,
    stopping_time,
    stopping_times,
    tune_beta,
    warmup_t_min,
)

streams = st.lists(st.integers(0, 6), min_size=1, max_size=60)


class TestQueryLoop:
    def test_fixed_on_point_mass(self):
        o = SyntheticOracle({"x": DiscreteDistribution([1.0])}, 0)
        tally = run_query_loop(o, "x", PolicyConfig(fixed_t=5))
        assert tally.counts == {0: 5} and tally.t == 5

    def test_very_negative_beta_stops_at_t_min(self):
        o = SyntheticOracle({"x": make_uniform(100)}, 0)
        assert run_query_loop(o, "x", PolicyConfig(-1.0, t_min=4)).t == 4

    def test_zero_beta_runs_to_t_max(self):
        o = SyntheticOracle({"x": make_uniform(100)}, 0)
        assert run_query_loop(o, "x", PolicyConfig(0.0, t_min=3, t_max=50)).t == 50

    def test_replay_exhaustion_ends_loop(self):
        o = ReplayOracle([QueryRecord("x", 0, (1, 2, 3))])
        assert run_query_loop(o, "x", PolicyConfig(0.0, t_min=1, t_max=50)).t == 3
        assert run_query_loop(o, "x", PolicyConfig(fixed_t=10)).t == 3

    def test_stops_once_doubletons_vanish_after_t_min(self):
        # after 1,1 the estimate is -0.5; after 1,1,2 it is -2/9
        o = ReplayOracle([QueryRecord("x", 0, (1, 1, 2, 2, 3))])
        assert run_query_loop(o, "x", PolicyConfig(-0.3, t_min=2)).t == 3
        assert run_query_loop(o, "x", PolicyConfig(-0.6, t_min=2)).t == 2

    @given(streams, st.floats(-1.0, 0.0), st.integers(1, 10), st.integers(0, 30))
    def test_path_stopping_matches_loop(self, stream, beta, t_min, extra):
        cfg = PolicyConfig(beta, t_min, t_min + extra)
        o = ReplayOracle([QueryRecord("x", 0, tuple(stream))])
        expected = run_query_loop(o, "x", cfg).t
        path = derivative_path(stream)
        assert stopping_time(path, beta, cfg) == expected
        assert stopping_times(path, np.array([beta]), cfg)[0] == expected

    @given(streams, st.lists(st.floats(-1.0, 0.0), min_size=2, max_size=10), st.integers(1, 8))
    def test_stopping_time_monotone_in_beta(self, stream, betas, t_min):
        cfg = PolicyConfig(0.0, t_min, 40)
        betas = np.sort(betas)
        ts = stopping_times(derivative_path(stream), betas, cfg)
        assert np.all(np.diff(ts) >= 0)

    def test_derivative_path(self):
        path = derivative_path([0, 0, 1])
        assert math.isnan(path[0])
        assert path[1:].tolist() == [0.0, -0.5, -2 / 9]


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(beta_star=0.1), dict(t_min=0), dict(t_min=10, t_max=5), dict(fixed_t=-1),
                                    dict(beta_star=math.nan)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidParameter):
            PolicyConfig(**kw)

    def test_round_trip(self):
        cfg = PolicyConfig(-0.01, 5, 80, None)
        assert PolicyConfig.from_dict(cfg.to_dict()) == cfg

    def test_warmup_floor(self):
        assert [warmup_t_min(b) for b in (0, 1, 2, 3, 5, 6, 7, 10, 20, 30.9)] == [1, 1, 2, 3, 3, 3, 3, 5, 10, 15]
        assert warmup_t_min(1000, t_max=200) == 200

    def test_default_grid(self):
        g = default_beta_grid()
        assert g.size == 41 and g[0] == -1.0 and g[-1] == 0.0
        assert g[-2] == pytest.approx(-1e-6)
        assert np.all(np.diff(g) > 0)


def _uniform_oracle(n, m=30, seed=3):
    ids = [f"x{i}" for i in range(n)]
    return SyntheticOracle({i: make_uniform(m) for i in ids}, seed), ids


class TestTuneBeta:
    def test_single_candidate(self):
        o, ids = _uniform_oracle(10)
        assert tune_beta(o, ids, 5, [-1.0], PolicyConfig(t_min=3)) == -1.0

    def test_picks_largest_feasible_average(self):
        o, ids = _uniform_oracle(40)
        cfg = PolicyConfig(t_min=3, t_max=60)
        lo, hi = -0.05, -0.002
        # reference: average stopping time from explicit query loops
        avg = {b: np.mean([run_query_loop(o, i, cfg.with_beta(b)).t for i in ids]) for b in (lo, hi)}
        assert avg[lo] < avg[hi]
        budget = (avg[lo] + avg[hi]) / 2
        assert tune_beta(o, ids, budget, [lo, hi], cfg) == lo
        assert tune_beta(o, ids, avg[hi], [lo, hi], cfg) == hi

    def test_full_budget_picks_least_conservative(self):
        recs = [QueryRecord(f"r{i}", 0, tuple(range(i, i + 25))) for i in range(8)]
        cfg = PolicyConfig(t_min=3, t_max=25)
        assert tune_beta(ReplayOracle(recs), [r.id for r in recs], 25, None, cfg) == 0.0

    def test_infeasible_returns_fewest_queries(self):
        # estimates: t=4 -> -0.25, t=5 -> -0.16, t=6 -> -1/9
        paths = [derivative_path([0, 0, 1, 1, 2, 3])]
        choice = select_beta(paths, 4, [-0.2, 0.0], PolicyConfig(t_min=4, t_max=6))
        assert (choice.beta_star, choice.avg_queries) == (-0.2, 5.0)

    def test_errors(self):
        o, ids = _uniform_oracle(3)
        with pytest.raises(InvalidInput):
            tune_beta(o, [], 10)
        with pytest.raises(InvalidParameter):
            tune_beta(o, ids, 2, None, PolicyConfig(t_min=3))
        with pytest.raises(InvalidParameter):
            select_beta([derivative_path([1])], 5, [0.5])
        with pytest.raises(InvalidParameter):
            select_beta([derivative_path([1])], 5, [])


def _brute_force_optimum(dists, budget):
    best = math.inf
    for counts in itertools.product(range(budget + 1), repeat=len(dists)):
        if sum(counts) == budget:
            best = min(best, math.fsum(exact_missing_mass(d, c) for d, c in zip(dists, counts)))
    return best


dist_strategy = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6).map(DiscreteDistribution.from_weights)


class TestGreedy:
    def test_symmetric(self):
        assert greedy_allocate([make_uniform(10), make_uniform(10)], 4) == [2, 2]

    def test_point_mass_and_uniform(self):
        assert greedy_allocate([DiscreteDistribution([1.0]), make_uniform(100)], 3) == [1, 2]

    def test_zero_budget(self):
        assert greedy_threshold([make_uniform(3)], 0) == ([0], None)
        with pytest.raises(InvalidParameter):
            greedy_allocate([make_uniform(3)], -1)

    @given(st.lists(dist_strategy, min_size=1, max_size=3), st.integers(0, 8))
    def test_matches_exhaustive_optimum(self, dists, budget):
        counts = greedy_allocate(dists, budget)
        assert sum(counts) == budget
        total = math.fsum(exact_missing_mass(d, c) for d, c in zip(dists, counts))
        assert total == pytest.approx(_brute_force_optimum(dists, budget), abs=1e-12)

    @given(st.lists(dist_strategy, min_size=1, max_size=4), st.integers(1, 12))
    def test_threshold_structure(self, dists, budget):
        counts, beta = greedy_threshold(dists, budget)
        for d, c in zip(dists, counts):
            if c > 0:
                assert exact_derivative(d, c - 1) <= beta
            assert beta <= exact_derivative(d, c)
