import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttlsim.analytics import (OracleInput, check_filtering_dominance, check_monotonicity,
                              collect_metrics, hit_rate_supremum, oracle_hit_rate,
                              oracle_normalized_size, outage_fraction, series_from_events,
                              solve_full_filter_ttl, tune_L, tuning_intermediates)
from ttlsim.errors import ConfigError, InfeasibleError
from ttlsim.workload import zipf_probs

LN2 = math.log(2)


def one(theta, theta_s, **kw):
    return OracleInput(np.array([1.0]), theta=theta, theta_s=theta_s, **kw)


# -- oracles ------------------------------------------------------------------------

def test_hit_rate_examples():
    assert oracle_hit_rate(one(LN2, LN2)) == pytest.approx(0.5)
    assert oracle_hit_rate(one(LN2, 0.0)) == pytest.approx(0.25)
    assert oracle_hit_rate(OracleInput.zipf(50, 0.9, 0.8, 0.2, 3.0)) == 0.0


def test_normalized_size_examples():
    assert oracle_normalized_size(one(LN2, LN2)) == pytest.approx(0.5)
    assert oracle_normalized_size(one(LN2, 0.0)) == pytest.approx(0.25)
    rare_only = OracleInput(np.empty(0), alpha=1.0, total_rate=4.0, theta=3.0, theta_s=2.0)
    assert oracle_normalized_size(rare_only) == pytest.approx(2.0)
    assert oracle_hit_rate(rare_only) == 0.0


def test_oracle_rejects_bad_pairs():
    with pytest.raises(ConfigError):
        one(1.0, 2.0)
    with pytest.raises(ConfigError):
        OracleInput(np.array([0.0, 1.0]), theta=1.0)


def test_collapse_to_single_ttl():
    """With theta_s = theta the pair behaves like one TTL: h = sum pi p."""
    inp = OracleInput.zipf(300, 0.8, 0.7, 0.3, 10.0, 4.0, 4.0)
    pi = zipf_probs(300, 0.8, 0.7)
    p = -np.expm1(-inp.rates * 4.0)
    assert oracle_hit_rate(inp) == pytest.approx(float(np.dot(pi, p)), rel=1e-12)


def test_quadrature_matches_closed_form():
    inp = OracleInput.zipf(40, 1.1, 0.9, 0.1, 5.0, 3.0, 1.2)
    exp_cdf = lambda x, r: -np.expm1(-r * x)  # noqa: E731
    num = OracleInput(inp.rates, 1.0, inp.alpha, inp.total_rate, 1.0, 3.0, 1.2, cdf=exp_cdf)
    assert oracle_hit_rate(num) == pytest.approx(oracle_hit_rate(inp), rel=1e-12)
    assert oracle_normalized_size(num) == pytest.approx(oracle_normalized_size(inp), rel=1e-8)


def test_bhr_weights_by_size():
    inp = OracleInput(np.array([1.0, 1.0]), sizes=[1.0, 3.0], theta=LN2, theta_s=0.0, mode="bhr")
    assert oracle_hit_rate(inp) == pytest.approx(0.25)
    big = OracleInput(np.array([1.0, 2.0]), sizes=[1.0, 3.0], theta=LN2, theta_s=LN2, mode="bhr")
    p = -np.expm1(-np.array([1.0, 2.0]) * LN2)
    assert oracle_hit_rate(big) == pytest.approx((1 * p[0] + 6 * p[1]) / 7)


# -- full-filtering solver ----------------------------------------------------------

def test_full_filter_solver_examples():
    assert solve_full_filter_ttl(one(0, 0), 0.25) == pytest.approx(LN2, rel=1e-9)
    assert solve_full_filter_ttl(one(0, 0), 0.0) == 0.0
    inp = OracleInput.zipf(100, 0.9)
    th = solve_full_filter_ttl(inp, 0.5)
    assert abs(oracle_hit_rate(inp.at(th, 0.0)) - 0.5) <= 1e-10


def test_full_filter_solver_infeasible_names_supremum():
    inp = OracleInput.zipf(100, 0.9, 0.7, 0.3, 1.0)
    with pytest.raises(InfeasibleError) as exc:
        solve_full_filter_ttl(inp, 0.75)
    assert exc.value.supremum == pytest.approx(0.7)
    assert hit_rate_supremum(inp) == pytest.approx(0.7)


# -- dominance -------------------------------------------------------------------------

def test_dominance_examples():
    inp = OracleInput.zipf(200, 1.2, 0.7, 0.3, 1.0, 5.0, 2.0)
    r = check_filtering_dominance(inp)
    assert r.dominated and r.strict and r.s_full < r.s_pair
    single = OracleInput(np.array([1.0]), theta=2.0, theta_s=1.0)
    r = check_filtering_dominance(single)
    assert r.dominated and not r.strict and r.s_full <= r.s_pair + 1e-12
    dttl_point = OracleInput.zipf(200, 1.2, 0.7, 0.3, 1.0, 5.0, 5.0)
    r = check_filtering_dominance(dttl_point)
    assert r.dominated and r.s_full < r.s_pair


def test_dominance_not_applicable_within_L():
    inp = OracleInput.zipf(200, 1.2, 0.7, 0.3, 1.0, 50.0, 40.0)
    r = check_filtering_dominance(inp, L=50.0)
    assert r.dominated is None


def test_dominance_requires_positive_theta_s():
    with pytest.raises(ConfigError):
        check_filtering_dominance(one(1.0, 0.0))


@settings(max_examples=30, deadline=None)
@given(beta=st.floats(0.7, 1.5), k=st.integers(20, 500), alpha=st.floats(0.05, 0.5),
       th=st.floats(0.5, 50.0), frac=st.floats(0.05, 1.0))
def test_dominance_property(beta, k, alpha, th, frac):
    inp = OracleInput.zipf(k, beta, 1 - alpha, alpha, 1.0, th, th * frac)
    r = check_filtering_dominance(inp)
    assert r.dominated in (True, None)


# -- monotonicity -------------------------------------------------------------------

def test_monotonicity_single_object_grid():
    grid = np.linspace(0, 5, 50)
    rep = check_monotonicity(one(0, 0), grid, grid)
    assert rep.ok and rep.n_checked > 1000


def test_monotonicity_saturation_accepted():
    # p(theta) == 1 in double precision: theta-derivative is 0 and theta_s has no effect
    rep = check_monotonicity(one(0, 0), [800.0], [0.0, 10.0, 400.0])
    assert rep.ok and rep.n_checked == 3


# -- L tuning ----------------------------------------------------------------------

def test_r_star_arithmetic():
    r_star, *_ = tuning_intermediates(1000, 1.5, 0.9, 0.1, 1e4, 0.8, 10_000)
    assert abs(r_star - 0.28) <= 1e-12


def test_tune_monotone_in_target():
    Ls = [tune_L(10_000, 1.5, 1.0, 0.0, h, 10_000).L for h in (0.7, 0.8, 0.9)]
    assert Ls[0] < Ls[1] < Ls[2]


def test_tune_rejects_light_tails_and_small_n():
    with pytest.raises(ConfigError):
        tune_L(100, 1.0, 1.0, 0.0, 0.5, 100)
    with pytest.raises(InfeasibleError):
        tune_L(100, 1.5, 1.0, 0.0, 0.99, 2)


# -- metrics -------------------------------------------------------------------------

def test_metrics_ratio_examples():
    hits = [1, 1, 1, 0, 1, 0, 1, 0, 1, 0]
    s = series_from_events(np.arange(10.0), np.ones(10), np.ones(10), hits, window=100.0)
    m = collect_metrics(s)
    assert m.ohr == pytest.approx(0.6) and m.bhr == pytest.approx(0.6)


def test_normalized_size_example():
    times = np.linspace(0, 100, 11)
    integral = np.array([[10.0 * 100]])
    s = series_from_events(times, np.ones(11), np.full(11, 100 / 11), np.zeros(11),
                           window=1000.0, integral=integral)
    m = collect_metrics(s)
    assert m.normalized_size == pytest.approx(10.0)
    assert m.avg_cache_bytes == pytest.approx(10.0)


def test_outage_fraction_example():
    assert outage_fraction([0.57, 0.72, 0.61], 0.6) == pytest.approx(1 / 3)
    assert math.isnan(outage_fraction([], 0.6))


def test_absent_type_reported_as_none():
    s = series_from_events([0.0, 1.0], [1, 1], [1, 1], [0, 1], n_types=2)
    m = collect_metrics(s, targets=[0.5, 0.5])
    assert m.type(2) is None
    assert m.type(1).ohr == 0.5


def test_window_anchoring_and_truncation():
    s = series_from_events([5.0, 6.0, 20.0], [1, 1, 1], [1, 1, 1], [0, 1, 1], window=10.0)
    np.testing.assert_allclose(s.edges, [5.0, 15.0, 20.0])
    np.testing.assert_allclose(s.hit_rates(1), [0.5, 1.0])
