import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttlsim.errors import ConfigError, TraceParseError, TraceValidationError
from ttlsim.workload import (FlashCrowds, InterArrival, MarkovLabelSpec, OneHitWonders,
                             PopularitySpec, Request, RequestStream, TypeSpec, ZipfType,
                             audit_rarity, bursty_indicators, gen_markov_renewal,
                             gen_poisson_independent, read_trace, stationary_distribution,
                             write_trace, zipf_probs)


def single_object_spec(rate=1.0):
    return PopularitySpec(rate, [TypeSpec([1.0], [1], 0.0)])


# -- Poisson independent labeling -------------------------------------------

def test_single_object_stream():
    s = gen_poisson_independent(single_object_spec(), seed=0, n=1_000_000)
    assert np.all(s.objects == s.objects[0])
    gaps = np.diff(np.concatenate([[0.0], s.times]))
    assert abs(gaps.mean() - 1.0) < 0.01


def test_all_rare_one_hit_wonders():
    spec = PopularitySpec(5.0, [TypeSpec([], [], 1.0)])
    s = gen_poisson_independent(spec, OneHitWonders(), seed=1, n=100_000)
    names = [s.object_name(o) for o in s.objects]
    assert len(set(names)) == 100_000
    assert all(n.startswith("rare:1:") for n in names)


def test_zipf_head_share_matches_partial_sums():
    spec = PopularitySpec.zipf(10.0, [ZipfType(10_000, 0.8, 0.9, 0.1)])
    n = 1_000_000
    s = gen_poisson_independent(spec, seed=2, n=n)
    rec = s.objects[~s.rare[s.objects]]
    top = np.sum(rec < 1000) / len(rec)
    p = zipf_probs(10_000, 0.8)[:1000].sum()
    assert top > 0.5
    assert abs(top - p) < 4 * math.sqrt(p * (1 - p) / len(rec))


def test_rare_fraction_converges():
    spec = PopularitySpec.zipf(10.0, [ZipfType(100, 1.0, 0.7, 0.2), ZipfType(50, 0.5, 0.05, 0.05)])
    n = 1_000_000
    s = gen_poisson_independent(spec, seed=3, n=n)
    for t, a in ((1, 0.2), (2, 0.05)):
        frac = np.sum(s.rare[s.objects] & (s.types == t)) / n
        assert abs(frac - a) < 3 * math.sqrt(a * (1 - a) / n)


def test_determinism_and_seed_sensitivity():
    spec = PopularitySpec.zipf(10.0, [ZipfType(100, 0.8, 0.8, 0.2)])
    a = gen_poisson_independent(spec, seed=7, n=5000)
    b = gen_poisson_independent(spec, seed=7, n=5000)
    c = gen_poisson_independent(spec, seed=8, n=5000)
    assert list(a) == list(b)
    assert list(a) != list(c)


def test_probabilities_must_sum_to_one():
    spec = PopularitySpec(1.0, [TypeSpec([0.5, 0.3], [1, 1], 0.1)])
    with pytest.raises(ConfigError):
        gen_poisson_independent(spec, n=10)
    spec = PopularitySpec(1.0, [TypeSpec([0.5, 0.4], [1, 1], 0.1 + 2e-9)])
    with pytest.raises(ConfigError):
        spec.validate()


def test_zipf_expansion():
    spec = PopularitySpec.zipf(1.0, [ZipfType(4, 1.0, 0.6, 0.4)])
    Z = 1 + 1 / 2 + 1 / 3 + 1 / 4
    np.testing.assert_allclose(spec.types[0].probs, 0.6 * np.array([1, 1 / 2, 1 / 3, 1 / 4]) / Z)


def test_rare_ids_disjoint_from_recurrent():
    spec = PopularitySpec.zipf(10.0, [ZipfType(20, 0.8, 0.5, 0.5)])
    s = gen_poisson_independent(spec, seed=0, n=2000)
    rec = {s.object_name(o) for o in np.unique(s.objects) if not s.rare[o]}
    rare = {s.object_name(o) for o in np.unique(s.objects) if s.rare[o]}
    assert rec and rare and not rec & rare
    assert all(r.startswith("obj:") for r in rec)


def test_sizes_follow_spec():
    spec = PopularitySpec(1.0, [TypeSpec([0.5], [100], 0.5, rare_size=7)])
    s = gen_poisson_independent(spec, seed=0, n=1000)
    rare = s.rare[s.objects]
    assert set(s.sizes[rare]) == {7}
    assert set(s.sizes[~rare]) == {100}


# -- Markov renewal labeling -----------------------------------------------

def test_markov_single_state():
    m = MarkovLabelSpec(np.array([[1.0]]), 1)
    s = gen_markov_renewal(m, seed=0, n=100)
    assert np.all(s.objects == 0)


def test_lazy_cycle_run_length():
    K = 5
    P = np.zeros((K, K))
    for i in range(K):
        P[i, i] = 0.5
        P[i, (i + 1) % K] = 0.5
    s = gen_markov_renewal(MarkovLabelSpec(P, K), seed=1, n=200_000)
    change = np.flatnonzero(np.diff(s.objects) != 0)
    runs = np.diff(change)
    assert abs(runs.mean() - 2.0) < 0.03


def test_markov_occupancy_matches_stationary():
    rng = np.random.default_rng(4)
    K, T = 6, 2
    P = rng.random((K + T, K + T)) + np.eye(K + T)
    P /= P.sum(axis=1, keepdims=True)
    m = MarkovLabelSpec(P, K, object_types=np.ones(K, dtype=int))
    n = 1_000_000
    s = gen_markov_renewal(m, seed=5, n=n)
    # map back to labels: recurrent id = label, rare ids by type
    labels = np.where(s.rare[s.objects], K + s.types - 1, s.objects)
    emp = np.bincount(labels, minlength=K + T) / n
    # power iteration oracle
    pi = np.full(K + T, 1.0 / (K + T))
    for _ in range(2000):
        pi = pi @ P
    assert 0.5 * np.abs(emp - pi).sum() < 0.01
    np.testing.assert_allclose(stationary_distribution(P), pi, atol=1e-10)


def test_markov_rejects_zero_diagonal_and_reducible():
    with pytest.raises(ConfigError):
        gen_markov_renewal(MarkovLabelSpec(np.array([[0.0, 1.0], [0.5, 0.5]]), 2), n=10)
    with pytest.raises(ConfigError):
        gen_markov_renewal(MarkovLabelSpec(np.array([[1.0, 0.0], [0.5, 0.5]]), 2), n=10)


@pytest.mark.parametrize("ia", [InterArrival("exponential", 2.0),
                                InterArrival("weibull", 2.0, shape=0.6),
                                InterArrival("hyperexp", 2.0, p1=0.2)])
def test_interarrival_means(ia):
    x = ia.sample(np.random.default_rng(0), 400_000)
    assert abs(x.mean() - 0.5) < 0.01


# -- traces -----------------------------------------------------------------

def test_header_only_trace(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("arrival_time_s,object_id,type_id,size_bytes\n")
    assert len(read_trace(p)) == 0


def test_three_line_trace(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("# comment\narrival_time_s,object_id,type_id,size_bytes\n"
                 "0.5,a,1,10\n1.0,b,2,20\n1.0,a,1,10\n")
    reqs = list(read_trace(p))
    assert reqs == [Request(0.5, "a", 1, 10), Request(1.0, "b", 2, 20), Request(1.0, "a", 1, 10)]


def test_round_trip_random_requests(tmp_path):
    rng = np.random.default_rng(9)
    times = np.cumsum(rng.exponential(0.37, 10_000))
    reqs = [Request(float(t), f"id-{rng.integers(500)}", int(rng.integers(1, 4)),
                    int(rng.integers(1, 10**9))) for t in times]
    p = tmp_path / "t.csv"
    write_trace(reqs, p)
    assert list(read_trace(p)) == reqs


def test_generated_stream_round_trip(tmp_path):
    spec = PopularitySpec.zipf(3.0, [ZipfType(50, 0.8, 0.7, 0.3)])
    s = gen_poisson_independent(spec, seed=1, n=3000)
    p = tmp_path / "g.csv"
    write_trace(s, p)
    back = read_trace(p)
    assert list(back) == list(s)
    assert np.array_equal(back.rare[back.objects], s.rare[s.objects])


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("arrival_time_s,object_id,type_id,size_bytes\n0.5,a,1,10\nxx,b,1,1\n")
    with pytest.raises(TraceParseError) as exc:
        read_trace(p)
    assert exc.value.line_number == 3


def test_decreasing_timestamp_rejected(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("arrival_time_s,object_id,type_id,size_bytes\n2.0,a,1,10\n1.0,b,1,1\n")
    with pytest.raises(TraceValidationError) as exc:
        read_trace(p)
    assert exc.value.line_number == 3


# -- rarity audit -------------------------------------------------------------

def test_audit_one_hit_wonders_all_zero():
    spec = PopularitySpec.zipf(10.0, [ZipfType(100, 0.8, 0.6, 0.4)])
    s = gen_poisson_independent(spec, seed=0, n=50_000)
    for R in (0.01, 1.0, 1e6):
        res = audit_rarity(s, R, 0.75)
        assert res[1] and all(w.fraction == 0.0 for w in res[1])


def test_audit_single_recurrent_object():
    s = gen_poisson_independent(single_object_spec(), seed=0, n=5000)
    assert all(w.fraction == 0.0 for w in audit_rarity(s, 10.0, 0.8)[1])


def test_audit_flash_crowd_burst_count():
    reqs = [Request(float(i), f"obj:1:{i % 3}", 1, 1) for i in range(1, 300)]
    # five back-to-back requests for one rare id inside the window [100, 199]
    for k in range(5):
        reqs[120 + k - 1] = Request(float(120 + k), "rare:1:1", 1, 1)
    s = RequestStream.from_requests(reqs)
    res = audit_rarity(s, R=2.0, window_exponent=1.0, start=100)
    first = res[1][0]
    assert (first.start, first.length) == (100, 100)
    assert first.fraction == pytest.approx(4 / 100)


def test_audit_empty_stream():
    s = RequestStream.from_requests([])
    assert audit_rarity(s, 1.0, 0.75) == {}


def test_audit_rejects_non_positive_R():
    s = gen_poisson_independent(single_object_spec(), seed=0, n=10)
    with pytest.raises(ConfigError):
        audit_rarity(s, 0.0)


@settings(max_examples=20, deadline=None)
@given(burst=st.integers(2, 6), scale=st.floats(0.5, 3.0), seed=st.integers(0, 10**6))
def test_flash_crowd_budget(burst, scale, seed):
    R = 1.0
    spec = PopularitySpec.zipf(50.0, [ZipfType(30, 0.8, 0.7, 0.3)])
    mode = FlashCrowds(burst, R, 0.5, scale)
    s = gen_poisson_independent(spec, mode, seed=seed, n=20_000)
    assert len(s) == 20_000
    assert np.all(np.diff(s.times) >= 0)
    beta = np.cumsum(bursty_indicators(s, R))
    l = np.arange(1, len(s) + 1)
    assert np.all(beta <= scale * np.sqrt(l) + 1e-9)
    assert beta[-1] > 0


def test_flash_crowd_ids_do_not_recur_after_burst():
    spec = PopularitySpec.zipf(50.0, [ZipfType(30, 0.8, 0.7, 0.3)])
    s = gen_poisson_independent(spec, FlashCrowds(4, 1.0, 0.5, 5.0), seed=3, n=20_000)
    rare_idx = np.flatnonzero(s.rare[s.objects])
    for o in np.unique(s.objects[rare_idx]):
        t = s.times[s.objects == o]
        assert len(t) <= 4
        assert t[-1] - t[0] < 1.0
