import pytest
from hypothesis import given, settings, strategies as st

from ttlsim.core import (CacheState, Deep, EventKind, ShadowOnly, ShallowPlusShadow,
                         TimerTuple)
from ttlsim.errors import SimulationError


def test_boundary_expiry_is_a_hit():
    c = CacheState()
    c.install("x", 1, 1, Deep(5.0))
    c.advance_to(5.0)
    cls = c.classify("x")
    assert cls.kind is EventKind.DEEP_HIT
    assert cls.remaining == 0.0


def test_strict_overshoot_evicts():
    c = CacheState()
    c.install("x", 3, 1, Deep(5.0))
    ev = c.advance_to(5.0001)
    assert ev == [(5.0, "x", 0)]
    assert c.classify("x").kind is EventKind.MISS
    assert c.size_time_integral == pytest.approx(3 * 5.0)
    assert c.current_bytes == 0


def test_piecewise_integration():
    c = CacheState()
    c.install("a", 10, 1, Deep(1.0))
    c.install("b", 20, 2, Deep(2.0))
    c.advance_to(3.0)
    assert c.size_time_integral == pytest.approx(50.0)
    assert c.type_integral == {1: 10.0, 2: 40.0}


def test_classify_states():
    c = CacheState()
    c.advance_to(10.0)
    assert c.classify("x").kind is EventKind.MISS
    c.install("x", 1, 1, ShadowOnly(4.0))
    assert c.classify("x").kind is EventKind.VIRTUAL_HIT
    c.install("y", 1, 1, ShallowPlusShadow(2.0, 4.0))
    c.advance_to(11.5)
    cls = c.classify("y")
    assert cls.kind is EventKind.SHALLOW_HIT
    assert cls.remaining == pytest.approx(0.5)
    c.advance_to(13.0)
    assert c.classify("y").kind is EventKind.VIRTUAL_HIT
    c.advance_to(14.5)
    assert c.classify("y").kind is EventKind.MISS
    assert "y" not in c


def test_install_examples():
    c = CacheState()
    c.advance_to(10.0)
    c.install("a", 7, 1, Deep(3.0))
    assert c.timers("a") == TimerTuple(13.0, 0.0, 0.0)
    assert c.current_bytes == 7
    c.install("b", 5, 1, ShallowPlusShadow(0.0, 4.0))
    assert c.timers("b") == TimerTuple(0.0, 0.0, 14.0)
    assert c.current_bytes == 7
    c.install("c", 5, 1, ShallowPlusShadow(1.0, 4.0))
    assert c.timers("c") == TimerTuple(0.0, 11.0, 14.0)
    assert c.current_bytes == 12


def test_zero_ttl_and_none_remove_entry():
    c = CacheState()
    c.install("a", 1, 1, Deep(3.0))
    c.install("a", 1, 1, Deep(0.0))
    assert "a" not in c and c.current_bytes == 0
    c.install("b", 1, 1, ShallowPlusShadow(1.0, 2.0))
    c.install("b", 1, 1, None)
    assert "b" not in c and c.current_bytes == 0


def test_reinstall_invalidates_old_expiry():
    c = CacheState()
    c.install("a", 2, 1, Deep(1.0))
    c.advance_to(0.5)
    c.install("a", 2, 1, Deep(10.0))
    c.advance_to(5.0)
    assert c.classify("a").kind is EventKind.DEEP_HIT
    assert c.size_time_integral == pytest.approx(10.0)


def test_time_regression_raises():
    c = CacheState()
    c.advance_to(2.0)
    with pytest.raises(SimulationError):
        c.advance_to(1.0)


def test_legal_states():
    assert TimerTuple(3, 0, 0).is_legal()
    assert TimerTuple(0, 2, 5).is_legal()
    assert TimerTuple(0, 0, 5).is_legal()
    assert TimerTuple().is_legal()
    assert not TimerTuple(3, 1, 5).is_legal()
    assert not TimerTuple(0, 6, 5).is_legal()
    assert not TimerTuple(0, 2, 0).is_legal()


ops = st.lists(
    st.tuples(st.floats(0.0, 3.0), st.integers(0, 5), st.integers(1, 9),
              st.sampled_from(["deep", "pair", "shadow", "none"]),
              st.floats(0.0, 4.0), st.floats(0.0, 1.0)),
    min_size=1, max_size=80)


@settings(max_examples=200, deadline=None)
@given(ops)
def test_random_operations_keep_invariants(seq):
    """Integral equals the sum of closed residency intervals; tuples stay legal."""
    c = CacheState()
    t = 0.0
    resid = {}  # obj -> (start, expiry, size)
    expected = 0.0
    for dt, obj, size, kind, ttl, frac in seq:
        t += dt
        c.advance_to(t)
        if obj in resid:
            start, exp, w = resid.pop(obj)
            expected += w * (min(exp, t) - start)
        if kind == "deep":
            d = Deep(ttl)
        elif kind == "pair":
            d = ShallowPlusShadow(ttl * frac, ttl)
        elif kind == "shadow":
            d = ShadowOnly(ttl)
        else:
            d = None
        c.install(obj, size, 1, d)
        tt = c.timers(obj)
        assert tt.is_legal()
        exp = tt.deep or tt.shallow
        if exp > 0:
            resid[obj] = (t, exp, size)
        c.check_invariants()
        assert c.current_bytes >= 0
    t_end = t + 5.0
    c.advance_to(t_end)
    for start, exp, w in resid.values():
        expected += w * (min(exp, t_end) - start)
    assert c.size_time_integral == pytest.approx(expected, rel=1e-9, abs=1e-9)
    assert c.current_bytes == 0
