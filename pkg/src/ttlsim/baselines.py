"""Fixed-TTL and LRU reference caches and the characteristic-time solver."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .core import CacheState, Deep, EventKind
from .errors import ConfigError, InfeasibleError

T_CAP = 1e9
REL_TOL = 1e-12


def fixed_ttl_on_request(cache: CacheState, t: float, obj, type_id: int, size: int,
                         ttl: float) -> bool:
    """Classify at ``t`` and reinstall the object deep with the constant ``ttl``."""
    if ttl < 0:
        raise ConfigError("ttl must be non-negative")
    cache.advance_to(t)
    hit = cache.classify(obj).kind is EventKind.DEEP_HIT
    cache.install(obj, size, type_id, Deep(ttl))
    return hit


class LRUCache:
    """Byte-capacity LRU; recency is refreshed on every hit.

    Objects larger than the capacity bypass the cache and count as misses.
    """

    def __init__(self, capacity_bytes: float):
        if capacity_bytes < 0:
            raise ConfigError("capacity must be non-negative")
        self.capacity = capacity_bytes
        self.current_bytes = 0
        self.type_bytes: dict[int, int] = {}
        self._od: OrderedDict = OrderedDict()

    def __contains__(self, obj):
        return obj in self._od

    def __len__(self):
        return len(self._od)

    def request(self, obj, size: int, type_id: int = 1) -> bool:
        od = self._od
        if obj in od:
            od.move_to_end(obj)
            return True
        if size > self.capacity:
            return False
        od[obj] = (size, type_id)
        self.current_bytes += size
        self.type_bytes[type_id] = self.type_bytes.get(type_id, 0) + size
        while self.current_bytes > self.capacity:
            _, (s, ty) = od.popitem(last=False)
            self.current_bytes -= s
            self.type_bytes[ty] -= s
        return False


def lru_on_request(cache: LRUCache, obj, size: int, type_id: int = 1) -> bool:
    return cache.request(obj, size, type_id)


# ---------------------------------------------------------------------------
# Rate estimation and characteristic time


@dataclass
class RateEstimate:
    rates: np.ndarray  # per object, requests / s
    sizes: np.ndarray  # per object mean size, bytes
    horizon: float

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.sizes = np.asarray(self.sizes, dtype=np.float64)
        if self.rates.shape != self.sizes.shape:
            raise ConfigError("rates and sizes must align")
        if np.any(self.rates <= 0):
            raise ConfigError("estimated rates must be positive")

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())

    @property
    def byte_rate(self) -> float:
        return float((self.rates * self.sizes).sum())


def estimate_rates_from_trace(stream, horizon: float | None = None) -> RateEstimate:
    """Empirical per-object rates ``count / horizon``.

    The default horizon is the span of the stream; a single-request stream
    with no explicit horizon is rejected.  Objects seen once get ``1/horizon``.
    """
    if len(stream) == 0:
        raise ConfigError("cannot estimate rates from an empty stream")
    if horizon is None:
        horizon = stream.horizon
    if not horizon > 0:
        raise ConfigError("rate estimation horizon must be positive")
    counts = np.bincount(stream.objects)
    size_sum = np.bincount(stream.objects, weights=stream.sizes.astype(np.float64))
    seen = counts > 0
    return RateEstimate(counts[seen] / horizon, size_sum[seen] / counts[seen], float(horizon))


def _bisect_increasing(f, target, what):
    """Solve ``f(T) = target`` for an increasing ``f`` with ``f(0) <= target``."""
    hi = 1.0
    while f(hi) < target:
        hi *= 2.0
        if hi > T_CAP:
            raise InfeasibleError(f"{what}: no solution below T = {T_CAP:g} s",
                                  supremum=f(T_CAP))
    lo = 0.0
    while hi - lo > REL_TOL * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _occupancy(rates, weights):
    def f(T):
        return float(np.dot(weights, -np.expm1(-rates * T)))
    return f


def che_characteristic_time(rates: RateEstimate, capacity: float, mode: str = "count") -> float:
    """Characteristic time ``T`` with ``sum_c w_c (1 - exp(-lambda_c T)) = capacity``.

    ``mode="count"`` uses ``w_c = 1``; ``mode="bytes"`` uses object sizes.
    """
    w = np.ones_like(rates.rates) if mode == "count" else rates.sizes
    total = float(w.sum())
    if not 0 < capacity < total:
        raise InfeasibleError(f"capacity {capacity} outside (0, {total})", supremum=total)
    return _bisect_increasing(_occupancy(rates.rates, w), capacity, "characteristic time")


def che_hit_rate(rates: RateEstimate, T: float, mode: str = "ohr") -> float:
    w_hat = rates.rates if mode == "ohr" else rates.rates * rates.sizes
    return float(np.dot(w_hat, -np.expm1(-rates.rates * T)) / w_hat.sum())


def che_ttl_for_target_hitrate(rates: RateEstimate, h_star: float, mode: str = "ohr"):
    """TTL whose Poisson hit rate equals ``h_star``.

    Returns ``(T, expected_size_bytes, predicted_hit_rate)``.
    """
    if h_star < 0:
        raise ConfigError("target must be non-negative")
    if h_star == 0:
        return 0.0, 0.0, 0.0
    if h_star >= 1:
        raise InfeasibleError("hit rate 1 is not reachable with finite TTL", supremum=1.0)
    w_hat = rates.rates if mode == "ohr" else rates.rates * rates.sizes
    norm = w_hat / w_hat.sum()
    T = _bisect_increasing(_occupancy(rates.rates, norm), h_star, "target hit rate")
    expected = float(np.dot(rates.sizes, -np.expm1(-rates.rates * T)))
    return T, expected, che_hit_rate(rates, T, mode)


def lru_predicted_hit_rate(probs: np.ndarray, total_rate: float, T: float) -> float:
    """IRM hit rate ``sum_c pi_c (1 - exp(-lambda pi_c T))``."""
    probs = np.asarray(probs, dtype=np.float64)
    return float(np.dot(probs, -np.expm1(-total_rate * probs * T)) / probs.sum())

