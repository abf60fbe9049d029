"""Closed-form hit-rate and size oracles, property checkers, L tuning and metrics.

The oracles evaluate a fixed TTL pair ``(theta, theta_s)`` for one content
type whose recurrent objects arrive as independent renewal processes (Poisson
by default) and whose rare objects are one-hit wonders.  With
``p_c(x) = P(X_c <= x)`` and ``shat_c(x) = E[min(X_c, x)]``::

    h = sum_c w^_c lam_c (p_c(th)^2 + (1 - p_c(th)) p_c(ths))
        / (w^_rare alpha lam + sum_c w^_c lam_c)
    s = (sum_c w_c lam_c (p_c(th) shat_c(th) + (1 - p_c(th)) shat_c(ths))
         + w_rare alpha lam ths) / (w_rare alpha lam + sum_c w_c lam_c)

where ``w^`` is 1 for object hit rate and the object size for byte hit rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import ConfigError, InfeasibleError
from .workload import PopularitySpec, zipf_probs

OHR, BHR = "ohr", "bhr"
THETA_CAP = 1e9
RESID_TOL = 1e-10


@dataclass
class OracleInput:
    """One content type at a fixed TTL pair.

    ``cdf``, when given, is a vectorised inter-arrival c.d.f. ``cdf(x, rates)``
    replacing the exponential law; ``shat`` is then integrated numerically.
    """

    rates: np.ndarray
    sizes: np.ndarray | float = 1.0
    alpha: float = 0.0
    total_rate: float = 0.0
    rare_size: float = 1.0
    theta: float = 0.0
    theta_s: float = 0.0
    mode: str = OHR
    cdf: Callable | None = None

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.sizes = np.broadcast_to(np.asarray(self.sizes, dtype=np.float64),
                                     self.rates.shape).copy()
        if np.any(self.rates <= 0):
            raise ConfigError("object rates must be positive")
        if self.theta_s < 0 or self.theta_s > self.theta:
            raise ConfigError("need 0 <= theta_s <= theta")
        if self.mode not in (OHR, BHR):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.alpha > 0 and not self.total_rate > 0:
            raise ConfigError("rare traffic needs a positive total rate")

    @property
    def rare_rate(self) -> float:
        return self.alpha * self.total_rate

    def at(self, theta: float, theta_s: float) -> "OracleInput":
        return replace(self, theta=theta, theta_s=theta_s)

    @classmethod
    def from_popularity(cls, spec: PopularitySpec, type_id: int = 1, theta: float = 0.0,
                        theta_s: float = 0.0, mode: str = OHR) -> "OracleInput":
        t = spec.types[type_id - 1]
        keep = t.probs > 0
        return cls(spec.total_rate * t.probs[keep], t.sizes[keep], t.rare_fraction,
                   spec.total_rate, t.rare_size, theta, theta_s, mode)

    @classmethod
    def zipf(cls, n_objects: int, beta: float, q: float = 1.0, alpha: float = 0.0,
             total_rate: float = 1.0, theta: float = 0.0, theta_s: float = 0.0,
             mode: str = OHR) -> "OracleInput":
        rates = total_rate * zipf_probs(n_objects, beta, q)
        return cls(rates, 1.0, alpha, total_rate, 1.0, theta, theta_s, mode)


def _p(inp: OracleInput, x: float) -> np.ndarray:
    if inp.cdf is None:
        return -np.expm1(-inp.rates * x)
    return np.clip(np.asarray(inp.cdf(x, inp.rates), dtype=np.float64), 0.0, 1.0)


def _shat(inp: OracleInput, x: float) -> np.ndarray:
    """``E[min(X_c, x)] = int_0^x (1 - p_c(u)) du`` per object."""
    if x <= 0:
        return np.zeros_like(inp.rates)
    if inp.cdf is None:
        return -np.expm1(-inp.rates * x) / inp.rates
    out = np.empty_like(inp.rates)
    for i, r in enumerate(inp.rates):
        rr = np.array([r])
        out[i], _ = integrate.quad(lambda u: 1.0 - float(inp.cdf(u, rr)[0]), 0.0, x,
                                   epsabs=1e-12, epsrel=1e-10, limit=200)
    return out


def _hit_weights(inp: OracleInput):
    if inp.mode == OHR:
        return np.ones_like(inp.rates), 1.0
    return inp.sizes, inp.rare_size


def oracle_hit_rate(inp: OracleInput) -> float:
    w_hat, w_rare = _hit_weights(inp)
    p = _p(inp, inp.theta)
    ps = _p(inp, inp.theta_s)
    wl = w_hat * inp.rates
    num = float(np.dot(wl, p * p + (1.0 - p) * ps))
    return num / (w_rare * inp.rare_rate + float(wl.sum()))


def oracle_normalized_size(inp: OracleInput) -> float:
    p = _p(inp, inp.theta)
    wl = inp.sizes * inp.rates
    num = float(np.dot(wl, p * _shat(inp, inp.theta) + (1.0 - p) * _shat(inp, inp.theta_s)))
    rare = inp.rare_size * inp.rare_rate
    return (num + rare * inp.theta_s) / (rare + float(wl.sum()))


def hit_rate_supremum(inp: OracleInput) -> float:
    """Limit of the hit rate as both TTLs grow without bound."""
    w_hat, w_rare = _hit_weights(inp)
    wl = float(np.dot(w_hat, inp.rates))
    return wl / (w_rare * inp.rare_rate + wl)


def _solve_increasing(f, target, cap, what):
    hi = 1.0
    while f(hi) < target:
        if hi >= cap:
            raise InfeasibleError(f"{what}: target {target} not reached below {cap:g} s",
                                  supremum=f(cap))
        hi = min(2.0 * hi, cap)
    lo = 0.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        v = f(mid)
        if abs(v - target) <= RESID_TOL * 1e-3:
            return mid
        if v < target:
            lo = mid
        else:
            hi = mid
    # pick the closer bracket end
    return lo if abs(f(lo) - target) <= abs(f(hi) - target) else hi


def solve_full_filter_ttl(inp: OracleInput, h_star: float, cap: float = THETA_CAP) -> float:
    """``theta`` with ``h(theta, 0) = h_star`` (first requests keep metadata only)."""
    if h_star < 0:
        raise ConfigError("target must be non-negative")
    if h_star == 0:
        return 0.0
    sup = hit_rate_supremum(inp)
    if h_star >= sup:
        raise InfeasibleError(
            f"target {h_star} is at or above the full-filtering supremum {sup:.12g}",
            supremum=sup)

    def f(th):
        return oracle_hit_rate(inp.at(th, 0.0))

    theta = _solve_increasing(f, h_star, cap, "full filtering")
    if abs(f(theta) - h_star) > RESID_TOL:
        raise InfeasibleError(f"full-filtering solve did not converge for {h_star}",
                              supremum=sup)
    return theta


@dataclass
class DominanceReport:
    h: float
    s_pair: float
    s_full: float | None
    theta_full: float | None
    dominated: bool | None  # None when full filtering cannot reach h within L
    strict: bool


def check_filtering_dominance(inp: OracleInput, L: float | None = None) -> DominanceReport:
    """Compare the TTL pair in ``inp`` against the full-filtering pair with equal hit rate."""
    if not inp.theta_s > 0:
        raise ConfigError("the compared pair needs theta_s > 0")
    h = oracle_hit_rate(inp)
    s_pair = oracle_normalized_size(inp)
    strict = inp.alpha > 0
    try:
        theta_full = solve_full_filter_ttl(inp, h, cap=L if L is not None else THETA_CAP)
    except InfeasibleError:
        return DominanceReport(h, s_pair, None, None, None, strict)
    if L is not None and theta_full > L:
        return DominanceReport(h, s_pair, None, theta_full, None, strict)
    s_full = oracle_normalized_size(inp.at(theta_full, 0.0))
    dominated = s_full < s_pair if strict else s_full <= s_pair * (1 + 1e-12) + 1e-15
    return DominanceReport(h, s_pair, s_full, theta_full, dominated, strict)


@dataclass
class MonotonicityReport:
    n_checked: int
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_monotonicity(inp: OracleInput, thetas: Sequence[float], theta_ss: Sequence[float],
                       rel_step: float = 1e-6, sat_tol: float = 1e-9) -> MonotonicityReport:
    """Finite-difference monotonicity of the hit rate on a ``(theta, theta_s)`` grid.

    The hit rate must increase strictly in ``theta`` (checked where
    ``theta >= theta_s``) unless it is within ``sat_tol`` of its supremum,
    and must not decrease in ``theta_s``.
    """
    sup = hit_rate_supremum(inp)
    report = MonotonicityReport(0)

    def h(a, b):
        return oracle_hit_rate(inp.at(a, b))

    for th in thetas:
        for ts in theta_ss:
            if ts > th:
                continue
            report.n_checked += 1
            d = rel_step * max(1.0, th)
            lo = max(ts, th - d)
            hi = th + d
            val = h(th, ts)
            dth = h(hi, ts) - h(lo, ts)
            if not dth > 0 and not val >= sup - sat_tol:
                report.failures.append(("theta", th, ts, dth))
            ds = rel_step * max(1.0, ts)
            s_lo = max(0.0, ts - ds)
            s_hi = min(th + d, ts + ds)
            dts = h(hi, s_hi) - h(hi, s_lo)
            if dts < -1e-12:
                report.failures.append(("theta_s", th, ts, dts))
    return report


# ---------------------------------------------------------------------------
# L tuning for Zipf populations


@dataclass
class TuneResult:
    L: float
    r_star: float
    delta_r: float
    c_star: float
    lambda_c_star: float
    achieved_hit_rate: float


def tuning_intermediates(n_objects: int, beta: float, q: float, alpha: float,
                         total_rate: float, h_star: float, n: int):
    """Return ``(r*, delta_r, c*, lambda_c*, L)`` for the Zipf L-tuning rule."""
    if not beta > 1:
        raise ConfigError("L tuning needs beta > 1 (the Zipf tail sum diverges otherwise)")
    if n < 2:
        raise ConfigError("scale n must be >= 2")
    r_star = 1.0 - h_star / (1.0 + alpha / q)
    delta_r = r_star / math.log(n)
    Z = float(np.sum(np.arange(1, n_objects + 1, dtype=np.float64) ** -beta))
    c_star = (delta_r * Z * (beta - 1.0)) ** (-1.0 / (beta - 1.0))
    lam_c = total_rate * q / Z * c_star ** -beta
    margin = 0.99 * r_star - delta_r
    if not margin > 0:
        raise InfeasibleError(
            f"0.99 r* - delta_r = {margin:.6g} <= 0; increase the scale n")
    L = math.log(1.0 / margin) / lam_c
    return r_star, delta_r, c_star, lam_c, L


def tune_L(n_objects: int, beta: float, q: float, alpha: float, h_star: float,
           n: int, base_rate: float = 1.0) -> TuneResult:
    """TTL bound making ``h_star`` reachable with ``theta = theta_s = L``.

    The total rate is ``n * base_rate``.  The result is re-evaluated with the
    oracle and :class:`InfeasibleError` is raised if it falls short.
    """
    total_rate = n * base_rate
    r_star, delta_r, c_star, lam_c, L = tuning_intermediates(
        n_objects, beta, q, alpha, total_rate, h_star, n)
    inp = OracleInput.zipf(n_objects, beta, q, alpha, total_rate, L, L)
    h = oracle_hit_rate(inp)
    if h < h_star:
        raise InfeasibleError(
            f"tuned L = {L:.6g} s reaches only h = {h:.6f} < {h_star}",
            supremum=hit_rate_supremum(inp))
    return TuneResult(L, r_star, delta_r, c_star, lam_c, h)


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class WindowSeries:
    """Per-window, per-type aggregates; rows are windows, columns type ids 1..T."""

    edges: np.ndarray
    requests: np.ndarray
    hits: np.ndarray
    req_bytes: np.ndarray
    hit_bytes: np.ndarray
    integral: np.ndarray
    theta_mean: np.ndarray | None = None
    theta_s_mean: np.ndarray | None = None

    @property
    def n_windows(self) -> int:
        return len(self.edges) - 1

    def hit_rates(self, type_id: int, mode: str = OHR) -> np.ndarray:
        """Window hit rates of a type (NaN for windows without its requests)."""
        j = type_id - 1
        num = self.hits[:, j] if mode == OHR else self.hit_bytes[:, j]
        den = self.requests[:, j] if mode == OHR else self.req_bytes[:, j]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.maximum(den, 1), np.nan)


def window_edges(t0: float, t1: float, window: float) -> np.ndarray:
    if not window > 0:
        raise ConfigError("window must be positive")
    n = max(1, math.ceil((t1 - t0) / window))
    edges = t0 + window * np.arange(n + 1, dtype=np.float64)
    edges[-1] = t1  # the last window is truncated at the final arrival
    return edges


def series_from_events(times, types, sizes, hits, window: float = 7200.0,
                       n_types: int | None = None, integral=None) -> WindowSeries:
    """Aggregate per-request outcomes into windows anchored at the first arrival.

    ``integral`` is an optional ``(n_windows, n_types)`` array of byte-seconds.
    """
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.float64)
    hits = np.asarray(hits, dtype=bool)
    T = n_types or (int(types.max()) if len(types) else 1)
    if len(times) == 0:
        edges = np.array([0.0, window])
    else:
        edges = window_edges(times[0], times[-1], window)
    nw = len(edges) - 1
    w = np.clip(np.searchsorted(edges, times, side="right") - 1, 0, nw - 1)
    shape = (nw, T)

    def acc(weights):
        out = np.zeros(nw * T)
        np.add.at(out, w * T + (types - 1), weights)
        return out.reshape(shape)

    integ = np.zeros(shape) if integral is None else np.asarray(integral, dtype=np.float64)
    return WindowSeries(edges, acc(np.ones(len(times))), acc(hits.astype(float)),
                        acc(sizes), acc(sizes * hits), integ)


def outage_fraction(window_hit_rates, target: float, threshold: float = 0.05) -> float:
    """Share of windows whose hit rate is more than ``threshold`` from ``target``."""
    r = np.asarray(window_hit_rates, dtype=np.float64)
    r = r[~np.isnan(r)]
    if len(r) == 0:
        return float("nan")
    return float(np.mean(np.abs(r - target) > threshold))


@dataclass
class TypeMetrics:
    requests: int
    ohr: float
    bhr: float
    normalized_size: float
    avg_cache_bytes: float
    outage_fraction: float | None = None


@dataclass
class MetricsReport:
    per_type: dict  # type id -> TypeMetrics, or None when the type saw no requests
    ohr: float
    bhr: float
    normalized_size: float
    avg_cache_bytes: float
    horizon: float
    series: WindowSeries
    final: dict = field(default_factory=dict)

    def type(self, type_id: int) -> TypeMetrics | None:
        return self.per_type.get(type_id)


def collect_metrics(series: WindowSeries, targets=None, threshold: float = 0.05,
                    mode: str = OHR, final: dict | None = None) -> MetricsReport:
    """Cumulative and windowed metrics from a :class:`WindowSeries`."""
    horizon = float(series.edges[-1] - series.edges[0])
    T = series.requests.shape[1]
    tg = None if targets is None else np.broadcast_to(np.asarray(targets, dtype=float), (T,))
    per_type = {}
    for j in range(T):
        n = series.requests[:, j].sum()
        if n == 0:
            per_type[j + 1] = None
            continue
        rb = series.req_bytes[:, j].sum()
        integ = series.integral[:, j].sum()
        out = None
        if tg is not None:
            out = outage_fraction(series.hit_rates(j + 1, mode), tg[j], threshold)
        per_type[j + 1] = TypeMetrics(
            int(n), float(series.hits[:, j].sum() / n), float(series.hit_bytes[:, j].sum() / rb),
            float(integ / rb), float(integ / horizon) if horizon > 0 else 0.0, out)
    n = series.requests.sum()
    rb = series.req_bytes.sum()
    integ = series.integral.sum()
    return MetricsReport(
        per_type,
        float(series.hits.sum() / n) if n else float("nan"),
        float(series.hit_bytes.sum() / rb) if rb else float("nan"),
        float(integ / rb) if rb else float("nan"),
        float(integ / horizon) if horizon > 0 else 0.0,
        horizon, series, final or {})
