"""Simulation driver shared by tests, experiments and the CLI.

``simulate(stream, policy)`` runs one policy over a :class:`RequestStream`
and returns windowed aggregates.  ``engine="fast"`` uses the compiled
kernels; ``engine="reference"`` drives :mod:`ttlsim.core` and
:mod:`ttlsim.adaptive` object by object and is used to cross-check them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .adaptive import (BHR, ControllerConfig, ControllerState, DTTLController, FTTLController,
                       fttl_on_request)
from .analytics import MetricsReport, WindowSeries, collect_metrics, window_edges
from .baselines import LRUCache
from .core import CacheState, Deep, EventKind, ShallowPlusShadow
from .errors import ConfigError
from .workload import RequestStream

DEFAULT_WINDOW = 7200.0
EVENT_NAMES = {K.MISS: "miss", K.DEEP_HIT: "deep_hit",
               K.SHALLOW_HIT: "shallow_hit", K.VIRTUAL_HIT: "virtual_hit"}
EVENT_CODES = {v: k for k, v in EVENT_NAMES.items()}


@dataclass
class FixedTTLPolicy:
    ttl: float | list


@dataclass
class StaticFTTLPolicy:
    theta: float | list
    theta_s: float | list


@dataclass
class DTTLPolicy:
    config: ControllerConfig


@dataclass
class FTTLPolicy:
    config: ControllerConfig


@dataclass
class LRUPolicy:
    capacity_bytes: float


Policy = FixedTTLPolicy | StaticFTTLPolicy | DTTLPolicy | FTTLPolicy | LRUPolicy


@dataclass
class SimulationResult:
    series: WindowSeries
    total_integral: float
    final: dict = field(default_factory=dict)
    trajectory: dict | None = None

    def metrics(self, targets=None, threshold: float = 0.05, mode: str = "ohr") -> MetricsReport:
        return collect_metrics(self.series, targets, threshold, mode, self.final)


def _per_type(v, n_types):
    a = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if a.size == 1:
        a = np.full(n_types, float(a[0]))
    if a.size != n_types:
        raise ConfigError(f"expected {n_types} per-type values, got {a.size}")
    return a.copy()


def _empty_series(stream, window, n_types):
    if len(stream) == 0:
        edges = np.array([0.0, 0.0])
    else:
        edges = window_edges(float(stream.times[0]), float(stream.times[-1]), window)
    nw = len(edges) - 1
    z = lambda: np.zeros((nw, n_types))  # noqa: E731
    return WindowSeries(edges, z(), z(), z(), z(), z(), z(), z())


def _finish_series(series):
    with np.errstate(invalid="ignore", divide="ignore"):
        series.theta_mean = np.where(series.requests > 0,
                                     series.theta_mean / np.maximum(series.requests, 1), np.nan)
        series.theta_s_mean = np.where(series.requests > 0,
                                       series.theta_s_mean / np.maximum(series.requests, 1), np.nan)
    return series


def simulate(stream: RequestStream, policy: Policy, window: float = DEFAULT_WINDOW,
             engine: str = "fast", record: bool = False, n_types: int | None = None
             ) -> SimulationResult:
    if not window > 0:
        raise ConfigError("window must be positive")
    if n_types is None:
        n_types = max(stream.n_types, 1)
        if isinstance(policy, (DTTLPolicy, FTTLPolicy)):
            n_types = max(n_types, policy.config.n_types)
    if engine == "fast":
        return _simulate_fast(stream, policy, window, record, n_types)
    if engine == "reference":
        return _simulate_reference(stream, policy, window, record, n_types)
    raise ConfigError(f"unknown engine {engine!r}")


# ---------------------------------------------------------------------------


def _controller_arrays(cfg: ControllerConfig, n_types):
    if cfg.n_types != n_types:
        raise ConfigError(f"controller has {cfg.n_types} types, stream has {n_types}")
    st = ControllerState.initial(cfg)
    size_t = cfg.size_targets if cfg.size_targets is not None else np.zeros(n_types)
    weight_mode = 0 if cfg.mode != BHR else (2 if cfg.normalize_bhr_weight else 1)
    return st, size_t, weight_mode


def _simulate_fast(stream, policy, window, record, n_types):
    series = _empty_series(stream, window, n_types)
    nw = series.n_windows
    t0 = float(series.edges[0])
    n = len(stream)
    rec = [np.zeros(n if record else 0, dtype=np.int64)] + \
        [np.zeros(n if record else 0) for _ in range(5)]
    args = (stream.times, stream.objects, stream.types, stream.sizes, stream.n_objects)
    win_args = (t0, float(window), nw)

    if isinstance(policy, LRUPolicy):
        total = K.lru_kernel(*args, float(policy.capacity_bytes), *win_args,
                             series.requests, series.hits, series.req_bytes,
                             series.hit_bytes, series.integral)
        series.theta_mean = series.theta_s_mean = None
        return SimulationResult(series, float(total), {"capacity_bytes": policy.capacity_bytes})

    zeros = np.zeros(n_types)
    if isinstance(policy, (FixedTTLPolicy, StaticFTTLPolicy)):
        if isinstance(policy, FixedTTLPolicy):
            code = K.STATIC_DTTL
            theta = _per_type(policy.ttl, n_types)
            theta_s = np.zeros(n_types)
        else:
            code = K.STATIC_FTTL
            theta = _per_type(policy.theta, n_types)
            theta_s = _per_type(policy.theta_s, n_types)
        if np.any(theta < 0) or np.any(theta_s < 0) or np.any(theta_s > theta):
            raise ConfigError("static TTLs need 0 <= theta_s <= theta")
        ctrl = (zeros, zeros, zeros, zeros.copy(), zeros.copy(), theta, theta_s,
                0.1, 0.0, 0.0, 0.0, 0.0, False, False, 1, 0, 1.0)
        state = None
    else:
        cfg = policy.config
        if isinstance(policy, FTTLPolicy) and cfg.size_targets is None:
            raise ConfigError("f-TTL needs size targets")
        code = K.ADAPTIVE_DTTL if isinstance(policy, DTTLPolicy) else K.ADAPTIVE_FTTL
        state, size_t, weight_mode = _controller_arrays(cfg, n_types)
        ctrl = (cfg.targets, cfg.L, size_t, state.vartheta, state.vartheta_s,
                state.theta, state.theta_s, float(cfg.epsilon),
                float(cfg.eta.eta0), float(cfg.eta.alpha),
                float(cfg.eta_s.eta0), float(cfg.eta_s.alpha),
                cfg.eta_units == "seconds", bool(cfg.scale_eta_s), int(cfg.wavg_window),
                weight_mode, float(cfg.w_max or 1.0))

    total = K.ttl_kernel(*args, code, *ctrl, *win_args,
                         series.requests, series.hits, series.req_bytes, series.hit_bytes,
                         series.integral, series.theta_mean, series.theta_s_mean,
                         record, *rec)
    final = {"theta": ctrl[5].copy(), "theta_s": ctrl[6].copy()}
    if state is not None:
        final["vartheta"] = ctrl[3].copy()
        final["vartheta_s"] = ctrl[4].copy()
    traj = None
    if record:
        traj = {"event": rec[0], "s": rec[1], "theta": rec[2], "theta_s": rec[3],
                "vartheta": rec[4], "vartheta_s": rec[5]}
    return SimulationResult(_finish_series(series), float(total), final, traj)


# ---------------------------------------------------------------------------


def _window_index(t, t0, width, nw):
    k = int((t - t0) / width)
    return min(max(k, 0), nw - 1)


def _simulate_reference(stream, policy, window, record, n_types):
    series = _empty_series(stream, window, n_types)
    nw = series.n_windows
    t0 = float(series.edges[0])
    n = len(stream)
    traj = None
    if record:
        traj = {"event": np.zeros(n, dtype=np.int64), "s": np.zeros(n), "theta": np.zeros(n),
                "theta_s": np.zeros(n), "vartheta": np.zeros(n), "vartheta_s": np.zeros(n)}

    lru = None
    ctl = None
    cache = None
    theta = theta_s = None
    if isinstance(policy, LRUPolicy):
        lru = LRUCache(policy.capacity_bytes)
    elif isinstance(policy, (DTTLPolicy, FTTLPolicy)):
        _controller_arrays(policy.config, n_types)
        cls = DTTLController if isinstance(policy, DTTLPolicy) else FTTLController
        ctl = cls(policy.config)
        cache = ctl.cache
    else:
        cache = CacheState()
        if isinstance(policy, FixedTTLPolicy):
            theta = _per_type(policy.ttl, n_types)
            theta_s = np.zeros(n_types)
        else:
            theta = _per_type(policy.theta, n_types)
            theta_s = _per_type(policy.theta_s, n_types)

    cur_win = 0
    prev_integral = np.zeros(n_types)
    lru_t = float(stream.times[0]) if n else 0.0
    lru_integral = np.zeros(n_types)

    def type_integrals():
        if lru is not None:
            return lru_integral.copy()
        return np.array([cache.type_integral.get(j + 1, 0.0) for j in range(n_types)])

    def lru_advance(t):
        nonlocal lru_t
        for ty, b in lru.type_bytes.items():
            lru_integral[ty - 1] += b * (t - lru_t)
        lru_t = t

    def advance(t):
        if lru is not None:
            lru_advance(t)
        else:
            cache.advance_to(t)

    times, objects, types, sizes = (stream.times.tolist(), stream.objects.tolist(),
                                    stream.types.tolist(), stream.sizes.tolist())
    for k in range(n):
        t = times[k]
        c, ty, w = objects[k], types[k], sizes[k]
        i = ty - 1
        win = _window_index(t, t0, window, nw)
        while cur_win < win:
            advance(t0 + (cur_win + 1) * window)
            now = type_integrals()
            series.integral[cur_win] = now - prev_integral
            prev_integral = now
            cur_win += 1

        s_est = 0.0
        if lru is not None:
            lru_advance(t)
            hit = lru.request(c, w, ty)
        elif ctl is not None:
            cache.advance_to(t)
            if isinstance(ctl, FTTLController):
                ev, _, _, s_est = fttl_on_request(ctl.state, ctl.config, cache, c, ty, w)
            else:
                ev = ctl.on_request(t, c, ty, w)
            hit = ev.kind.is_hit
        else:
            cache.advance_to(t)
            ev = cache.classify(c)
            hit = ev.kind.is_hit
            if isinstance(policy, FixedTTLPolicy) or ev.kind is not EventKind.MISS:
                cache.install(c, w, ty, Deep(theta[i]))
            else:
                cache.install(c, w, ty, ShallowPlusShadow(theta_s[i], theta[i]))

        series.requests[win, i] += 1
        series.req_bytes[win, i] += w
        if hit:
            series.hits[win, i] += 1
            series.hit_bytes[win, i] += w
        if lru is None:
            th = ctl.state.theta[i] if ctl is not None else theta[i]
            ths = ctl.state.theta_s[i] if ctl is not None else theta_s[i]
            series.theta_mean[win, i] += th
            series.theta_s_mean[win, i] += ths
            if traj is not None:
                traj["event"][k] = EVENT_CODES[ev.kind.value]
                traj["s"][k] = s_est
                traj["theta"][k] = th
                traj["theta_s"][k] = ths
                if ctl is not None:
                    traj["vartheta"][k] = ctl.state.vartheta[i]
                    traj["vartheta_s"][k] = ctl.state.vartheta_s[i]

    if n:
        advance(times[-1])
        series.integral[cur_win] = type_integrals() - prev_integral

    if lru is not None:
        series.theta_mean = series.theta_s_mean = None
        return SimulationResult(series, float(series.integral.sum()),
                                {"capacity_bytes": policy.capacity_bytes})
    final = {}
    if ctl is not None:
        final = {"theta": ctl.state.theta.copy(), "theta_s": ctl.state.theta_s.copy(),
                 "vartheta": ctl.state.vartheta.copy(),
                 "vartheta_s": ctl.state.vartheta_s.copy()}
    else:
        final = {"theta": theta, "theta_s": theta_s}
    total = cache.size_time_integral if cache is not None else float(series.integral.sum())
    return SimulationResult(_finish_series(series), float(total), final, traj)

