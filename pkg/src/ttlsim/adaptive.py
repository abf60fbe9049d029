"""d-TTL and f-TTL controllers.

Both controllers keep per-type latent variables in [0, 1]: ``vartheta``
drives the main TTL ``theta = L * vartheta`` and ``vartheta_s`` drives the
filter TTL ``theta_s = L * vartheta * gamma(vartheta, vartheta_s)``.  The
latent updates are projected stochastic-approximation steps on the hit-rate
error (``vartheta``) and the normalized-size error (``vartheta_s``).

This module is the readable reference implementation; the compiled kernels in
``_kernels`` replay exactly the same arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (CacheState, Classification, Deep, EventKind, ShallowPlusShadow)
from .errors import ConfigError

OHR, BHR = "ohr", "bhr"


def gamma(x: float, y: float, eps: float) -> float:
    """Smooth threshold blending ``y`` into 1 as ``x`` approaches 1.

    Equals ``y`` for ``x <= 1 - 1.5*eps`` and 1 for ``x >= 1 - eps/2``; the
    blend uses quartic ramps ``a = (x - 1 + 1.5 eps)^4`` and
    ``b = (1 - eps/2 - x)^4`` with weight ``a / (a + b)`` (taken as 1 when
    both vanish).  Its x-slope is at most ``4 / eps``.
    """
    a = x - 1.0 + 1.5 * eps
    b = 1.0 - 0.5 * eps - x
    if b <= 0.0:
        return 1.0
    if a <= 0.0:
        return y
    a = a * a * a * a
    b = b * b * b * b
    if b == 0.0:
        return 1.0
    if a == 0.0:
        return y
    frac = 1.0 / (1.0 + b / a)
    return min(1.0, y + (1.0 - y) * frac)


def gamma_array(x, y, eps):
    """Vectorised :func:`gamma`."""
    x = np.asarray(x, dtype=np.float64)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), x.shape)
    a = np.maximum(x - 1.0 + 1.5 * eps, 0.0) ** 4
    b = np.maximum(1.0 - 0.5 * eps - x, 0.0) ** 4
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = 1.0 / (1.0 + b / a)
    out = np.minimum(1.0, y + (1.0 - y) * frac)
    out = np.where(a == 0.0, y, out)
    return np.where(b == 0.0, 1.0, out)


# ---------------------------------------------------------------------------
# Step sizes


@dataclass(frozen=True)
class StepSchedule:
    """``eta0 / l**alpha`` (decaying) or a constant ``eta0`` when ``alpha == 0``."""

    eta0: float
    alpha: float = 0.0

    @classmethod
    def decaying(cls, eta0: float, alpha: float) -> "StepSchedule":
        if not 0.5 < alpha <= 1.0:
            raise ConfigError("decaying step exponent must lie in (0.5, 1]")
        return cls(eta0, alpha)

    @classmethod
    def constant(cls, value: float) -> "StepSchedule":
        return cls(value, 0.0)

    @property
    def is_constant(self) -> bool:
        return self.alpha == 0.0

    def __call__(self, l: int) -> float:
        return step_size(self, l)


def step_size(schedule: StepSchedule, l: int) -> float:
    if l < 1:
        raise ValueError("arrival index starts at 1")
    if schedule.alpha == 0.0:
        return schedule.eta0
    return schedule.eta0 / l ** schedule.alpha


# ---------------------------------------------------------------------------
# Configuration and state


def _per_type(value, n_types, name):
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        arr = np.full(n_types, float(arr[0]))
    if arr.size != n_types:
        raise ConfigError(f"{name}: expected {n_types} values, got {arr.size}")
    return arr


@dataclass
class ControllerConfig:
    """Controller parameters; per-type values may be given as scalars.

    ``eta_units="seconds"`` interprets ``eta`` as a step on ``theta`` in
    seconds, i.e. the latent step is ``eta / L``.  ``scale_eta_s`` divides
    the ``vartheta_s`` step by ``s* * w_avg`` where ``w_avg`` is the running
    mean request size, refreshed every ``wavg_window`` arrivals.
    """

    targets: Sequence[float] | float
    L: Sequence[float] | float = 1e7
    size_targets: Sequence[float] | float | None = None
    epsilon: float = 0.1
    mode: str = OHR
    eta: StepSchedule = field(default_factory=lambda: StepSchedule.constant(1e-2))
    eta_s: StepSchedule = field(default_factory=lambda: StepSchedule.constant(1e-9))
    eta_units: str = "latent"
    scale_eta_s: bool = False
    wavg_window: int = 10_000
    normalize_bhr_weight: bool = False
    w_max: float | None = None
    init_vartheta: Sequence[float] | float = 0.0
    init_vartheta_s: Sequence[float] | float = 0.0
    n_types: int | None = None

    def __post_init__(self):
        n = self.n_types
        if n is None:
            n = max(np.atleast_1d(self.targets).size, np.atleast_1d(self.L).size)
        self.n_types = int(n)
        self.targets = _per_type(self.targets, n, "targets")
        self.L = _per_type(self.L, n, "L")
        if self.size_targets is not None:
            self.size_targets = _per_type(self.size_targets, n, "size_targets")
        self.init_vartheta = _per_type(self.init_vartheta, n, "init_vartheta")
        self.init_vartheta_s = _per_type(self.init_vartheta_s, n, "init_vartheta_s")
        self.validate()

    def validate(self):
        if np.any(self.targets <= 0) or np.any(self.targets >= 1):
            raise ConfigError("hit-rate targets must lie in (0, 1)")
        if np.any(self.L <= 0):
            raise ConfigError("L must be positive")
        if not 0 < self.epsilon < 2 / 3:
            raise ConfigError("epsilon must lie in (0, 2/3)")
        if self.mode not in (OHR, BHR):
            raise ConfigError(f"mode must be 'ohr' or 'bhr', got {self.mode!r}")
        if self.eta_units not in ("latent", "seconds"):
            raise ConfigError("eta_units must be 'latent' or 'seconds'")
        if self.size_targets is not None and np.any(self.size_targets < 0):
            raise ConfigError("size targets must be non-negative")
        if self.scale_eta_s and self.size_targets is not None and np.any(self.size_targets <= 0):
            raise ConfigError("step scaling by 1/(s* w_avg) needs positive size targets")
        if self.normalize_bhr_weight and not (self.w_max and self.w_max > 0):
            raise ConfigError("normalize_bhr_weight requires w_max > 0")
        if self.eta.eta0 < 0 or self.eta_s.eta0 < 0 or self.wavg_window < 1:
            raise ConfigError("step sizes must be non-negative")
        for v in (self.init_vartheta, self.init_vartheta_s):
            if np.any(v < 0) or np.any(v > 1):
                raise ConfigError("initial latents must lie in [0, 1]")

    def hit_weight(self, size: int) -> float:
        if self.mode == OHR:
            return 1.0
        if self.normalize_bhr_weight:
            return size / self.w_max
        return float(size)


@dataclass
class ControllerState:
    vartheta: np.ndarray
    vartheta_s: np.ndarray
    theta: np.ndarray
    theta_s: np.ndarray
    l: int = 0
    size_sum: float = 0.0
    w_avg: float = 0.0
    log: list | None = None

    @classmethod
    def initial(cls, config: ControllerConfig, record: bool = False) -> "ControllerState":
        v = config.init_vartheta.copy()
        vs = config.init_vartheta_s.copy()
        theta = config.L * v
        theta_s = np.array([config.L[i] * v[i] * gamma(v[i], vs[i], config.epsilon)
                            for i in range(len(v))])
        return cls(v, vs, theta, theta_s, log=[] if record else None)

    def _observe_size(self, config: ControllerConfig, size: int):
        self.l += 1
        self.size_sum += size
        if self.l == 1 or (self.l - 1) % config.wavg_window == 0:
            self.w_avg = self.size_sum / self.l


LOG_HEADER = ("l", "arrival_time", "type", "event", "Y", "s",
              "theta", "theta_s", "vartheta", "vartheta_s")


# ---------------------------------------------------------------------------
# Pure update rules


def dttl_update(vartheta: float, h_star: float, hit: bool, eta: float, w_hat: float) -> float:
    """Projected step ``clip(vartheta + eta * w_hat * (h* - Y), 0, 1)``."""
    v = vartheta + eta * w_hat * (h_star - (1.0 if hit else 0.0))
    return min(1.0, max(0.0, v))


def estimate_s(event: Classification, theta: float, theta_s: float) -> float:
    """Online normalized-size estimate from the pre-update TTLs."""
    k = event.kind
    if k is EventKind.DEEP_HIT or k is EventKind.SHALLOW_HIT:
        return theta - event.remaining
    if k is EventKind.VIRTUAL_HIT:
        return theta
    return theta_s


def _latent_eta(config: ControllerConfig, state: ControllerState, i: int) -> float:
    eta = step_size(config.eta, state.l)
    if config.eta_units == "seconds":
        eta /= config.L[i]
    return eta


def dttl_on_request(state: ControllerState, config: ControllerConfig, type_id: int,
                    hit: bool, w_hat: float, size: int = 1) -> float:
    """Advance the arrival counter, update ``vartheta`` and return the new ``theta``."""
    i = type_id - 1
    state._observe_size(config, size)
    eta = _latent_eta(config, state, i)
    state.vartheta[i] = dttl_update(state.vartheta[i], config.targets[i], hit, eta, w_hat)
    state.theta[i] = config.L[i] * state.vartheta[i]
    return state.theta[i]


def fttl_on_request(state: ControllerState, config: ControllerConfig, cache: CacheState,
                    obj, type_id: int, size: int):
    """Process one f-TTL arrival (cache already advanced to its time).

    Returns ``(classification, theta, theta_s, s)`` with post-update TTLs.
    """
    if config.size_targets is None:
        raise ConfigError("f-TTL needs size targets")
    i = type_id - 1
    cls = cache.classify(obj)
    hit = cls.kind.is_hit
    s = estimate_s(cls, state.theta[i], state.theta_s[i])

    state._observe_size(config, size)
    eta = _latent_eta(config, state, i)
    v = dttl_update(state.vartheta[i], config.targets[i], hit, eta, config.hit_weight(size))

    s_star = config.size_targets[i]
    eta_s = step_size(config.eta_s, state.l)
    if config.scale_eta_s:
        eta_s /= s_star * state.w_avg
    vs = min(1.0, max(0.0, state.vartheta_s[i] + eta_s * size * (s_star - s)))

    state.vartheta[i] = v
    state.vartheta_s[i] = vs
    theta = config.L[i] * v
    theta_s = theta * gamma(v, vs, config.epsilon)
    state.theta[i] = theta
    state.theta_s[i] = theta_s

    if cls.kind is EventKind.MISS:
        cache.install(obj, size, type_id, ShallowPlusShadow(theta_s, theta))
    else:
        cache.install(obj, size, type_id, Deep(theta))
    if state.log is not None:
        state.log.append((state.l, cache.last_event_time, type_id, cls.kind.value,
                          int(hit), s, theta, theta_s, v, vs))
    return cls, theta, theta_s, s


class DTTLController:
    """Single-level adaptive TTL cache driven request by request."""

    def __init__(self, config: ControllerConfig, record: bool = False):
        self.config = config
        self.state = ControllerState.initial(config, record)
        self.cache = CacheState()

    def on_request(self, t: float, obj, type_id: int, size: int) -> Classification:
        self.cache.advance_to(t)
        cls = self.cache.classify(obj)
        hit = cls.kind is EventKind.DEEP_HIT
        theta = dttl_on_request(self.state, self.config, type_id, hit,
                                self.config.hit_weight(size), size)
        self.cache.install(obj, size, type_id, Deep(theta))
        st = self.state
        if st.log is not None:
            i = type_id - 1
            st.log.append((st.l, t, type_id, cls.kind.value, int(hit), float("nan"),
                           theta, st.theta_s[i], st.vartheta[i], st.vartheta_s[i]))
        return cls


class FTTLController:
    """Two-level filtering TTL cache driven request by request."""

    def __init__(self, config: ControllerConfig, record: bool = False):
        if config.size_targets is None:
            raise ConfigError("f-TTL needs size targets")
        self.config = config
        self.state = ControllerState.initial(config, record)
        self.cache = CacheState()

    def on_request(self, t: float, obj, type_id: int, size: int) -> Classification:
        self.cache.advance_to(t)
        cls, *_ = fttl_on_request(self.state, self.config, self.cache, obj, type_id, size)
        return cls
