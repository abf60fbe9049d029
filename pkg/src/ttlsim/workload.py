"""Synthetic request streams, trace files and rarity audits.

Streams are stored column-wise (:class:`RequestStream`) with dense integer
object ids so that multi-million request runs stay cheap; opaque string ids
are materialised only when iterating :class:`Request` objects or writing a
trace.  Recurrent objects are named ``obj:<type>:<rank>`` and rare objects
``rare:<type>:<counter>``, so the two sets never collide.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, TraceParseError, TraceValidationError

TRACE_HEADER = ("arrival_time_s", "object_id", "type_id", "size_bytes")
PROB_TOL = 1e-9


@dataclass(frozen=True)
class Request:
    arrival_time: float
    object_id: str
    type_id: int
    size_bytes: int


@dataclass
class RequestStream:
    """Column-oriented request stream.

    ``objects`` holds dense ids indexing the per-object tables
    (``object_type``, ``object_rank``, ``rare``).  ``names`` is only set for
    streams read from a trace, where the opaque ids are arbitrary strings.
    """

    times: np.ndarray
    objects: np.ndarray
    types: np.ndarray
    sizes: np.ndarray
    object_type: np.ndarray
    object_rank: np.ndarray
    rare: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        self.times = np.ascontiguousarray(self.times, dtype=np.float64)
        self.objects = np.ascontiguousarray(self.objects, dtype=np.int64)
        self.types = np.ascontiguousarray(self.types, dtype=np.int64)
        self.sizes = np.ascontiguousarray(self.sizes, dtype=np.int64)
        self.object_type = np.asarray(self.object_type, dtype=np.int64)
        self.object_rank = np.asarray(self.object_rank, dtype=np.int64)
        self.rare = np.asarray(self.rare, dtype=bool)

    def __len__(self):
        return len(self.times)

    def __iter__(self) -> Iterator[Request]:
        for i in range(len(self.times)):
            yield self.request(i)

    @property
    def n_objects(self) -> int:
        return len(self.rare)

    @property
    def n_types(self) -> int:
        if len(self.types) == 0:
            return int(self.object_type.max(initial=0))
        return int(max(self.types.max(), self.object_type.max(initial=0)))

    @property
    def horizon(self) -> float:
        if len(self.times) == 0:
            return 0.0
        return float(self.times[-1] - self.times[0])

    def object_name(self, idx: int) -> str:
        if self.names is not None:
            return self.names[idx]
        kind = "rare" if self.rare[idx] else "obj"
        return f"{kind}:{self.object_type[idx]}:{self.object_rank[idx]}"

    def request(self, i: int) -> Request:
        return Request(
            float(self.times[i]),
            self.object_name(int(self.objects[i])),
            int(self.types[i]),
            int(self.sizes[i]),
        )

    def head(self, n: int) -> "RequestStream":
        """First ``n`` requests; the object tables are shared."""
        return RequestStream(
            self.times[:n], self.objects[:n], self.types[:n], self.sizes[:n],
            self.object_type, self.object_rank, self.rare, self.names,
        )

    @classmethod
    def from_requests(cls, requests: Iterable[Request]) -> "RequestStream":
        index: dict[str, int] = {}
        names: list[str] = []
        obj_type: list[int] = []
        times, objects, types, sizes = [], [], [], []
        for r in requests:
            idx = index.get(r.object_id)
            if idx is None:
                idx = index[r.object_id] = len(names)
                names.append(r.object_id)
                obj_type.append(r.type_id)
            times.append(r.arrival_time)
            objects.append(idx)
            types.append(r.type_id)
            sizes.append(r.size_bytes)
        rare = [n.startswith("rare:") for n in names]
        return cls(
            np.array(times, dtype=np.float64), np.array(objects, dtype=np.int64),
            np.array(types, dtype=np.int64), np.array(sizes, dtype=np.int64),
            np.array(obj_type, dtype=np.int64), np.zeros(len(names), dtype=np.int64),
            np.array(rare, dtype=bool), names,
        )


# ---------------------------------------------------------------------------
# Popularity specifications


@dataclass
class TypeSpec:
    """Recurrent objects and rare traffic of one content type.

    ``probs`` are absolute labeling probabilities (they sum to ``q_t``, not 1).
    """

    probs: np.ndarray
    sizes: np.ndarray
    rare_fraction: float = 0.0
    rare_size: int = 1

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if sizes.ndim == 0:
            sizes = np.full(len(self.probs), int(sizes), dtype=np.int64)
        self.sizes = sizes

    @property
    def n_objects(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class ZipfType:
    n_objects: int
    beta: float
    q: float
    alpha: float = 0.0
    size: int = 1
    rare_size: int = 1


def zipf_probs(n_objects: int, beta: float, q: float = 1.0) -> np.ndarray:
    """``q * k**-beta / Z`` for ranks ``k = 1..n_objects``."""
    weights = np.arange(1, n_objects + 1, dtype=np.float64) ** -beta
    return q * weights / weights.sum()


@dataclass
class PopularitySpec:
    total_rate: float
    types: list[TypeSpec] = field(default_factory=list)

    @classmethod
    def zipf(cls, total_rate: float, types: Sequence[ZipfType]) -> "PopularitySpec":
        return cls(total_rate, [
            TypeSpec(zipf_probs(z.n_objects, z.beta, z.q), z.size, z.alpha, z.rare_size)
            for z in types
        ])

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_recurrent(self) -> int:
        return sum(t.n_objects for t in self.types)

    def label_probs(self) -> np.ndarray:
        """Probabilities over the K recurrent labels followed by T rare labels."""
        rec = [t.probs for t in self.types]
        rare = [t.rare_fraction for t in self.types]
        return np.concatenate(rec + [np.asarray(rare, dtype=np.float64)])

    def validate(self):
        if not self.types:
            raise ConfigError("popularity spec has no types")
        if not self.total_rate > 0:
            raise ConfigError(f"total_rate must be positive, got {self.total_rate}")
        for i, t in enumerate(self.types, start=1):
            if np.any(t.probs < 0):
                raise ConfigError(f"type {i}: negative object probability")
            if not 0.0 <= t.rare_fraction <= 1.0:
                raise ConfigError(f"type {i}: rare fraction must lie in [0, 1]")
            if len(t.sizes) != len(t.probs) or np.any(t.sizes <= 0) or t.rare_size <= 0:
                raise ConfigError(f"type {i}: sizes must be positive, one per object")
        total = float(self.label_probs().sum())
        if abs(total - 1.0) > PROB_TOL:
            raise ConfigError(f"label probabilities sum to {total!r}, expected 1")

    def object_tables(self):
        """Per recurrent label: (type id, rank within type, size)."""
        types = np.concatenate([np.full(t.n_objects, i, dtype=np.int64)
                                for i, t in enumerate(self.types, start=1)])
        ranks = np.concatenate([np.arange(1, t.n_objects + 1, dtype=np.int64)
                                for t in self.types])
        sizes = np.concatenate([t.sizes for t in self.types])
        return types, ranks, sizes


# ---------------------------------------------------------------------------
# Rare labeling


@dataclass(frozen=True)
class OneHitWonders:
    """Every rare request gets a never-seen id."""


@dataclass(frozen=True)
class FlashCrowds:
    """Short bursts of requests for one fresh rare id.

    A rare arrival starts a burst only while the per-type bursty count stays
    within ``budget_scale * l**budget_exponent``; the burst's follow-up
    requests are injected with gaps drawn from U(0, R / (2 * burst_size)), so
    each follow-up is bursty with respect to ``R`` and the id never recurs
    after the burst.
    """

    burst_size: int = 5
    R: float = 1.0
    budget_exponent: float = 0.5
    budget_scale: float = 1.0

    def __post_init__(self):
        if self.burst_size < 1 or self.R <= 0:
            raise ConfigError("flash crowds need burst_size >= 1 and R > 0")


RareLabelerMode = OneHitWonders | FlashCrowds


def _assign_objects(times, labels, n_rec, rec_types, rec_ranks, rec_sizes,
                    rare_sizes, rare_mode, rng, n):
    """Turn label-state sequences into a RequestStream.

    Labels ``< n_rec`` are recurrent objects; label ``n_rec + j`` is rare
    traffic of type ``j + 1``.
    """
    n_types = len(rare_sizes)
    if isinstance(rare_mode, FlashCrowds):
        return _assign_flash_crowds(times, labels, n_rec, rec_types, rec_ranks,
                                    rec_sizes, rare_sizes, rare_mode, rng, n)

    is_rare = labels >= n_rec
    n_rare = int(is_rare.sum())
    objects = labels.astype(np.int64).copy()
    objects[is_rare] = n_rec + np.arange(n_rare, dtype=np.int64)
    rare_type = (labels[is_rare] - n_rec + 1).astype(np.int64)
    # per-type running counter gives rare:<type>:<counter>
    rare_rank = np.zeros(n_rare, dtype=np.int64)
    for t in range(1, n_types + 1):
        sel = rare_type == t
        rare_rank[sel] = np.arange(1, int(sel.sum()) + 1)

    object_type = np.concatenate([rec_types, rare_type])
    object_rank = np.concatenate([rec_ranks, rare_rank])
    rare = np.concatenate([np.zeros(n_rec, dtype=bool), np.ones(n_rare, dtype=bool)])
    obj_sizes = np.concatenate([rec_sizes, np.asarray(rare_sizes, dtype=np.int64)[rare_type - 1]])
    return RequestStream(times, objects, object_type[objects], obj_sizes[objects],
                         object_type, object_rank, rare)


def _assign_flash_crowds(times, labels, n_rec, rec_types, rec_ranks, rec_sizes,
                         rare_sizes, mode, rng, n):
    n_types = len(rare_sizes)
    out_t, out_o = [], []
    new_type, new_rank = [], []
    counters = [0] * n_types
    bursty = [0] * n_types
    pending: list = []  # (time, seq, object)
    seq = 0
    gap_hi = mode.R / (2.0 * mode.burst_size)
    i = 0
    n_base = len(times)
    while len(out_t) < n:
        if pending and (i >= n_base or pending[0][0] <= times[i]):
            t, _, obj = heapq.heappop(pending)
            out_t.append(t)
            out_o.append(obj)
            continue
        if i >= n_base:
            break
        t = float(times[i])
        lab = int(labels[i])
        i += 1
        if lab < n_rec:
            out_t.append(t)
            out_o.append(lab)
            continue
        k = lab - n_rec
        counters[k] += 1
        obj = n_rec + len(new_type)
        new_type.append(k + 1)
        new_rank.append(counters[k])
        out_t.append(t)
        out_o.append(obj)
        l = len(out_t)
        extra = mode.burst_size - 1
        if extra > 0 and bursty[k] + extra <= mode.budget_scale * l ** mode.budget_exponent:
            bursty[k] += extra
            tb = t
            for g in rng.uniform(0.0, gap_hi, size=extra):
                tb += max(float(g), 1e-12)
                seq += 1
                heapq.heappush(pending, (tb, seq, obj))

    object_type = np.concatenate([rec_types, np.array(new_type, dtype=np.int64)])
    object_rank = np.concatenate([rec_ranks, np.array(new_rank, dtype=np.int64)])
    rare = np.concatenate([np.zeros(n_rec, dtype=bool), np.ones(len(new_type), dtype=bool)])
    rare_t = np.array(new_type, dtype=np.int64)
    obj_sizes = np.concatenate([rec_sizes, np.asarray(rare_sizes, dtype=np.int64)[rare_t - 1]])
    objects = np.array(out_o, dtype=np.int64)
    return RequestStream(np.array(out_t, dtype=np.float64), objects, object_type[objects],
                         obj_sizes[objects], object_type, object_rank, rare)


def gen_poisson_independent(spec: PopularitySpec, rare_mode: RareLabelerMode | None = None,
                            seed: int = 0, n: int = 1000) -> RequestStream:
    """Poisson arrivals, each independently labeled by ``spec.label_probs()``."""
    spec.validate()
    if n < 1:
        raise ConfigError("n must be >= 1")
    rare_mode = rare_mode or OneHitWonders()
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.exponential(1.0 / spec.total_rate, size=n))
    cum = np.cumsum(spec.label_probs())
    labels = np.searchsorted(cum, rng.random(n) * cum[-1], side="right")
    np.minimum(labels, len(cum) - 1, out=labels)
    rec_types, rec_ranks, rec_sizes = spec.object_tables()
    rare_sizes = [t.rare_size for t in spec.types]
    return _assign_objects(times, labels, spec.n_recurrent, rec_types, rec_ranks,
                           rec_sizes, rare_sizes, rare_mode, rng, n)


# ---------------------------------------------------------------------------
# Markov renewal labeling


@dataclass(frozen=True)
class InterArrival:
    """I.i.d. inter-arrival law with mean ``1 / rate``.

    ``kind`` is ``exponential``, ``weibull`` (uses ``shape``) or
    ``hyperexp`` (balanced two-phase hyperexponential, phase-1 probability
    ``p1``).
    """

    kind: str = "exponential"
    rate: float = 1.0
    shape: float = 1.0
    p1: float = 0.5

    def __post_init__(self):
        if self.kind not in ("exponential", "weibull", "hyperexp"):
            raise ConfigError(f"unknown inter-arrival kind {self.kind!r}")
        if not self.rate > 0 or not self.shape > 0 or not 0 < self.p1 < 1:
            raise ConfigError("inter-arrival parameters out of range")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "exponential":
            return rng.exponential(self.mean, size=n)
        if self.kind == "weibull":
            scale = self.mean / math.gamma(1.0 + 1.0 / self.shape)
            return scale * rng.weibull(self.shape, size=n)
        # balanced means: p1/r1 = (1-p1)/r2 = mean/2
        r1 = 2.0 * self.rate * self.p1
        r2 = 2.0 * self.rate * (1.0 - self.p1)
        phase1 = rng.random(n) < self.p1
        return np.where(phase1, rng.exponential(1.0 / r1, size=n),
                        rng.exponential(1.0 / r2, size=n))


@dataclass
class MarkovLabelSpec:
    """Markov chain over K recurrent states followed by T rare-type states."""

    P: np.ndarray
    n_recurrent: int
    interarrival: InterArrival = field(default_factory=InterArrival)
    object_types: np.ndarray | None = None
    object_sizes: np.ndarray | None = None
    rare_sizes: Sequence[int] | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)

    @property
    def n_types(self) -> int:
        return self.P.shape[0] - self.n_recurrent

    def validate(self):
        P = self.P
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ConfigError("transition matrix must be square")
        if not 0 <= self.n_recurrent <= P.shape[0] or self.n_types < 0:
            raise ConfigError("n_recurrent out of range")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > PROB_TOL):
            raise ConfigError("transition matrix rows must be probability vectors")
        if np.any(np.diag(P) <= 0):
            raise ConfigError("every diagonal entry of P must be positive")
        if not is_irreducible(P):
            raise ConfigError("transition matrix is reducible")

    def tables(self):
        K, T = self.n_recurrent, self.n_types
        types = (np.ones(K, dtype=np.int64) if self.object_types is None
                 else np.asarray(self.object_types, dtype=np.int64))
        sizes = (np.ones(K, dtype=np.int64) if self.object_sizes is None
                 else np.asarray(self.object_sizes, dtype=np.int64))
        ranks = np.zeros(K, dtype=np.int64)
        for t in np.unique(types):
            sel = types == t
            ranks[sel] = np.arange(1, int(sel.sum()) + 1)
        rare_sizes = [1] * T if self.rare_sizes is None else list(self.rare_sizes)
        return types, ranks, sizes, rare_sizes


def is_irreducible(P: np.ndarray) -> bool:
    """Strong connectivity by forward and backward reachability from state 0."""
    adj = np.asarray(P) > 0

    def reach(a):
        seen = np.zeros(a.shape[0], dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = np.flatnonzero(a[frontier].any(axis=0) & ~seen)
            seen[nxt] = True
            frontier = nxt.tolist()
        return seen.all()

    return reach(adj) and reach(adj.T)


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Solve ``pi P = pi``, ``sum(pi) = 1`` by least squares."""
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def gen_markov_renewal(mspec: MarkovLabelSpec, rare_mode: RareLabelerMode | None = None,
                       seed: int = 0, n: int = 1000) -> RequestStream:
    """Markov-modulated labels with i.i.d. inter-arrivals from ``mspec.interarrival``."""
    mspec.validate()
    if n < 1:
        raise ConfigError("n must be >= 1")
    rare_mode = rare_mode or OneHitWonders()
    rng = np.random.default_rng(seed)
    times = np.cumsum(mspec.interarrival.sample(rng, n))

    cum_rows = [list(np.cumsum(row)) for row in mspec.P]
    for row in cum_rows:
        row[-1] = 1.0 + 1e-12
    pi = stationary_distribution(mspec.P)
    state = int(min(np.searchsorted(np.cumsum(pi), rng.random(), side="right"), len(pi) - 1))
    u = rng.random(n).tolist()
    labels = np.empty(n, dtype=np.int64)
    bisect_right = bisect.bisect_right
    for i in range(n):
        state = bisect_right(cum_rows[state], u[i])
        labels[i] = state

    rec_types, rec_ranks, rec_sizes, rare_sizes = mspec.tables()
    return _assign_objects(times, labels, mspec.n_recurrent, rec_types, rec_ranks,
                           rec_sizes, rare_sizes, rare_mode, rng, n)


# ---------------------------------------------------------------------------
# Trace files


def write_trace(stream: RequestStream | Iterable[Request], path, comment: str | None = None):
    """Write a headered CSV trace; floats use the shortest round-trip repr."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        if isinstance(stream, RequestStream):
            names = stream.object_name
            for t, o, ty, sz in zip(stream.times.tolist(), stream.objects.tolist(),
                                    stream.types.tolist(), stream.sizes.tolist()):
                w.writerow((repr(t), names(o), ty, sz))
        else:
            for r in stream:
                w.writerow((repr(float(r.arrival_time)), r.object_id, r.type_id, r.size_bytes))


def _parse_row(row, lineno):
    if len(row) != 4:
        raise TraceParseError(f"expected 4 fields, got {len(row)}", lineno)
    try:
        t = float(row[0])
        ty = int(row[2])
        sz = int(row[3])
    except ValueError as exc:
        raise TraceParseError(str(exc), lineno) from None
    if not math.isfinite(t) or t < 0:
        raise TraceValidationError(f"invalid arrival time {row[0]!r}", lineno)
    if ty < 1:
        raise TraceValidationError(f"type_id must be >= 1, got {ty}", lineno)
    if sz < 1:
        raise TraceValidationError(f"size_bytes must be positive, got {sz}", lineno)
    if not row[1]:
        raise TraceParseError("empty object_id", lineno)
    return Request(t, row[1], ty, sz)


def iter_trace(path) -> Iterator[Request]:
    """Stream requests from a trace file, validating order as it goes."""
    with open(path, newline="") as fh:
        header_seen = False
        last = -math.inf
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                if tuple(c.strip() for c in row) != TRACE_HEADER:
                    raise TraceParseError(f"bad header {row!r}", lineno)
                header_seen = True
                continue
            req = _parse_row(row, lineno)
            if req.arrival_time < last:
                raise TraceValidationError(
                    f"timestamp {req.arrival_time!r} precedes {last!r}", lineno)
            last = req.arrival_time
            yield req
        if not header_seen:
            raise TraceParseError("missing header", None)


def read_trace(path) -> RequestStream:
    return RequestStream.from_requests(iter_trace(path))


# ---------------------------------------------------------------------------
# Rarity audit


@dataclass(frozen=True)
class RarityWindow:
    start: int  # 1-based index of the first request in the window
    length: int
    fraction: float


def bursty_indicators(stream: RequestStream, R: float) -> np.ndarray:
    """1 where the request is rare and its object was requested < R seconds earlier."""
    n = len(stream)
    out = np.zeros(n, dtype=bool)
    if n == 0:
        return out
    order = np.argsort(stream.objects, kind="stable")
    objs = stream.objects[order]
    t = stream.times[order]
    same = np.zeros(n, dtype=bool)
    same[1:] = objs[1:] == objs[:-1]
    gap = np.full(n, np.inf)
    gap[1:] = t[1:] - t[:-1]
    hit = same & (gap < R) & stream.rare[objs]
    out[order] = hit
    return out


def audit_rarity(stream: RequestStream, R: float, window_exponent: float = 0.75,
                 start: int = 1) -> dict[int, list[RarityWindow]]:
    """Per-type bursty fractions over consecutive windows of ``ceil(m**e)`` requests.

    Window k begins at request ``m`` (1-based) and spans ``ceil(m**e)``
    requests; the next window begins right after it.  Incomplete trailing
    windows are dropped.
    """
    if not R > 0:
        raise ConfigError("R must be positive")
    beta = bursty_indicators(stream, R)
    n = len(stream)
    type_ids = sorted(set(stream.types.tolist()))
    result: dict[int, list[RarityWindow]] = {t: [] for t in type_ids}
    if n == 0:
        return result
    cums = {t: np.concatenate([[0], np.cumsum(beta & (stream.types == t))]) for t in type_ids}
    m = start
    while True:
        length = max(1, math.ceil(m ** window_exponent))
        if m - 1 + length > n:
            break
        for t in type_ids:
            c = cums[t]
            result[t].append(RarityWindow(m, length, float(c[m - 1 + length] - c[m - 1]) / length))
        m += length
    return result
