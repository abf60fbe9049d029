"""Event-driven TTL cache substrate with exact size-time integration.

Each object carries a timer tuple ``(deep, shallow, shadow)`` of absolute
expiry times, 0 meaning inactive.  Expiries are held in a min-heap with lazy
invalidation; :meth:`CacheState.advance_to` pops everything that expired
strictly before the new time, integrating byte occupancy piecewise between
expiry points.  A timer expiring exactly at an arrival still counts as
resident for that arrival.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import Hashable

from .errors import SimulationError

DEEP, SHALLOW, SHADOW = 0, 1, 2


class EventKind(enum.Enum):
    MISS = "miss"
    DEEP_HIT = "deep_hit"
    SHALLOW_HIT = "shallow_hit"
    VIRTUAL_HIT = "virtual_hit"

    @property
    def is_hit(self) -> bool:
        return self in (EventKind.DEEP_HIT, EventKind.SHALLOW_HIT)


@dataclass(frozen=True)
class Classification:
    kind: EventKind
    remaining: float = 0.0  # remaining deep/shallow TTL at the arrival


@dataclass(frozen=True)
class TimerTuple:
    deep: float = 0.0
    shallow: float = 0.0
    shadow: float = 0.0

    def is_legal(self) -> bool:
        d, s, m = self.deep, self.shallow, self.shadow
        if min(d, s, m) < 0:
            return False
        if d > 0:
            return s == 0 and m == 0
        if s > 0:
            return m > 0 and s <= m
        return True


@dataclass(frozen=True)
class Deep:
    ttl: float


@dataclass(frozen=True)
class ShallowPlusShadow:
    ttl_s: float
    ttl: float


@dataclass(frozen=True)
class ShadowOnly:
    ttl: float


Disposition = Deep | ShallowPlusShadow | ShadowOnly | None


class _Entry:
    __slots__ = ("timers", "size", "type_id", "gen")

    def __init__(self, size, type_id):
        self.timers = [0.0, 0.0, 0.0]
        self.size = size
        self.type_id = type_id
        self.gen = 0

    @property
    def resident(self) -> bool:
        return self.timers[DEEP] > 0 or self.timers[SHALLOW] > 0


class CacheState:
    """Per-object timers, byte occupancy and size-time integrals.

    ``size_time_integral`` is in byte-seconds; ``type_integral`` splits it by
    content type.  Only deep- and shallow-resident objects occupy bytes.
    """

    def __init__(self, start_time: float = 0.0):
        self._entries: dict[Hashable, _Entry] = {}
        self._heap: list = []
        self.current_bytes = 0
        self.size_time_integral = 0.0
        self.type_bytes: dict[int, int] = {}
        self.type_integral: dict[int, float] = {}
        self.last_event_time = float(start_time)
        self._t_int = float(start_time)  # time up to which integrals are current

    # -- bookkeeping --------------------------------------------------

    def _integrate_to(self, t: float):
        dt = t - self._t_int
        if dt > 0:
            self.size_time_integral += self.current_bytes * dt
            for ty, b in self.type_bytes.items():
                if b:
                    self.type_integral[ty] = self.type_integral.get(ty, 0.0) + b * dt
            self._t_int = t

    def _add_bytes(self, e: _Entry, sign: int):
        self.current_bytes += sign * e.size
        self.type_bytes[e.type_id] = self.type_bytes.get(e.type_id, 0) + sign * e.size
        if self.current_bytes < 0:
            raise SimulationError("negative byte occupancy")

    def _clear_level(self, obj, e: _Entry, level: int):
        was_resident = e.resident
        e.timers[level] = 0.0
        if level == SHADOW and e.timers[SHALLOW] > 0:
            raise SimulationError(f"shadow of {obj!r} expired before its shallow copy")
        if was_resident and not e.resident:
            self._add_bytes(e, -1)
        if not any(e.timers):
            del self._entries[obj]

    # -- public operations -------------------------------------------

    def advance_to(self, time: float) -> list:
        """Expire every timer strictly before ``time``.

        Returns a list of ``(expiry, object, level)`` in expiry order.
        """
        if time < self.last_event_time:
            raise SimulationError(
                f"time regression: {time!r} < {self.last_event_time!r}")
        evicted = []
        heap = self._heap
        while heap and heap[0][0] < time:
            exp, gen, _, obj, level = heapq.heappop(heap)
            e = self._entries.get(obj)
            if e is None or e.gen != gen or e.timers[level] != exp:
                continue  # stale
            self._integrate_to(exp)
            self._clear_level(obj, e, level)
            evicted.append((exp, obj, level))
        self._integrate_to(time)
        self.last_event_time = time
        return evicted

    def timers(self, obj) -> TimerTuple:
        e = self._entries.get(obj)
        if e is None:
            return TimerTuple()
        return TimerTuple(*e.timers)

    def size_of(self, obj) -> int | None:
        e = self._entries.get(obj)
        return None if e is None else e.size

    def __contains__(self, obj) -> bool:
        return obj in self._entries

    def __len__(self):
        return len(self._entries)

    def items(self):
        for obj, e in self._entries.items():
            yield obj, TimerTuple(*e.timers), e.size

    def classify(self, obj) -> Classification:
        """Classify an arrival at ``last_event_time`` (no mutation)."""
        t = self.last_event_time
        e = self._entries.get(obj)
        if e is None:
            return Classification(EventKind.MISS)
        d, s, m = e.timers
        if d > 0 and d >= t:
            return Classification(EventKind.DEEP_HIT, d - t)
        if s > 0 and s >= t:
            return Classification(EventKind.SHALLOW_HIT, s - t)
        if m > 0 and m >= t:
            return Classification(EventKind.VIRTUAL_HIT)
        return Classification(EventKind.MISS)

    def install(self, obj, size: int, type_id: int, disposition: Disposition):
        """Replace the object's timers according to ``disposition`` at the current time.

        Zero TTLs leave the corresponding residency inactive.
        """
        t = self.last_event_time
        e = self._entries.get(obj)
        if e is not None:
            if e.resident:
                self._add_bytes(e, -1)
            e.timers = [0.0, 0.0, 0.0]
            e.size = size
            e.type_id = type_id
        else:
            e = _Entry(size, type_id)

        new = [0.0, 0.0, 0.0]
        if isinstance(disposition, Deep):
            if disposition.ttl < 0:
                raise SimulationError("negative TTL")
            if disposition.ttl > 0:
                new[DEEP] = t + disposition.ttl
        elif isinstance(disposition, ShallowPlusShadow):
            ts, tm = disposition.ttl_s, disposition.ttl
            if ts < 0 or tm < 0 or ts > tm:
                raise SimulationError(f"illegal shallow/shadow TTLs ({ts}, {tm})")
            if tm > 0:
                new[SHADOW] = t + tm
                if ts > 0:
                    new[SHALLOW] = t + ts
        elif isinstance(disposition, ShadowOnly):
            if disposition.ttl < 0:
                raise SimulationError("negative TTL")
            if disposition.ttl > 0:
                new[SHADOW] = t + disposition.ttl
        elif disposition is not None:
            raise TypeError(f"unknown disposition {disposition!r}")

        if not any(new):
            self._entries.pop(obj, None)
            return
        e.gen += 1
        e.timers = new
        self._entries[obj] = e
        if e.resident:
            self._add_bytes(e, +1)
        for level in (DEEP, SHALLOW, SHADOW):
            if new[level] > 0:
                heapq.heappush(self._heap, (new[level], e.gen, id(e), obj, level))

    def check_invariants(self):
        """Full consistency scan; raises :class:`SimulationError` on violation."""
        total = 0
        per_type: dict[int, int] = {}
        for obj, e in self._entries.items():
            if not TimerTuple(*e.timers).is_legal():
                raise SimulationError(f"illegal timer tuple {e.timers} for {obj!r}")
            if e.resident:
                total += e.size
                per_type[e.type_id] = per_type.get(e.type_id, 0) + e.size
        if total != self.current_bytes:
            raise SimulationError(f"byte count {self.current_bytes} != {total}")
        for ty, b in self.type_bytes.items():
            if b != per_type.get(ty, 0):
                raise SimulationError(f"type {ty} byte count mismatch")
