"""Future-reservation timelines for GPUs and node links."""

from __future__ import annotations

from bisect import bisect_left, insort
from dataclasses import dataclass
from typing import Hashable, Iterable

KINDS = ("gpu", "uplink", "downlink")


@dataclass(frozen=True, order=True)
class ResourceId:
    kind: str
    node: str
    index: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown resource kind {self.kind!r}")

    def __str__(self) -> str:
        return f"{self.kind}:{self.node}:{self.index}"


@dataclass(frozen=True)
class ReservationEntry:
    resource: ResourceId
    start_ms: float
    dur_ms: float
    batch: Hashable

    def __post_init__(self):
        if not self.dur_ms > 0:
            raise ValueError(f"reservation on {self.resource} needs dur_ms > 0, got {self.dur_ms}")

    @property
    def end_ms(self) -> float:
        return self.start_ms + self.dur_ms


class ReservationConflict(RuntimeError):
    """A reservation overlaps an existing one; the scheduler relied on stale state."""


class UnknownReservation(KeyError):
    pass


class _Line:
    """Sorted, non-overlapping intervals of one resource."""

    __slots__ = ("starts", "ends", "batches", "done")

    def __init__(self):
        self.starts: list[float] = []
        self.ends: list[float] = []
        self.batches: list[Hashable] = []
        self.done: list[bool] = []

    def conflict_end(self, s: float, e: float) -> float | None:
        """End of the latest interval overlapping [s, e), if any."""
        k = bisect_left(self.starts, e)
        if k and self.ends[k - 1] > s:
            return self.ends[k - 1]
        return None

    def insert(self, s: float, e: float, batch: Hashable) -> None:
        k = bisect_left(self.starts, s)
        self.starts.insert(k, s)
        self.ends.insert(k, e)
        self.batches.insert(k, batch)
        self.done.insert(k, False)

    def find(self, batch: Hashable) -> int:
        for i, b in enumerate(self.batches):
            if b == batch:
                return i
        return -1


class ResourceTimeline:
    """Per-resource interval sets with earliest-slot queries and feedback correction.

    Intervals are half-open ``[start, end)``. An interval stays on the timeline
    until its actual usage has been reported and it has ended before ``now``.
    """

    def __init__(self, keep_history: bool = False):
        self._lines: dict[ResourceId, _Line] = {}
        self.now_ms = 0.0
        self.flagged: set[Hashable] = set()
        self.history: list[ReservationEntry] | None = [] if keep_history else None
        self._dirty: set[ResourceId] = set()  # lines holding reported intervals

    def _line(self, res: ResourceId) -> _Line:
        line = self._lines.get(res)
        if line is None:
            line = self._lines[res] = _Line()
        return line

    def earliest_slot(self, resources: Iterable[ResourceId], t: float, dur: float) -> float:
        if not dur > 0:
            raise ValueError("earliest_slot needs dur > 0")
        lines = [self._lines[r] for r in resources if r in self._lines]
        s = t
        moved = True
        while moved:
            moved = False
            for line in lines:
                end = line.conflict_end(s, s + dur)
                if end is not None:
                    s = end
                    moved = True
        return s

    def gpu_free_at(self, res: ResourceId, t: float, dur: float) -> float:
        """Single-resource earliest slot; the hot path of a probe."""
        line = self._lines.get(res)
        if line is None:
            return t
        s = t
        while True:
            end = line.conflict_end(s, s + dur)
            if end is None:
                return s
            s = end

    def is_free(self, res: ResourceId, start: float, dur: float) -> bool:
        line = self._lines.get(res)
        return line is None or line.conflict_end(start, start + dur) is None

    def mark_reserved(self, entries: Iterable[ReservationEntry]) -> None:
        """Record all entries, or none of them if any would overlap."""
        entries = list(entries)
        pending: dict[ResourceId, list[tuple[float, float]]] = {}
        for e in entries:
            if not self.is_free(e.resource, e.start_ms, e.dur_ms):
                raise ReservationConflict(
                    f"{e.resource} busy during [{e.start_ms}, {e.end_ms}) for batch {e.batch!r}")
            for s, t in pending.get(e.resource, ()):
                if e.start_ms < t and s < e.end_ms:
                    raise ReservationConflict(f"entries overlap each other on {e.resource}")
            insort(pending.setdefault(e.resource, []), (e.start_ms, e.end_ms))
        for e in entries:
            self._line(e.resource).insert(e.start_ms, e.end_ms, e.batch)

    def reserved(self, res: ResourceId, batch: Hashable) -> tuple[float, float] | None:
        line = self._lines.get(res)
        if line is None:
            return None
        i = line.find(batch)
        return None if i < 0 else (line.starts[i], line.ends[i])

    def feedback_correct(self, res: ResourceId, batch: Hashable, actual_start: float,
                         actual_dur: float) -> set[Hashable]:
        """Replace a planned interval by the observed one.

        Later intervals on the same resource that the observed interval now
        overlaps are pushed back just enough, keeping order and durations;
        their batches are returned and added to :attr:`flagged`.
        """
        line = self._lines.get(res)
        i = -1 if line is None else line.find(batch)
        if i < 0:
            raise UnknownReservation(f"no reservation for batch {batch!r} on {res}")
        if not actual_dur > 0:
            raise ValueError("actual_dur must be positive")
        end = actual_start + actual_dur
        if i > 0 and line.ends[i - 1] > actual_start:
            raise ReservationConflict(
                f"observed start {actual_start} on {res} precedes the end of the previous interval")
        line.starts[i] = actual_start
        line.ends[i] = end
        line.done[i] = True
        self._dirty.add(res)
        if self.history is not None:
            self.history.append(ReservationEntry(res, actual_start, actual_dur, batch))
        shifted = set()
        prev_end = end
        for k in range(i + 1, len(line.starts)):
            overlap = prev_end - line.starts[k]
            if overlap <= 0:
                break
            line.starts[k] += overlap
            line.ends[k] += overlap
            shifted.add(line.batches[k])
            prev_end = line.ends[k]
        self.flagged |= shifted
        return shifted

    def advance(self, now_ms: float) -> None:
        """Move the clock and drop reported intervals that ended before ``now_ms``."""
        if now_ms < self.now_ms:
            raise ValueError("time cannot move backwards")
        self.now_ms = now_ms
        for res in list(self._dirty):
            line = self._lines[res]
            k = 0
            while k < len(line.starts) and line.ends[k] <= now_ms and line.done[k]:
                k += 1
            if k:
                del line.starts[:k], line.ends[:k], line.batches[:k], line.done[:k]
            if not any(line.done):
                self._dirty.discard(res)

    def first_open(self, res: ResourceId) -> Hashable | None:
        """Batch key of the earliest interval whose usage is not yet reported."""
        line = self._lines.get(res)
        if line is None:
            return None
        for b, d in zip(line.batches, line.done):
            if not d:
                return b
        return None

    def intervals(self, res: ResourceId) -> list[tuple[float, float, Hashable]]:
        line = self._lines.get(res)
        if line is None:
            return []
        return list(zip(line.starts, line.ends, line.batches))

    def resources(self) -> list[ResourceId]:
        return sorted(self._lines)

    def snapshot(self) -> dict:
        """Exact copy of the interval state, for purity checks."""
        return {r: (tuple(l.starts), tuple(l.ends), tuple(l.batches), tuple(l.done))
                for r, l in self._lines.items() if l.starts}

    def dump(self) -> dict:
        return {
            "now_ms": self.now_ms,
            "resources": {str(r): [[s, e, str(b)] for s, e, b in self.intervals(r)]
                          for r in self.resources() if self._lines[r].starts},
        }
