"""Emulated byte-addressable persistent memory.

The device keeps two images. ``volatile_image`` is what loads observe;
``persistent_image`` is what survives a crash when only flushed (or
non-temporal) stores that were followed by a fence are considered durable.
Stores that have not yet been made durable are kept as pending records in
program order, from which the per-cache-line view (``dirty_lines``) and
adversarial crash images are derived.

Persistence model, per 64-byte line:

* ``store`` leaves its granules pending and unflagged.
* ``flush`` flags every pending granule in the covered lines.
* ``store_nt`` flags its own granules, and since a non-temporal store to a
  cached line evicts it, it also flags earlier pending granules of the same
  lines.
* ``fence`` moves every flagged granule into the persistent image, in
  program order.

Within a line the pending sequence is therefore always
``[flagged...][unflagged...]``, which keeps program order per granule.
"""

from __future__ import annotations

import threading
from dataclasses import InitVar, dataclass, field, fields
from enum import Enum
from typing import IO, Iterable, Mapping

from .errors import DeviceBoundsError

CACHE_LINE = 64
GRANULE = 8
PAGE = 4096


class EventKind(str, Enum):
    STORE = "S"
    STORE_NT = "N"
    FLUSH = "F"
    FENCE = "M"


@dataclass(frozen=True)
class Granule:
    addr: int
    data: bytes
    flushed: bool = False
    non_temporal: bool = False

    @property
    def line(self) -> int:
        return self.addr - self.addr % CACHE_LINE


def split_granules(addr: int, data: bytes) -> list[tuple[int, bytes]]:
    """Split ``data`` stored at ``addr`` at every 8-byte-aligned boundary."""
    out = []
    pos = 0
    n = len(data)
    while pos < n:
        a = addr + pos
        step = min(GRANULE - a % GRANULE, n - pos)
        out.append((a, bytes(data[pos : pos + step])))
        pos += step
    return out


@dataclass(frozen=True)
class TraceEvent:
    kind: EventKind
    seq: int
    addr: int | None = None
    data: bytes = b""

    @property
    def len(self) -> int:
        return len(self.data)

    def granules(self) -> list[tuple[int, bytes]]:
        if self.kind not in (EventKind.STORE, EventKind.STORE_NT):
            return []
        return split_granules(self.addr, self.data)

    def to_line(self) -> str:
        if self.kind is EventKind.FENCE:
            return "M"
        if self.kind is EventKind.FLUSH:
            return f"F {self.addr}"
        return f"{self.kind.value} {self.addr} {len(self.data)} {self.data.hex()}"

    @classmethod
    def from_line(cls, line: str, seq: int) -> "TraceEvent":
        parts = line.split()
        kind = EventKind(parts[0])
        if kind is EventKind.FENCE:
            return cls(kind, seq)
        if kind is EventKind.FLUSH:
            return cls(kind, seq, int(parts[1]))
        addr, length = int(parts[1]), int(parts[2])
        data = bytes.fromhex(parts[3]) if length else b""
        if len(data) != length:
            raise ValueError(f"trace line length mismatch: {line!r}")
        return cls(kind, seq, addr, data)


def dump_trace(events: Iterable[TraceEvent], fp: IO[str]) -> None:
    for ev in events:
        fp.write(ev.to_line())
        fp.write("\n")


def load_trace(fp: IO[str]) -> list[TraceEvent]:
    events = []
    for line in fp:
        line = line.strip()
        if line:
            events.append(TraceEvent.from_line(line, len(events)))
    return events


@dataclass
class IoCounters:
    bytes_stored: int = 0
    bytes_stored_nt: int = 0
    flush_count: int = 0
    fence_count: int = 0
    bytes_persisted: int = 0
    journal_commit_count: int = 0
    log_entries_written: int = 0
    relink_data_bytes_copied: int = 0
    # not in the core device model; bumped by kfs and usplit
    log_bytes_stored: int = 0
    log_fences: int = 0
    kfs_calls: int = 0

    def copy(self) -> "IoCounters":
        return IoCounters(**self.as_dict())

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __sub__(self, other: "IoCounters") -> "IoCounters":
        return IoCounters(**{k: v - getattr(other, k) for k, v in self.as_dict().items()})


class _Pending:
    __slots__ = ("addr", "data", "nt", "flushed")

    def __init__(self, addr: int, data: bytes, nt: bool, flushed: bool = False):
        self.addr = addr
        self.data = data
        self.nt = nt
        self.flushed = flushed

    @property
    def ready(self) -> bool:
        return self.nt or self.flushed

    @property
    def end(self) -> int:
        return self.addr + len(self.data)


def _line_span(addr: int, end: int) -> tuple[int, int]:
    return addr - addr % CACHE_LINE, -(-end // CACHE_LINE) * CACHE_LINE


@dataclass
class PmemDevice:
    capacity: int
    tracing: bool = True
    volatile_image: bytearray = field(init=False, repr=False)
    persistent_image: bytearray = field(init=False, repr=False)
    initial: InitVar[bytes | None] = None

    def __post_init__(self, initial: bytes | None) -> None:
        if self.capacity <= 0 or self.capacity % PAGE:
            raise ValueError(f"capacity must be a positive multiple of {PAGE}")
        if initial is None:
            self.volatile_image = bytearray(self.capacity)
            self.persistent_image = bytearray(self.capacity)
        else:
            self.volatile_image = bytearray(initial)
            self.persistent_image = bytearray(initial)
        self._pending: list[_Pending] = []
        self._unready = 0
        self._trace: list[TraceEvent] = []
        self._seq = 0
        self._counters = IoCounters()
        self.counter_checkpoints: list[tuple[str, IoCounters]] = []
        # callers serialize mutations through this lock; the device itself never takes it
        self.lock = threading.RLock()

    @classmethod
    def from_image(cls, image: bytes, tracing: bool = False) -> "PmemDevice":
        return cls(len(image), tracing, image)

    # -- helpers ---------------------------------------------------------

    def _check(self, addr: int, length: int) -> None:
        if addr < 0 or length < 0 or addr + length > self.capacity:
            raise DeviceBoundsError(
                f"access [{addr}, {addr + length}) outside device of {self.capacity} bytes"
            )

    def _emit(self, kind: EventKind, addr: int | None = None, data: bytes = b"") -> None:
        if self.tracing:
            self._trace.append(TraceEvent(kind, self._seq, addr, data))
        self._seq += 1

    def _flag_lines(self, lo: int, hi: int, stop: int | None = None) -> None:
        """Flag pending granules in lines [lo, hi); only the first ``stop`` records."""
        pending = self._pending
        limit = len(pending) if stop is None else stop
        i = 0
        while i < limit:
            rec = pending[i]
            if rec.ready or rec.end <= lo or rec.addr >= hi:
                i += 1
                continue
            # split off the parts of the record outside the flagged lines
            pieces = []
            if rec.addr < lo:
                pieces.append(_Pending(rec.addr, rec.data[: lo - rec.addr], False))
            a, b = max(rec.addr, lo), min(rec.end, hi)
            pieces.append(_Pending(a, rec.data[a - rec.addr : b - rec.addr], False, True))
            if rec.end > hi:
                pieces.append(_Pending(hi, rec.data[hi - rec.addr :], False))
            pending[i : i + 1] = pieces
            i += len(pieces)
            limit += len(pieces) - 1
        self._unready = sum(1 for rec in pending if not rec.ready)

    # -- operations --------------------------------------------------------

    def store(self, addr: int, data: bytes) -> None:
        data = bytes(data)
        n = len(data)
        self._check(addr, n)
        if not n:
            return
        self.volatile_image[addr : addr + n] = data
        self._pending.append(_Pending(addr, data, False))
        self._unready += 1
        self._counters.bytes_stored += n
        self._emit(EventKind.STORE, addr, data)

    def store_nt(self, addr: int, data: bytes) -> None:
        data = bytes(data)
        n = len(data)
        self._check(addr, n)
        if not n:
            return
        self.volatile_image[addr : addr + n] = data
        if self._unready:
            lo, hi = _line_span(addr, addr + n)
            self._flag_lines(lo, hi)
        self._pending.append(_Pending(addr, data, True))
        self._counters.bytes_stored_nt += n
        self._emit(EventKind.STORE_NT, addr, data)

    def flush(self, addr: int, length: int) -> None:
        self._check(addr, length)
        if length <= 0:
            return
        lo, hi = _line_span(addr, addr + length)
        if self._unready:
            self._flag_lines(lo, hi)
        nlines = (hi - lo) // CACHE_LINE
        self._counters.flush_count += nlines
        if self.tracing:
            for line in range(lo, hi, CACHE_LINE):
                self._emit(EventKind.FLUSH, line)
        else:
            self._seq += nlines

    def fence(self) -> None:
        keep = []
        persisted = 0
        image = self.persistent_image
        for rec in self._pending:
            if rec.ready:
                image[rec.addr : rec.end] = rec.data
                persisted += len(rec.data)
            else:
                keep.append(rec)
        self._pending = keep
        self._unready = len(keep)
        self._counters.bytes_persisted += persisted
        self._counters.fence_count += 1
        self._emit(EventKind.FENCE)

    def load(self, addr: int, length: int) -> bytes:
        self._check(addr, length)
        return bytes(self.volatile_image[addr : addr + length])

    def view(self, addr: int, length: int) -> memoryview:
        """Zero-copy read-only view of the volatile image."""
        self._check(addr, length)
        return memoryview(self.volatile_image)[addr : addr + length].toreadonly()

    def snapshot(self, kind: str = "persistent") -> bytes:
        if kind == "persistent":
            return bytes(self.persistent_image)
        if kind == "volatile":
            return bytes(self.volatile_image)
        raise ValueError(f"unknown snapshot kind {kind!r}")

    def apply(self, event: TraceEvent) -> None:
        """Re-execute one trace event against this device."""
        if event.kind is EventKind.STORE:
            self.store(event.addr, event.data)
        elif event.kind is EventKind.STORE_NT:
            self.store_nt(event.addr, event.data)
        elif event.kind is EventKind.FLUSH:
            self.flush(event.addr, CACHE_LINE)
        else:
            self.fence()

    # -- crash model -------------------------------------------------------

    def dirty_lines(self) -> dict[int, list[Granule]]:
        lines: dict[int, list[Granule]] = {}
        for rec in self._pending:
            for a, chunk in split_granules(rec.addr, rec.data):
                g = Granule(a, chunk, rec.flushed, rec.nt)
                lines.setdefault(g.line, []).append(g)
        return lines

    def crash_image(self, choices: Mapping[int, int] | None = None) -> bytes:
        """Image after a crash now.

        With no ``choices`` this is the strict-epoch image. ``choices`` maps
        a line address to how many of its pending granules (a prefix, in
        program order) also reached the media.
        """
        image = bytearray(self.persistent_image)
        if choices:
            lines = self.dirty_lines()
            for line, count in choices.items():
                for g in lines.get(line, [])[:count]:
                    image[g.addr : g.addr + len(g.data)] = g.data
        return bytes(image)

    def has_pending(self) -> bool:
        return bool(self._pending)

    # -- bookkeeping -------------------------------------------------------

    @property
    def counters(self) -> IoCounters:
        return self._counters

    def counters_snapshot(self) -> IoCounters:
        return self._counters.copy()

    def reset_counters(self, checkpoint: str) -> IoCounters:
        """Zero the counters at a named boundary; returns the values before reset."""
        before = self._counters.copy()
        self.counter_checkpoints.append((checkpoint, before))
        self._counters = IoCounters()
        return before

    def trace(self) -> list[TraceEvent]:
        return list(self._trace)

    @property
    def trace_len(self) -> int:
        return len(self._trace)

    def reset_trace(self) -> None:
        self._trace = []
        self._seq = 0

    def save_image(self, path, kind: str = "persistent") -> None:
        with open(path, "wb") as fp:
            fp.write(self.snapshot(kind))
