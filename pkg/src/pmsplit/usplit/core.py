"""The user-space half: POSIX-like file API served from mapped device memory.

Data operations go straight to the device through cached mappings; the
kernel file system is only called for metadata (open, unlink, rename) and to
relink staged data into target files at fsync time.
"""

from __future__ import annotations

import functools
import json
import os
import threading
import time
from bisect import bisect_right
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

from .. import faults
from ..errors import BadFileDescriptor, InvalidArgument, NoSpace, NotFound
from ..kfs import BLOCK_SIZE, Kfs, RelinkOp, Stat, mount
from ..pmem import PmemDevice
from .log import (
    ENTRY_SIZE,
    EntryFlag,
    LogEntry,
    OperationLog,
    Opcode,
    header_entry,
    replay_set,
    scan,
)
from .staging import StagingFile, StagingPool

MiB = 1 << 20
LOG_PREFIX = ".pmsplit.log."
INTERNAL_PREFIX = ".pmsplit."
FIRST_FD = 3
REPLAY_BATCH = 128


class Mode(str, Enum):
    POSIX = "posix"
    SYNC = "sync"
    STRICT = "strict"


@dataclass
class Config:
    map_size: int = 2 * MiB
    staging_count: int = 10
    staging_size: int = 4 * MiB
    log_size: int = 8 * MiB
    use_relink: bool = True

    def __post_init__(self) -> None:
        for name in ("map_size", "staging_size", "log_size"):
            value = getattr(self, name)
            if value <= 0 or value % BLOCK_SIZE:
                raise ValueError(f"{name} must be a positive multiple of {BLOCK_SIZE}")
        if self.staging_count < 1:
            raise ValueError("staging_count must be at least 1")


@dataclass
class StagedRange:
    target_off: int
    length: int
    staging: StagingFile
    staging_off: int
    kind: str = "append"

    @property
    def end(self) -> int:
        return self.target_off + self.length

    def slice(self, lo: int, hi: int) -> "StagedRange":
        return StagedRange(lo, hi - lo, self.staging, self.staging_off + (lo - self.target_off), self.kind)


class StagedSet:
    """Non-overlapping staged ranges of one file, sorted by target offset; newest data wins."""

    def __init__(self) -> None:
        self.items: list[StagedRange] = []

    def __bool__(self) -> bool:
        return bool(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def insert(self, new: StagedRange) -> None:
        items = self.items
        if not items or items[-1].end <= new.target_off:
            # appends land past everything staged; merge with a contiguous tail
            p = items[-1] if items else None
            if (
                p is not None
                and p.end == new.target_off
                and p.staging is new.staging
                and p.staging_off + p.length == new.staging_off
                and p.kind == new.kind
            ):
                items[-1] = StagedRange(p.target_off, p.length + new.length, p.staging, p.staging_off, p.kind)
            else:
                items.append(new)
            return
        i = bisect_right(items, new.target_off, key=lambda r: r.target_off)
        if i > 0 and items[i - 1].end > new.target_off:
            i -= 1
        j = i
        left: list[StagedRange] = []
        right: list[StagedRange] = []
        while j < len(items) and items[j].target_off < new.end:
            r = items[j]
            if r.target_off < new.target_off:
                left.append(r.slice(r.target_off, new.target_off))
            if r.end > new.end:
                right.append(r.slice(new.end, r.end))
            j += 1
        items[i:j] = left + [new] + right

    def overlapping(self, lo: int, hi: int) -> list[StagedRange]:
        items = self.items
        i = bisect_right(items, lo, key=lambda r: r.target_off)
        if i > 0 and items[i - 1].end > lo:
            i -= 1
        out = []
        while i < len(items) and items[i].target_off < hi:
            out.append(items[i])
            i += 1
        return out

    def coalesced(self) -> list[StagedRange]:
        out: list[StagedRange] = []
        for r in self.items:
            p = out[-1] if out else None
            if (
                p is not None
                and p.end == r.target_off
                and p.staging is r.staging
                and p.staging_off + p.length == r.staging_off
            ):
                out[-1] = StagedRange(p.target_off, p.length + r.length, p.staging, p.staging_off, p.kind)
            else:
                out.append(r)
        return out

    def clear(self) -> None:
        self.items.clear()


@dataclass
class FileState:
    """Per-inode state of one instance: cached attributes and unsynced staged data."""

    ino: int
    attr_size: int
    attr_gen: int
    staged: StagedSet = field(default_factory=StagedSet)
    staged_end: int = 0
    pins: Counter = field(default_factory=Counter)  # StagingFile -> ranges handed out
    opens: int = 0
    stale: bool = False

    @property
    def local_size(self) -> int:
        return max(self.attr_size, self.staged_end)


@dataclass
class OpenFile:
    """An open file description; dup'ed descriptors share it and its offset."""

    state: FileState
    offset: int = 0
    refs: int = 1


@dataclass
class MappedRegion:
    ino: int
    file_off: int
    length: int
    blocks: list[int | None]
    generation: int

    @property
    def segments(self) -> list[tuple[int, int]]:
        out: list[tuple[int, int]] = []
        for b in self.blocks:
            if b is None:
                continue
            addr = b * BLOCK_SIZE
            if out and out[-1][0] + out[-1][1] == addr:
                out[-1] = (out[-1][0], out[-1][1] + BLOCK_SIZE)
            else:
                out.append((addr, BLOCK_SIZE))
        return out


@dataclass
class RecoveryStats:
    logs_scanned: int = 0
    entries_valid: int = 0
    entries_replayed: int = 0
    transactions: int = 0
    seconds: float = 0.0


def _locked(fn):
    @functools.wraps(fn)
    def wrapper(self, *args, **kwargs):
        with self._lock, self.fs.lock:
            return fn(self, *args, **kwargs)

    return wrapper


def _fs_of(target: Kfs | PmemDevice) -> Kfs:
    return target if isinstance(target, Kfs) else mount(target)


def _log_name(instance_id: int) -> str:
    return f"{LOG_PREFIX}{instance_id}"


def replay_log(fs: Kfs, log_ino: int, stats: RecoveryStats | None = None) -> RecoveryStats:
    """Apply the unapplied, unsuperseded records of one log and clean it.

    Each batch of relinks commits together with a header update that marks
    its records applied, so a crash mid-replay resumes where it stopped.
    """
    stats = stats or RecoveryStats()
    size = fs.stat(log_ino).size
    raw = fs.read_direct(log_ino, 0, size)
    sc = scan(raw)
    stats.logs_scanned += 1
    stats.entries_valid += len(sc.entries)
    log = OperationLog(log_ino, size, fs.block_map(log_ino, 0, size // BLOCK_SIZE), sc.epoch_base, sc.applied)
    header_addr = log.slot_addr(0)
    if sc.last_seq > sc.applied:
        todo = replay_set(sc.entries)
        batches = [todo[i : i + REPLAY_BATCH] for i in range(0, len(todo), REPLAY_BATCH)] or [[]]
        for i, batch in enumerate(batches):
            if i == len(batches) - 1:
                header = header_entry(sc.last_seq, sc.last_seq)
            else:
                header = header_entry(sc.epoch_base, batch[-1].seq)
            ops = [RelinkOp(e.staging_ino, e.staging_off, e.target_ino, e.target_off, e.size) for e in batch]
            fs.relink_batch(ops, replay=True, raw_records=[(header_addr, header.encode())])
            stats.entries_replayed += len(batch)
            stats.transactions += 1
    if sc.used_bytes > ENTRY_SIZE:
        for addr, length in log.zero_ranges(sc.used_bytes // ENTRY_SIZE):
            fs.device.store_nt(addr, bytes(length))
        fs.device.fence()
    return stats


def recover_fs(target: Kfs | PmemDevice) -> tuple[Kfs, RecoveryStats]:
    """Mount and replay every operation log on the device, without resuming an instance."""
    t0 = time.perf_counter()
    fs = _fs_of(target)
    stats = RecoveryStats()
    with fs.lock:
        for name in fs.listdir():
            if name.startswith(LOG_PREFIX):
                replay_log(fs, fs.lookup(name), stats)
    stats.seconds = time.perf_counter() - t0
    return fs, stats


class Usplit:
    """One library instance (one process) on a shared kernel file system."""

    def __init__(self, fs: Kfs, mode: Mode | str, config: Config | None, instance_id: int):
        self.fs = fs
        self.device = fs.device
        self.mode = Mode(mode)
        self.config = config or Config()
        self.instance_id = instance_id
        self._lock = threading.RLock()
        self._fds: dict[int, OpenFile] = {}
        self._states: dict[int, FileState] = {}
        self._regions: dict[tuple[int, int], MappedRegion] = {}
        self.staging = StagingPool(fs, instance_id, self.config.staging_count, self.config.staging_size)
        self.log: OperationLog | None = None
        self.recovery: RecoveryStats | None = None

    # -- construction ---------------------------------------------------------

    @staticmethod
    def _free_instance_id(fs: Kfs) -> int:
        used = set()
        for name in fs.listdir():
            if name.startswith(INTERNAL_PREFIX):
                parts = name[len(INTERNAL_PREFIX) :].split(".")
                if len(parts) >= 2 and parts[1].isdigit():
                    used.add(int(parts[1]))
        iid = 0
        while iid in used:
            iid += 1
        return iid

    @classmethod
    def init(
        cls,
        target: Kfs | PmemDevice,
        mode: Mode | str = Mode.POSIX,
        config: Config | None = None,
        instance_id: int | None = None,
    ) -> "Usplit":
        """Start an instance: pre-allocate staging files and, in strict mode, the log."""
        fs = _fs_of(target)
        with fs.lock:
            iid = cls._free_instance_id(fs) if instance_id is None else instance_id
            inst = cls(fs, mode, config, iid)
            inst.staging.fill()
            if inst.mode is Mode.STRICT:
                inst._open_log()
        return inst

    @classmethod
    def recover(
        cls,
        target: Kfs | PmemDevice,
        mode: Mode | str = Mode.POSIX,
        config: Config | None = None,
        instance_id: int = 0,
    ) -> "Usplit":
        """Mount, replay every operation log on the device, and resume as ``instance_id``."""
        t0 = time.perf_counter()
        fs, stats = recover_fs(target)
        with fs.lock:
            inst = cls(fs, mode, config, instance_id)
            inst.staging.adopt()
            inst.staging.fill()
            if inst.mode is Mode.STRICT:
                inst._open_log()
        stats.seconds = time.perf_counter() - t0
        inst.recovery = stats
        return inst

    def _open_log(self) -> None:
        fs, name, size = self.fs, _log_name(self.instance_id), self.config.log_size
        try:
            ino = fs.lookup(name)
        except NotFound:
            ino = fs.create(name)
            fs.allocate(ino, 0, size, zero=True)
        size = fs.stat(ino).size
        head = LogEntry.decode(fs.read_direct(ino, 0, ENTRY_SIZE))
        base = head.target_off if head is not None and head.opcode is Opcode.HEADER else 0
        applied = head.seq if head is not None and head.opcode is Opcode.HEADER else 0
        self.log = OperationLog(ino, size, fs.block_map(ino, 0, size // BLOCK_SIZE), base, applied)

    @property
    def counters(self):
        return self.device.counters

    # -- helpers ----------------------------------------------------------------

    def _fd(self, fd: int) -> OpenFile:
        of = self._fds.get(fd)
        if of is None or of.state.stale:
            raise BadFileDescriptor(f"bad file descriptor {fd}")
        return of

    def _refresh(self, st: FileState) -> None:
        gen = self.fs.generation_of(st.ino)
        if gen is None:
            st.stale = True
            raise BadFileDescriptor(f"inode {st.ino} no longer exists")
        if gen != st.attr_gen:
            s = self.fs.stat(st.ino)
            st.attr_size, st.attr_gen = s.size, s.generation

    def _region(self, st: FileState, idx: int) -> MappedRegion:
        r = self._regions.get((st.ino, idx))
        if r is None or r.generation != st.attr_gen:
            per = self.config.map_size // BLOCK_SIZE
            first = idx * per
            count = min(per, -(-st.attr_size // BLOCK_SIZE) - first)
            blocks = self.fs.block_map(st.ino, first, count) if count > 0 else []
            r = MappedRegion(st.ino, idx * self.config.map_size, self.config.map_size, blocks, st.attr_gen)
            self._regions[(st.ino, idx)] = r
        return r

    def _target_pieces(self, st: FileState, off: int, end: int):
        """(device addr or None, file offset, length) for each block piece of a target range."""
        ms = self.config.map_size
        pos = off
        region = None
        while pos < end:
            idx = pos // ms
            if region is None or region.file_off != idx * ms:
                region = self._region(st, idx)
            fb = (pos - region.file_off) // BLOCK_SIZE
            run_end = min((pos // BLOCK_SIZE + 1) * BLOCK_SIZE, end)
            block = region.blocks[fb] if fb < len(region.blocks) else None
            addr = None if block is None else block * BLOCK_SIZE + pos % BLOCK_SIZE
            yield addr, pos, run_end - pos
            pos = run_end

    def _forget(self, ino: int | None) -> Counter:
        """Drop cached state for a file that is gone; returns its staging pins."""
        if ino is None:
            return Counter()
        for key in [k for k in self._regions if k[0] == ino]:
            del self._regions[key]
        st = self._states.pop(ino, None)
        if st is None:
            return Counter()
        st.stale = True
        st.staged.clear()
        st.staged_end = 0
        pins, st.pins = st.pins, Counter()
        return pins

    @staticmethod
    def _unpin(pins: Counter) -> None:
        for f, n in pins.items():
            f.pins -= n

    # -- logging ------------------------------------------------------------------

    @_locked
    def log_append(self, entries: LogEntry | list[LogEntry]) -> int:
        """Write one operation's records with a single fence; returns the first seq."""
        if self.log is None:
            raise InvalidArgument("operation log exists only in strict mode")
        if isinstance(entries, LogEntry):
            entries = [entries]
        log, dev = self.log, self.device
        n = len(entries)
        first = log.reserve(n)
        if first is None:
            self._checkpoint()
            first = log.reserve(n)
            if first is None:
                raise NoSpace("operation too large for the log")
        for i, e in enumerate(entries):
            e = replace(e, seq=log.seq_of(first + i))
            dev.store_nt(log.slot_addr(first + i), e.encode())
        c = dev.counters
        if not faults.active(faults.SKIP_LOG_FENCE):
            dev.fence()
            c.log_fences += 1
        c.log_bytes_stored += ENTRY_SIZE * n
        c.log_entries_written += n
        return log.seq_of(first)

    def _log_meta(self, *entries: LogEntry) -> None:
        if self.mode is Mode.STRICT:
            last = len(entries) - 1
            self.log_append([replace(e, flags=EntryFlag.CONT if i < last else EntryFlag.NONE) for i, e in enumerate(entries)])

    # -- relinking ------------------------------------------------------------------

    def _sync_files(self, states: list[FileState], header: LogEntry | None = None) -> None:
        """Relink all staged data of ``states`` in one kernel transaction."""
        states = [s for s in states if s.staged]
        if not states and header is None:
            return
        ops = [
            RelinkOp(r.staging.ino, r.staging_off, s.ino, r.target_off, r.length)
            for s in states
            for r in s.staged.coalesced()
        ]
        raw: list[tuple[int, bytes]] = []
        first = None
        log = self.log
        if self.mode is Mode.STRICT:
            if header is not None:
                raw.append((log.slot_addr(0), header.encode()))
            else:
                first = log.reserve(len(states))
                if first is None:
                    self._checkpoint()
                    return
                for i, s in enumerate(states):
                    marker = LogEntry(Opcode.FSYNC_DONE, s.ino, seq=log.seq_of(first + i))
                    raw.append((log.slot_addr(first + i), marker.encode()))
        try:
            stats = self.fs.relink_batch(ops, copy_only=not self.config.use_relink, raw_records=raw)
        except BaseException:
            if first is not None:
                log.unreserve(first, len(states))
            raise
        if first is not None:
            c = self.device.counters
            c.log_bytes_stored += ENTRY_SIZE * len(states)
            c.log_entries_written += len(states)
        for s in states:
            attrs = stats.attrs.get(s.ino)
            if attrs is not None:
                s.attr_size, s.attr_gen = attrs.size, attrs.generation
            s.staged.clear()
            s.staged_end = 0
            self._unpin(s.pins)
            s.pins = Counter()

    def _checkpoint(self) -> None:
        log = self.log
        if log is None:
            self._sync_files(list(self._states.values()))
            return
        new_base = log.seq_of(log.tail - 1)
        self._sync_files(list(self._states.values()), header=header_entry(new_base, new_base))
        used = log.tail
        if used > 1:
            for addr, length in log.zero_ranges(used):
                self.device.store_nt(addr, bytes(length))
            self.device.fence()
        log.epoch_base = log.applied = new_base
        log.compare_and_swap_tail(used, 1)

    @_locked
    def checkpoint(self) -> None:
        """Relink everything staged, then empty the log."""
        self._checkpoint()

    # -- data path ---------------------------------------------------------------

    def _store_target(self, st: FileState, off: int, data: bytes) -> None:
        dev = self.device
        for addr, pos, n in self._target_pieces(st, off, off + len(data)):
            chunk = data[pos - off : pos - off + n]
            if addr is None:
                self.fs.write_direct(st.ino, pos, chunk)
            else:
                dev.store_nt(addr, chunk)

    def _store_staging(self, f: StagingFile, so: int, data: bytes) -> None:
        if so % BLOCK_SIZE + len(data) <= BLOCK_SIZE:
            self.device.store_nt(f.addr(so), data)
            return
        pos = 0
        for addr, n in f.runs(so, len(data)):
            self.device.store_nt(addr, data[pos : pos + n])
            pos += n

    def _stage(self, st: FileState, off: int, data: bytes, kind: str) -> list[StagedRange]:
        pieces = []
        pos = 0
        while pos < len(data):
            f, so, n = self.staging.reserve(off + pos, len(data) - pos)
            f.pins += 1
            st.pins[f] += 1
            self._store_staging(f, so, data[pos : pos + n])
            pieces.append(StagedRange(off + pos, n, f, so, kind))
            pos += n
        return pieces

    def _commit_staged(self, st: FileState, pieces: list[StagedRange], end: int) -> None:
        for r in pieces:
            st.staged.insert(r)
        if end > st.local_size:
            st.staged_end = end

    def _write(self, st: FileState, off: int, data: bytes) -> int:
        n = len(data)
        if n == 0:
            return 0
        if off < 0:
            raise InvalidArgument("negative offset")
        size = st.local_size
        if off > size:
            data = bytes(off - size) + data
            off = size
        end = off + len(data)
        dev = self.device

        if self.mode is Mode.STRICT:
            kind = "append" if end > size else "overwrite"
            pieces = self._stage(st, off, data, kind)
            dev.fence()
            op = Opcode.APPEND if kind == "append" else Opcode.OVERWRITE
            last = len(pieces) - 1
            self.log_append(
                [
                    LogEntry(
                        op,
                        st.ino,
                        r.target_off,
                        r.staging.ino,
                        r.staging_off,
                        r.length,
                        flags=EntryFlag.CONT if i < last else EntryFlag.NONE,
                    )
                    for i, r in enumerate(pieces)
                ]
            )
            self._commit_staged(st, pieces, end)
            return n

        fence = False
        in_place_end = min(end, st.attr_size)
        if off < in_place_end:
            self._store_target(st, off, data[: in_place_end - off])
            fence = True
        lo, hi = max(off, st.attr_size), min(end, size)
        if lo < hi:
            for r in st.staged.overlapping(lo, hi):
                a, b = max(lo, r.target_off), min(hi, r.end)
                self._store_staging(r.staging, r.staging_off + (a - r.target_off), data[a - off : b - off])
            fence = fence or self.mode is Mode.SYNC
        if end > size:
            a = max(off, size)
            self._commit_staged(st, self._stage(st, a, data[a - off :], "append"), end)
            fence = fence or self.mode is Mode.SYNC
        if fence:
            dev.fence()
        return n

    def _read(self, st: FileState, off: int, length: int) -> bytes:
        if off < 0 or length < 0:
            raise InvalidArgument("negative offset or length")
        end = min(off + length, st.local_size)
        if off >= end:
            return b""
        buf = bytearray(end - off)
        img = self.device.volatile_image
        for addr, pos, n in self._target_pieces(st, off, min(end, st.attr_size)):
            if addr is not None:
                buf[pos - off : pos - off + n] = img[addr : addr + n]
        for r in st.staged.overlapping(off, end):
            a, b = max(off, r.target_off), min(end, r.end)
            pos = a - off
            for addr, n in r.staging.runs(r.staging_off + (a - r.target_off), b - a):
                buf[pos : pos + n] = img[addr : addr + n]
                pos += n
        return bytes(buf)

    # -- file API -----------------------------------------------------------------

    @_locked
    def open(self, name: str, create: bool = True) -> int:
        try:
            ino = self.fs.lookup(name)
        except NotFound:
            if not create:
                raise
            ino = self.fs.create(name)
            self._log_meta(LogEntry(Opcode.CREATE, ino))
        st = self._states.get(ino)
        if st is None or st.stale:
            s = self.fs.stat(ino)
            st = FileState(ino, s.size, s.generation)
            self._states[ino] = st
        else:
            self._refresh(st)
        st.opens += 1
        fd = FIRST_FD
        while fd in self._fds:
            fd += 1
        self._fds[fd] = OpenFile(st)
        return fd

    @_locked
    def close(self, fd: int) -> None:
        of = self._fds.pop(fd, None)
        if of is None:
            raise BadFileDescriptor(f"bad file descriptor {fd}")
        of.refs -= 1
        if of.refs:
            return
        st = of.state
        st.opens -= 1
        if st.opens == 0 and not st.stale and st.staged:
            self._sync_files([st])
            self.staging.maintain()

    @_locked
    def dup(self, fd: int) -> int:
        of = self._fd(fd)
        new = FIRST_FD
        while new in self._fds:
            new += 1
        of.refs += 1
        self._fds[new] = of
        return new

    @_locked
    def lseek(self, fd: int, offset: int, whence: int = os.SEEK_SET) -> int:
        of = self._fd(fd)
        if whence == os.SEEK_SET:
            pos = offset
        elif whence == os.SEEK_CUR:
            pos = of.offset + offset
        elif whence == os.SEEK_END:
            self._refresh(of.state)
            pos = of.state.local_size + offset
        else:
            raise InvalidArgument(f"bad whence {whence}")
        if pos < 0:
            raise InvalidArgument("negative file offset")
        of.offset = pos
        return pos

    @_locked
    def read(self, fd: int, length: int) -> bytes:
        of = self._fd(fd)
        self._refresh(of.state)
        data = self._read(of.state, of.offset, length)
        of.offset += len(data)
        return data

    @_locked
    def pread(self, fd: int, length: int, offset: int) -> bytes:
        of = self._fd(fd)
        self._refresh(of.state)
        return self._read(of.state, offset, length)

    @_locked
    def write(self, fd: int, data: bytes) -> int:
        of = self._fd(fd)
        self._refresh(of.state)
        n = self._write(of.state, of.offset, bytes(data))
        of.offset += n
        return n

    @_locked
    def pwrite(self, fd: int, data: bytes, offset: int) -> int:
        of = self._fd(fd)
        self._refresh(of.state)
        return self._write(of.state, offset, bytes(data))

    @_locked
    def fsync(self, fd: int) -> None:
        st = self._fd(fd).state
        self._refresh(st)
        if st.staged:
            self._sync_files([st])
            self.staging.maintain()

    @_locked
    def unlink(self, name: str) -> None:
        ino = self.fs.lookup(name)
        self.fs.unlink(name)
        pins = self._forget(ino)
        self._log_meta(LogEntry(Opcode.UNLINK, ino))
        self._unpin(pins)

    @_locked
    def rename(self, old: str, new: str) -> None:
        src = self.fs.lookup(old)
        try:
            victim = self.fs.lookup(new)
        except NotFound:
            victim = None
        if victim == src:
            return
        self.fs.rename(old, new)
        pins = self._forget(victim)
        self._log_meta(LogEntry(Opcode.RENAME_SRC, src), LogEntry(Opcode.RENAME_DST, victim or 0))
        self._unpin(pins)

    @_locked
    def fstat(self, fd: int) -> Stat:
        st = self._fd(fd).state
        self._refresh(st)
        return Stat(st.ino, st.local_size, st.attr_gen)

    @_locked
    def stat(self, name: str) -> Stat:
        ino = self.fs.lookup(name)
        st = self._states.get(ino)
        if st is None or st.stale:
            return self.fs.stat(ino)
        self._refresh(st)
        return Stat(ino, st.local_size, st.attr_gen)

    def listdir(self) -> list[str]:
        return [n for n in self.fs.listdir() if not n.startswith(INTERNAL_PREFIX)]

    def staged_bytes(self) -> int:
        return sum(r.length for st in self._states.values() for r in st.staged)

    # -- execve-style handoff ------------------------------------------------------

    @_locked
    def save_context(self) -> str:
        descs: dict[int, int] = {}
        fds = {}
        for fd, of in self._fds.items():
            descs.setdefault(id(of), len(descs))
            fds[str(fd)] = descs[id(of)]
        by_id = {descs[id(of)]: of for of in self._fds.values()}
        ctx = {
            "instance_id": self.instance_id,
            "mode": self.mode.value,
            "config": asdict(self.config),
            "fds": fds,
            "descriptions": {str(i): {"ino": of.state.ino, "offset": of.offset} for i, of in by_id.items()},
            "files": [
                {
                    "ino": st.ino,
                    "attr_size": st.attr_size,
                    "attr_gen": st.attr_gen,
                    "staged_end": st.staged_end,
                    "opens": st.opens,
                    "staged": [[r.target_off, r.length, r.staging.ino, r.staging_off, r.kind] for r in st.staged],
                    "pins": {str(f.ino): n for f, n in st.pins.items()},
                }
                for st in self._states.values()
                if not st.stale
            ],
            "staging": self.staging.to_list(),
            "staging_next": self.staging.next_n,
            "log": None
            if self.log is None
            else {
                "ino": self.log.ino,
                "epoch_base": self.log.epoch_base,
                "applied": self.log.applied,
                "tail": self.log.tail,
            },
        }
        return json.dumps(ctx, sort_keys=True)

    @classmethod
    def load_context(cls, target: Kfs | PmemDevice, blob: str) -> "Usplit":
        ctx = json.loads(blob)
        fs = _fs_of(target)
        inst = cls(fs, ctx["mode"], Config(**ctx["config"]), ctx["instance_id"])
        with fs.lock:
            pool = inst.staging
            pool.next_n = ctx["staging_next"]
            for d in ctx["staging"]:
                blocks = fs.block_map(d["ino"], 0, d["capacity"] // BLOCK_SIZE)
                pool.files.append(StagingFile(d["name"], d["ino"], d["capacity"], blocks, d["cursor"], d["pins"]))
            by_ino = {f.ino: f for f in pool.files}
            for d in ctx["files"]:
                st = FileState(d["ino"], d["attr_size"], d["attr_gen"], staged_end=d["staged_end"], opens=d["opens"])
                for t_off, length, s_ino, s_off, kind in d["staged"]:
                    st.staged.items.append(StagedRange(t_off, length, by_ino[s_ino], s_off, kind))
                st.pins = Counter({by_ino[int(k)]: n for k, n in d["pins"].items()})
                inst._states[st.ino] = st
            descs = {}
            for i, d in ctx["descriptions"].items():
                descs[i] = OpenFile(inst._states[d["ino"]], d["offset"], 0)
            for fd, i in ctx["fds"].items():
                descs[str(i)].refs += 1
                inst._fds[int(fd)] = descs[str(i)]
            if ctx["log"] is not None:
                lg = ctx["log"]
                size = fs.stat(lg["ino"]).size
                inst.log = OperationLog(
                    lg["ino"], size, fs.block_map(lg["ino"], 0, size // BLOCK_SIZE), lg["epoch_base"], lg["applied"]
                )
                inst.log.compare_and_swap_tail(1, lg["tail"])
        return inst
