"""64-byte checksummed operation-log records and the log file they live in.

Record layout (little-endian)::

    0   u16  opcode
    2   u16  flags          CONT: more records of this operation follow
    4   u64  target_ino
    12  u64  target_off
    20  u64  staging_ino
    28  u64  staging_off
    36  u64  size
    44  u64  seq
    52  8B   zero
    60  u32  crc32 of bytes 0..59

Slot 0 of the log file is a header record: ``target_off`` holds the epoch
base (the record in slot ``s`` must carry ``seq == base + s``) and ``seq``
holds the last sequence number already applied. An all-zero header means
base 0, nothing applied.
"""

from __future__ import annotations

import struct
import threading
import zlib
from dataclasses import dataclass
from enum import IntEnum, IntFlag

from ..kfs.layout import BLOCK_SIZE

ENTRY_SIZE = 64
_ENTRY = struct.Struct("<HHQQQQQQ8x")
_CRC = struct.Struct("<I")
ZERO_ENTRY = bytes(ENTRY_SIZE)


class Opcode(IntEnum):
    HEADER = 1
    APPEND = 2
    OVERWRITE = 3
    FSYNC_DONE = 4
    CREATE = 5
    UNLINK = 6
    RENAME_SRC = 7
    RENAME_DST = 8


class EntryFlag(IntFlag):
    NONE = 0
    CONT = 1


# records after which earlier data records for the same inode must not be replayed
BARRIERS = frozenset({Opcode.FSYNC_DONE, Opcode.CREATE, Opcode.UNLINK, Opcode.RENAME_DST})


@dataclass(frozen=True)
class LogEntry:
    opcode: Opcode
    target_ino: int = 0
    target_off: int = 0
    staging_ino: int = 0
    staging_off: int = 0
    size: int = 0
    seq: int = 0
    flags: EntryFlag = EntryFlag.NONE

    def encode(self) -> bytes:
        body = _ENTRY.pack(
            int(self.opcode),
            int(self.flags),
            self.target_ino,
            self.target_off,
            self.staging_ino,
            self.staging_off,
            self.size,
            self.seq,
        )
        return body + _CRC.pack(zlib.crc32(body))

    @classmethod
    def decode(cls, raw: bytes) -> "LogEntry | None":
        """Parse a slot; None if the checksum or opcode is wrong."""
        if len(raw) != ENTRY_SIZE:
            return None
        body = raw[:60]
        if zlib.crc32(body) != _CRC.unpack_from(raw, 60)[0]:
            return None
        op, flags, t_ino, t_off, s_ino, s_off, size, seq = _ENTRY.unpack(body)
        try:
            opcode = Opcode(op)
        except ValueError:
            return None
        return cls(opcode, t_ino, t_off, s_ino, s_off, size, seq, EntryFlag(flags & EntryFlag.CONT))


def header_entry(epoch_base: int, applied: int) -> LogEntry:
    return LogEntry(Opcode.HEADER, target_off=epoch_base, seq=applied)


@dataclass
class LogScan:
    epoch_base: int
    applied: int
    entries: list[LogEntry]  # valid, unapplied, complete groups, in seq order
    last_seq: int  # highest valid seq seen (applied or not)
    used_bytes: int  # offset just past the last nonzero slot


def scan(raw: bytes) -> LogScan:
    """Read a log image: header, then slots until the first empty or torn one."""
    nslots = len(raw) // ENTRY_SIZE
    head = bytes(raw[:ENTRY_SIZE])
    base = applied = 0
    if head != ZERO_ENTRY:
        h = LogEntry.decode(head)
        if h is not None and h.opcode is Opcode.HEADER:
            base, applied = h.target_off, h.seq
    entries: list[LogEntry] = []
    group: list[LogEntry] = []
    last_seq = applied
    for slot in range(1, nslots):
        off = slot * ENTRY_SIZE
        chunk = bytes(raw[off : off + ENTRY_SIZE])
        if chunk == ZERO_ENTRY:
            break
        e = LogEntry.decode(chunk)
        if e is None or e.seq != base + slot or e.opcode is Opcode.HEADER:
            break
        last_seq = max(last_seq, e.seq)
        if e.seq <= applied:
            continue
        group.append(e)
        if not e.flags & EntryFlag.CONT:
            entries.extend(group)
            group = []
    # an unfinished group is dropped: its operation never completed
    used = len(bytes(raw).rstrip(b"\0"))
    used = -(-used // ENTRY_SIZE) * ENTRY_SIZE
    return LogScan(base, applied, entries, last_seq, max(used, ENTRY_SIZE))


def replay_set(entries: list[LogEntry]) -> list[LogEntry]:
    """Data records that are not superseded by a later barrier on the same inode."""
    last_barrier: dict[int, int] = {}
    for e in entries:
        if e.opcode in BARRIERS:
            last_barrier[e.target_ino] = e.seq
    return [
        e
        for e in entries
        if e.opcode in (Opcode.APPEND, Opcode.OVERWRITE) and e.seq > last_barrier.get(e.target_ino, 0)
    ]


class OperationLog:
    """A zero-initialized kfs file of 64-byte slots with a DRAM tail."""

    def __init__(self, ino: int, size: int, blocks: list[int], epoch_base: int = 0, applied: int = 0):
        self.ino = ino
        self.size = size
        self.nslots = size // ENTRY_SIZE
        self.blocks = blocks
        self.epoch_base = epoch_base
        self.applied = applied
        self._tail = 1
        self._tail_lock = threading.Lock()

    @property
    def tail(self) -> int:
        return self._tail

    def slot_addr(self, slot: int) -> int:
        off = slot * ENTRY_SIZE
        return self.blocks[off // BLOCK_SIZE] * BLOCK_SIZE + off % BLOCK_SIZE

    def compare_and_swap_tail(self, expected: int, new: int) -> bool:
        with self._tail_lock:
            if self._tail != expected:
                return False
            self._tail = new
            return True

    def reserve(self, count: int) -> int | None:
        """Claim ``count`` consecutive slots; None when the log is full."""
        while True:
            cur = self._tail
            if cur + count > self.nslots:
                return None
            if self.compare_and_swap_tail(cur, cur + count):
                return cur

    def unreserve(self, first: int, count: int) -> bool:
        return self.compare_and_swap_tail(first + count, first)

    def seq_of(self, slot: int) -> int:
        return self.epoch_base + slot

    def zero_ranges(self, upto: int) -> list[tuple[int, int]]:
        """Device (addr, len) runs covering slots 1..upto-1."""
        runs: list[tuple[int, int]] = []
        pos, end = ENTRY_SIZE, upto * ENTRY_SIZE
        while pos < end:
            run_end = min((pos // BLOCK_SIZE + 1) * BLOCK_SIZE, end)
            addr = self.blocks[pos // BLOCK_SIZE] * BLOCK_SIZE + pos % BLOCK_SIZE
            if runs and runs[-1][0] + runs[-1][1] == addr:
                runs[-1] = (runs[-1][0], runs[-1][1] + run_end - pos)
            else:
                runs.append((addr, run_end - pos))
            pos = run_end
        return runs
