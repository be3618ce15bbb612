"""A small journaled extent file system living on a PmemDevice.

This is the kernel half of the split design: it owns all metadata (flat
namespace, inode table, block ownership) and commits every change through
the redo journal. Data may be written by callers straight into mapped
blocks; the kernel never copies data except for the unaligned edges of a
relink.
"""

from __future__ import annotations

import functools
import heapq
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .. import faults
from ..errors import Exists, InvalidArgument, JournalFull, NoSpace, NotFound
from ..pmem import PmemDevice
from . import journal
from .layout import (
    BLOCK_SIZE,
    INODE,
    INODE_IN_USE,
    INODE_SLOT,
    MAX_EXTENT_BLOCKS,
    NAME_MAX,
    NS_HEADER,
    NS_SLOT,
    OWNER,
    Geometry,
    check_name,
    encode_inode,
    encode_name,
)

BS = BLOCK_SIZE


@dataclass
class Extent:
    file_block: int
    device_block: int
    length: int


@dataclass(frozen=True)
class Stat:
    ino: int
    size: int
    generation: int


@dataclass
class Inode:
    ino: int
    size: int = 0
    generation: int = 0
    blocks: dict[int, int] = field(default_factory=dict)

    @property
    def extents(self) -> list[Extent]:
        out: list[Extent] = []
        for fb in sorted(self.blocks):
            db = self.blocks[fb]
            last = out[-1] if out else None
            if (
                last is not None
                and last.file_block + last.length == fb
                and last.device_block + last.length == db
                and last.length < MAX_EXTENT_BLOCKS
            ):
                last.length += 1
            else:
                out.append(Extent(fb, db, 1))
        return out


@dataclass(frozen=True)
class RelinkOp:
    src_ino: int
    src_off: int
    dst_ino: int
    dst_off: int
    size: int


@dataclass
class RelinkStats:
    moved_blocks: list[tuple[int, int]] = field(default_factory=list)  # (src_ino, src file block)
    copied_bytes: int = 0
    attrs: dict[int, Stat] = field(default_factory=dict)  # resulting attributes of each destination


class Transaction:
    __slots__ = ("records", "touched", "undo")

    def __init__(self) -> None:
        self.records: dict[int, bytes] = {}
        self.touched: set[int] = set()
        self.undo: list[Callable[[], None]] = []

    def estimated_bytes(self) -> int:
        return sum(16 + len(d) for d in self.records.values()) + 40 * len(self.touched)


def _syscall(fn):
    @functools.wraps(fn)
    def wrapper(self, *args, **kwargs):
        with self.lock:
            self.device.counters.kfs_calls += 1
            return fn(self, *args, **kwargs)

    return wrapper


def _ceil_blocks(nbytes: int) -> int:
    return -(-nbytes // BS)


def mkfs(device: PmemDevice, geometry: Geometry | None = None) -> Geometry:
    geo = geometry or Geometry.for_capacity(device.capacity)
    if geo.total_blocks * BS > device.capacity:
        raise ValueError("geometry does not fit on the device")
    with device.lock:
        device.store(0, geo.encode_superblock().ljust(BS, b"\0"))
        device.flush(0, BS)
        start = geo.journal_start * BS
        device.store_nt(start, bytes(geo.data_start * BS - start))
        device.fence()
    return geo


def mount(device: PmemDevice) -> "Kfs":
    with device.lock:
        geo = Geometry.decode_superblock(device.load(0, 128), device.capacity)
        fs = Kfs(device, geo)
        fs._replay_journal()
        fs._load()
    return fs


class Kfs:
    def __init__(self, device: PmemDevice, geometry: Geometry):
        self.device = device
        self.geometry = geometry
        self.lock = device.lock
        self.inodes: dict[int, Inode] = {}
        self.names: dict[str, int] = {}
        self._slots: dict[str, int] = {}
        self._free_slots: list[int] = []
        self._free_inos: list[int] = []
        self._generations = [0] * (geometry.inode_count + 1)
        self._used = bytearray(geometry.data_blocks)
        self._hint = 0
        self._txn: Transaction | None = None
        self.next_txn_id = 1
        self.replayed_txn: int | None = None
        self.problems: list[str] = []

    # -- mount ------------------------------------------------------------

    def _replay_journal(self) -> None:
        geo = self.geometry
        best = None
        for half in (0, 1):
            raw = self.device.view(geo.journal_half_addr(half), geo.journal_half_bytes)
            txn = journal.parse(raw)
            if txn is not None and txn.txn_id % 2 == half and (best is None or txn.txn_id > best.txn_id):
                best = txn
        if best is None:
            return
        # older transactions were made durable by the record fence of this one
        for addr, data in best.runs:
            self.device.store_nt(addr, data)
        self.device.fence()
        self.replayed_txn = best.txn_id
        self.next_txn_id = best.txn_id + 1

    def _load(self) -> None:
        geo, dev = self.geometry, self.device
        table = dev.view(geo.inode_start * BS, geo.inode_table_blocks * BS)
        for i in range(geo.inode_count):
            ino = i + 1
            rec_ino, flags, size, gen = INODE.unpack_from(table, i * INODE_SLOT)
            self._generations[ino] = gen
            if flags & INODE_IN_USE:
                if rec_ino != ino:
                    self.problems.append(f"inode slot {ino} records ino {rec_ino}")
                self.inodes[ino] = Inode(ino, size, gen)
            else:
                self._free_inos.append(ino)
        heapq.heapify(self._free_inos)

        ns = dev.view(geo.namespace_start * BS, geo.namespace_blocks * BS)
        for slot in range(geo.namespace_slots):
            ino, nlen, _ = NS_HEADER.unpack_from(ns, slot * NS_SLOT)
            if ino == 0:
                self._free_slots.append(slot)
                continue
            base = slot * NS_SLOT + NS_HEADER.size
            try:
                if nlen == 0 or nlen > NAME_MAX:
                    raise ValueError
                name = bytes(ns[base : base + nlen]).decode()
            except ValueError:
                self.problems.append(f"namespace slot {slot} holds an undecodable name")
                continue
            if name in self.names:
                self.problems.append(f"name {name!r} appears twice in the namespace")
                continue
            self.names[name] = ino
            self._slots[name] = slot
        heapq.heapify(self._free_slots)

        owners = dev.view(geo.owner_start * BS, geo.data_blocks * OWNER.size)
        used = self._used
        ds = geo.data_start
        for idx, (ino, fb) in enumerate(OWNER.iter_unpack(owners)):
            if ino == 0:
                continue
            used[idx] = 1
            block = ds + idx
            inode = self.inodes.get(ino)
            if inode is None:
                self.problems.append(f"block {block} owned by dead inode {ino}")
                continue
            if fb in inode.blocks:
                self.problems.append(
                    f"inode {ino} maps file block {fb} to both {inode.blocks[fb]} and {block}"
                )
                continue
            inode.blocks[fb] = block

    # -- transactions --------------------------------------------------------

    @contextmanager
    def transaction(self) -> Iterator[Transaction]:
        """Group operations into one journal transaction.

        Nested uses join the outermost transaction. If the body raises, the
        in-memory state is rolled back and nothing is committed.
        """
        with self.lock:
            if self._txn is not None:
                yield self._txn
                return
            txn = Transaction()
            self._txn = txn
            try:
                yield txn
                self._txn = None
                self._commit(txn)
            except BaseException:
                self._txn = None
                for undo in reversed(txn.undo):
                    undo()
                raise

    def journal_raw(self, addr: int, data: bytes) -> None:
        """Add a physical write outside the metadata regions to the open transaction."""
        if self._txn is None:
            raise RuntimeError("journal_raw needs an open transaction")
        self._txn.records[addr] = bytes(data)

    def _commit(self, txn: Transaction) -> None:
        geo, dev = self.geometry, self.device
        records = dict(txn.records)
        for ino in txn.touched:
            inode = self.inodes.get(ino)
            if inode is not None:
                records[geo.inode_addr(ino)] = encode_inode(ino, True, inode.size, inode.generation)
            else:
                records[geo.inode_addr(ino)] = encode_inode(ino, False, 0, self._generations[ino])
        if not records:
            return
        runs = journal.coalesce(records)
        enc = journal.encode(self.next_txn_id, runs)
        if enc.total > geo.journal_half_bytes:
            raise JournalFull(
                f"transaction needs {enc.total} bytes, journal half holds {geo.journal_half_bytes}"
            )
        base = geo.journal_half_addr(enc.txn_id % 2)
        dev.store_nt(base, enc.body)
        dev.fence()
        if not faults.active(faults.SKIP_JOURNAL_COMMIT):
            dev.store_nt(base + enc.commit_offset, enc.commit)
            dev.fence()
        # home locations; made durable by the record fence of the next transaction
        for addr, data in runs:
            dev.store_nt(addr, data)
        dev.counters.journal_commit_count += 1
        self.next_txn_id += 1

    # -- in-memory mutation primitives (all undoable) ---------------------

    def _owner_record(self, txn: Transaction, block: int, ino: int, fb: int) -> None:
        txn.records[self.geometry.owner_addr(block)] = OWNER.pack(ino, fb)

    def _assign(self, txn: Transaction, inode: Inode, fb: int, block: int) -> None:
        idx = block - self.geometry.data_start
        inode.blocks[fb] = block
        self._used[idx] = 1
        self._owner_record(txn, block, inode.ino, fb)

        def undo():
            del inode.blocks[fb]
            self._used[idx] = 0

        txn.undo.append(undo)

    def _release(self, txn: Transaction, inode: Inode, fb: int, persist: bool = True) -> int:
        block = inode.blocks.pop(fb)
        idx = block - self.geometry.data_start
        self._used[idx] = 0
        if persist:
            self._owner_record(txn, block, 0, 0)

        def undo():
            inode.blocks[fb] = block
            self._used[idx] = 1

        txn.undo.append(undo)
        return block

    def _transfer(self, txn: Transaction, src: Inode, sfb: int, dst: Inode, dfb: int) -> int:
        block = src.blocks.pop(sfb)
        dst.blocks[dfb] = block
        self._owner_record(txn, block, dst.ino, dfb)

        def undo():
            del dst.blocks[dfb]
            src.blocks[sfb] = block

        txn.undo.append(undo)
        return block

    def _touch(self, txn: Transaction, inode: Inode) -> None:
        """Mark the inode dirty; bumps its generation once per transaction."""
        if inode.ino in txn.touched:
            return
        txn.touched.add(inode.ino)
        inode.generation += 1
        self._generations[inode.ino] = inode.generation

        def undo():
            inode.generation -= 1
            self._generations[inode.ino] = inode.generation
            txn.touched.discard(inode.ino)

        txn.undo.append(undo)

    def _set_size(self, txn: Transaction, inode: Inode, size: int) -> None:
        old = inode.size
        if old == size:
            return
        inode.size = size
        self._touch(txn, inode)

        def undo():
            inode.size = old

        txn.undo.append(undo)

    def _find_free(self, count: int) -> list[int]:
        """Pick ``count`` free data blocks, contiguous when possible (next-fit)."""
        if count == 0:
            return []
        used = self._used
        need = bytes(count)
        i = used.find(need, self._hint)
        if i < 0:
            i = used.find(need)
        if i >= 0:
            picked = list(range(i, i + count))
        else:
            picked = []
            pos = self._hint
            wrapped = False
            while len(picked) < count:
                j = used.find(b"\0", pos)
                if j < 0 or (wrapped and j >= self._hint):
                    if wrapped:
                        break
                    wrapped, pos = True, 0
                    continue
                picked.append(j)
                pos = j + 1
            if len(picked) < count:
                raise NoSpace(f"need {count} blocks, {len(picked)} free")
        self._hint = (picked[-1] + 1) % len(used)
        ds = self.geometry.data_start
        return [ds + i for i in picked]

    def free_blocks(self) -> int:
        return self._used.count(0)

    def _zero(self, addr: int, length: int) -> None:
        if length > 0:
            self.device.store_nt(addr, bytes(length))

    def _fill_fresh_block(self, block: int, fb: int, keep_lo: int, keep_hi: int, size: int) -> None:
        """Zero the parts of a newly allocated block that lie inside the file but outside [keep_lo, keep_hi)."""
        lo = fb * BS
        hi = lo + BS
        for a, b in ((lo, min(keep_lo, hi)), (max(keep_hi, lo), hi)):
            b = min(b, size)
            if b > a:
                self._zero(block * BS + (a - lo), b - a)

    def _inode(self, ino: int) -> Inode:
        try:
            return self.inodes[ino]
        except KeyError:
            raise NotFound(f"no inode {ino}") from None

    def _drop(self, txn: Transaction, name: str) -> None:
        ino = self.names.pop(name)
        slot = self._slots.pop(name)
        inode = self.inodes.pop(ino)
        for fb in sorted(inode.blocks):
            self._release(txn, inode, fb)
        txn.records[self.geometry.namespace_addr(slot)] = bytes(NS_SLOT)
        txn.touched.add(ino)
        self._generations[ino] = inode.generation + 1
        heapq.heappush(self._free_inos, ino)
        heapq.heappush(self._free_slots, slot)

        def undo():
            self._free_inos.remove(ino)
            heapq.heapify(self._free_inos)
            self._free_slots.remove(slot)
            heapq.heapify(self._free_slots)
            self._generations[ino] = inode.generation
            self.inodes[ino] = inode
            self.names[name] = ino
            self._slots[name] = slot
            txn.touched.discard(ino)

        txn.undo.append(undo)

    # -- namespace operations ---------------------------------------------

    @_syscall
    def create(self, name: str) -> int:
        check_name(name)
        if name in self.names:
            raise Exists(name)
        if not self._free_inos or not self._free_slots:
            raise NoSpace("inode table or namespace full")
        with self.transaction() as txn:
            ino = heapq.heappop(self._free_inos)
            slot = heapq.heappop(self._free_slots)
            old_gen = self._generations[ino]
            inode = Inode(ino, 0, old_gen)
            self.inodes[ino] = inode
            self.names[name] = ino
            self._slots[name] = slot
            txn.records[self.geometry.namespace_addr(slot)] = encode_name(ino, name)

            def undo():
                del self.inodes[ino]
                del self.names[name]
                del self._slots[name]
                heapq.heappush(self._free_inos, ino)
                heapq.heappush(self._free_slots, slot)

            txn.undo.append(undo)
            self._touch(txn, inode)
        return ino

    @_syscall
    def lookup(self, name: str) -> int:
        try:
            return self.names[name]
        except KeyError:
            raise NotFound(name) from None

    @_syscall
    def unlink(self, name: str) -> None:
        if name not in self.names:
            raise NotFound(name)
        with self.transaction() as txn:
            self._drop(txn, name)

    @_syscall
    def rename(self, old: str, new: str) -> None:
        check_name(new)
        if old not in self.names:
            raise NotFound(old)
        if old == new:
            return
        with self.transaction() as txn:
            if new in self.names:
                self._drop(txn, new)
            ino = self.names.pop(old)
            slot = self._slots.pop(old)
            self.names[new] = ino
            self._slots[new] = slot
            txn.records[self.geometry.namespace_addr(slot)] = encode_name(ino, new)

            def undo():
                del self.names[new]
                del self._slots[new]
                self.names[old] = ino
                self._slots[old] = slot

            txn.undo.append(undo)

    def listdir(self) -> list[str]:
        return sorted(self.names)

    # -- space management -------------------------------------------------------

    @_syscall
    def allocate(self, ino: int, file_off: int, length: int, zero: bool = True) -> None:
        if file_off < 0 or length <= 0:
            raise InvalidArgument("allocate needs a non-empty range")
        inode = self._inode(ino)
        fb0, fb1 = file_off // BS, _ceil_blocks(file_off + length)
        missing = [fb for fb in range(fb0, fb1) if fb not in inode.blocks]
        with self.transaction() as txn:
            for fb, block in zip(missing, self._find_free(len(missing))):
                self._assign(txn, inode, fb, block)
                if zero:
                    self._zero(block * BS, BS)
            if missing:
                self._touch(txn, inode)
            if file_off + length > inode.size:
                self._set_size(txn, inode, file_off + length)

    @_syscall
    def truncate(self, ino: int, size: int) -> None:
        if size < 0:
            raise InvalidArgument("negative size")
        inode = self._inode(ino)
        with self.transaction() as txn:
            if size < inode.size:
                keep = _ceil_blocks(size)
                for fb in sorted(fb for fb in inode.blocks if fb >= keep):
                    self._release(txn, inode, fb)
                self._touch(txn, inode)
            elif size > inode.size and inode.size % BS:
                # stale bytes past the old end of file must read back as zeros
                fb = inode.size // BS
                if fb in inode.blocks:
                    hi = min((fb + 1) * BS, size)
                    self._zero(inode.blocks[fb] * BS + inode.size % BS, hi - inode.size)
            self._set_size(txn, inode, size)

    # -- data paths ---------------------------------------------------------------

    def _store_mapped(self, inode: Inode, off: int, data: bytes) -> None:
        pos, end = off, off + len(data)
        dev = self.device
        while pos < end:
            fb = pos // BS
            run_end = min((fb + 1) * BS, end)
            dev.store_nt(inode.blocks[fb] * BS + pos % BS, data[pos - off : run_end - off])
            pos = run_end

    @_syscall
    def write_direct(self, ino: int, off: int, data: bytes) -> int:
        """Kernel write path: allocate, store, update size, all in one transaction."""
        inode = self._inode(ino)
        n = len(data)
        if n == 0:
            return 0
        if off < 0:
            raise InvalidArgument("negative offset")
        data = bytes(data)
        if off > inode.size:
            data = bytes(off - inode.size) + data
            off = inode.size
        end = off + len(data)
        missing = [fb for fb in range(off // BS, _ceil_blocks(end)) if fb not in inode.blocks]
        new_size = max(inode.size, end)
        if not missing and new_size == inode.size:
            self._store_mapped(inode, off, data)
            self.device.fence()
            return n
        with self.transaction() as txn:
            for fb, block in zip(missing, self._find_free(len(missing))):
                self._assign(txn, inode, fb, block)
                self._fill_fresh_block(block, fb, off, end, new_size)
            self._touch(txn, inode)
            self._store_mapped(inode, off, data)
            self._set_size(txn, inode, new_size)
        return n

    def _read(self, inode: Inode, off: int, length: int) -> bytes:
        end = min(off + length, inode.size)
        if off >= end:
            return b""
        out = bytearray()
        img = self.device.volatile_image
        pos = off
        while pos < end:
            fb = pos // BS
            run_end = min((fb + 1) * BS, end)
            block = inode.blocks.get(fb)
            if block is None:
                out += bytes(run_end - pos)
            else:
                a = block * BS + pos % BS
                out += img[a : a + run_end - pos]
            pos = run_end
        return bytes(out)

    @_syscall
    def read_direct(self, ino: int, off: int, length: int) -> bytes:
        return self._read(self._inode(ino), off, length)

    @_syscall
    def block_map(self, ino: int, first_block: int, count: int) -> list[int | None]:
        """Device block for each file block in the range (None for holes)."""
        blocks = self._inode(ino).blocks
        return [blocks.get(fb) for fb in range(first_block, first_block + count)]

    @_syscall
    def map_extents(self, ino: int, off: int, length: int) -> list[tuple[int, int]]:
        inode = self._inode(ino)
        out: list[tuple[int, int]] = []
        pos, end = off, off + length
        while pos < end:
            fb = pos // BS
            block = inode.blocks.get(fb)
            if block is None:
                raise InvalidArgument(f"hole at file block {fb} of inode {ino}")
            run_end = min((fb + 1) * BS, end)
            addr = block * BS + pos % BS
            if out and out[-1][0] + out[-1][1] == addr:
                out[-1] = (out[-1][0], out[-1][1] + run_end - pos)
            else:
                out.append((addr, run_end - pos))
            pos = run_end
        return out

    # -- relink ---------------------------------------------------------------

    @staticmethod
    def _pieces(op: RelinkOp) -> Iterator[tuple[int, int, int, bool]]:
        """(dst_pos, src_pos, length, whole_block) per destination block touched."""
        pos, end = op.dst_off, op.dst_off + op.size
        delta = op.src_off - op.dst_off
        while pos < end:
            run_end = min((pos // BS + 1) * BS, end)
            n = run_end - pos
            s = pos + delta
            yield pos, s, n, (pos % BS == 0 and n == BS and s % BS == 0)
            pos = run_end

    def _src_mapped(self, inode: Inode, pos: int, n: int) -> bool:
        return all(fb in inode.blocks for fb in range(pos // BS, _ceil_blocks(pos + n)))

    @_syscall
    def relink(
        self,
        src_ino: int,
        src_off: int,
        dst_ino: int,
        dst_off: int,
        size: int,
        *,
        via_swap: bool = False,
    ) -> RelinkStats:
        """Atomically move ``size`` bytes from src to dst.

        Block-aligned bodies change owner without copying; the unaligned
        head and tail are copied into dst's blocks.
        """
        return self._relink_batch([RelinkOp(src_ino, src_off, dst_ino, dst_off, size)], via_swap=via_swap)

    @_syscall
    def relink_batch(
        self,
        ops: Iterable[RelinkOp],
        *,
        copy_only: bool = False,
        replay: bool = False,
        raw_records: Iterable[tuple[int, bytes]] = (),
    ) -> RelinkStats:
        """Apply several relinks (plus raw journaled writes) in one transaction.

        ``copy_only`` copies every byte instead of moving blocks. ``replay``
        tolerates already-moved source blocks and missing inodes, which makes
        re-applying a logged relink idempotent.
        """
        return self._relink_batch(list(ops), copy_only=copy_only, replay=replay, raw_records=raw_records)

    def _relink_batch(
        self,
        ops: list[RelinkOp],
        *,
        copy_only: bool = False,
        replay: bool = False,
        via_swap: bool = False,
        raw_records: Iterable[tuple[int, bytes]] = (),
    ) -> RelinkStats:
        # validate everything before touching state so a failure leaves no partial relink
        plan = []
        fresh: set[tuple[int, int]] = set()
        for op in ops:
            if op.size <= 0 or op.src_off < 0 or op.dst_off < 0:
                raise InvalidArgument(f"bad relink range {op}")
            src, dst = self.inodes.get(op.src_ino), self.inodes.get(op.dst_ino)
            if src is None or dst is None:
                if replay:
                    continue
                raise NotFound(f"relink inode missing in {op}")
            if src is dst:
                raise InvalidArgument("relink source and destination must differ")
            pieces = []
            for pos, s, n, whole in self._pieces(op):
                move = whole and not copy_only
                if not self._src_mapped(src, s, n):
                    if replay:
                        continue
                    raise InvalidArgument(f"hole in relink source at offset {s}")
                dfb = pos // BS
                if (not move or via_swap) and dfb not in dst.blocks:
                    fresh.add((dst.ino, dfb))
                pieces.append((pos, s, n, move))
            plan.append((op, src, dst, pieces))
        if len(fresh) > self.free_blocks():
            raise NoSpace(f"relink needs {len(fresh)} free blocks")

        stats = RelinkStats()
        dealloc = not faults.active(faults.SKIP_RELINK_DEALLOC)
        with self.transaction() as txn:
            for op, src, dst, pieces in plan:
                new_size = max(dst.size, op.dst_off + op.size)
                for pos, s, n, move in pieces:
                    dfb, sfb = pos // BS, s // BS
                    if move:
                        if via_swap:
                            self._swap_move(txn, src, sfb, dst, dfb)
                        else:
                            if dfb in dst.blocks:
                                self._release(txn, dst, dfb, persist=dealloc)
                            self._transfer(txn, src, sfb, dst, dfb)
                        stats.moved_blocks.append((src.ino, sfb))
                    else:
                        self._copy_piece(txn, src, s, dst, pos, n, new_size)
                        stats.copied_bytes += n
                self._touch(txn, src)
                self._touch(txn, dst)
                self._set_size(txn, dst, new_size)
            for addr, data in raw_records:
                txn.records[addr] = bytes(data)
        self.device.counters.relink_data_bytes_copied += stats.copied_bytes
        for _, _, dst, _ in plan:
            stats.attrs[dst.ino] = Stat(dst.ino, dst.size, dst.generation)
        return stats

    def _swap_move(self, txn: Transaction, src: Inode, sfb: int, dst: Inode, dfb: int) -> None:
        """Allocate at dst, swap the two blocks between the files, then free the one src got."""
        if dfb not in dst.blocks:
            self._assign(txn, dst, dfb, self._find_free(1)[0])
        old = self._release(txn, dst, dfb, persist=False)
        self._transfer(txn, src, sfb, dst, dfb)
        self._assign(txn, src, sfb, old)
        self._release(txn, src, sfb)

    def _copy_piece(
        self, txn: Transaction, src: Inode, s: int, dst: Inode, pos: int, n: int, new_size: int
    ) -> None:
        data = self._read_mapped(src, s, n)
        dfb = pos // BS
        if dfb not in dst.blocks:
            block = self._find_free(1)[0]
            self._assign(txn, dst, dfb, block)
            self._fill_fresh_block(block, dfb, pos, pos + n, new_size)
        self.device.store_nt(dst.blocks[dfb] * BS + pos % BS, data)

    def _read_mapped(self, inode: Inode, off: int, n: int) -> bytes:
        out = bytearray()
        img = self.device.volatile_image
        pos, end = off, off + n
        while pos < end:
            fb = pos // BS
            run_end = min((fb + 1) * BS, end)
            a = inode.blocks[fb] * BS + pos % BS
            out += img[a : a + run_end - pos]
            pos = run_end
        return bytes(out)

    # -- misc queries -------------------------------------------------------------

    @_syscall
    def fsync_meta(self, ino: int) -> None:
        """Make everything issued so far for ``ino`` durable.

        Transactions commit when their operation returns, so this only has to
        fence stores that are still in flight.
        """
        self._inode(ino)
        if self.device.has_pending():
            self.device.fence()

    @_syscall
    def stat(self, ino: int) -> Stat:
        inode = self._inode(ino)
        return Stat(ino, inode.size, inode.generation)

    def generation_of(self, ino: int) -> int | None:
        """Current generation without a kernel call (models a shared, kernel-maintained page).

        Returns None when the inode no longer exists.
        """
        inode = self.inodes.get(ino)
        return None if inode is None else inode.generation

    def name_of(self, ino: int) -> str | None:
        for name, i in self.names.items():
            if i == ino:
                return name
        return None

    # -- consistency checking -----------------------------------------------------

    def fsck(self) -> list[str]:
        """Structural problems: conservation, ownership, naming, sizes."""
        problems = list(self.problems)
        geo = self.geometry
        for name, ino in self.names.items():
            if ino not in self.inodes:
                problems.append(f"name {name!r} points at dead inode {ino}")
        named = Counter(self.names.values())
        seen: dict[int, int] = {}
        owned = 0
        for ino, inode in self.inodes.items():
            if named[ino] != 1:
                problems.append(f"inode {ino} has {named[ino]} names")
            limit = _ceil_blocks(inode.size)
            for fb, block in inode.blocks.items():
                owned += 1
                if fb >= limit:
                    problems.append(f"inode {ino} maps block {fb} past its size {inode.size}")
                if not geo.data_start <= block < geo.total_blocks:
                    problems.append(f"inode {ino} maps non-data block {block}")
                elif not self._used[block - geo.data_start]:
                    problems.append(f"block {block} mapped by inode {ino} is marked free")
                if block in seen:
                    problems.append(f"block {block} owned by inodes {seen[block]} and {ino}")
                seen[block] = ino
        free = self._used.count(0)
        if free + owned + geo.metadata_blocks != geo.total_blocks:
            problems.append(
                f"allocator conservation: free {free} + owned {owned} + metadata "
                f"{geo.metadata_blocks} != total {geo.total_blocks}"
            )
        return problems
