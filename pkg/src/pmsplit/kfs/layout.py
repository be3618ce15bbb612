"""On-device format of the kernel-side file system.

Regions, in block order::

    superblock | journal | owner map | inode table | namespace | data

All integers are little-endian. See docs/layout.md for the byte tables.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from functools import cached_property

from ..errors import InvalidArgument, Unmountable

BLOCK_SIZE = 4096
MAX_EXTENT_BLOCKS = 512

SB_MAGIC = b"PMSPLTFS"
SB_VERSION = 1
# magic, version, block_size, total, then (start, count) for journal, owner map,
# inode table, namespace, then data_start; crc32 follows
_SB = struct.Struct("<8sIIQQQQQQQQQQ")
_SB_CRC = struct.Struct("<I")

OWNER = struct.Struct("<II")  # ino, file_block
OWNER_SIZE = OWNER.size

INODE_SLOT = 64
INODE = struct.Struct("<IIQQ")  # ino, flags, size, generation
INODE_IN_USE = 1
INODES_PER_BLOCK = BLOCK_SIZE // INODE_SLOT

NS_SLOT = 64
NS_HEADER = struct.Struct("<IHH")  # ino, name_len, reserved
NAME_MAX = NS_SLOT - NS_HEADER.size
NS_PER_BLOCK = BLOCK_SIZE // NS_SLOT


@dataclass(frozen=True)
class Geometry:
    total_blocks: int
    journal_blocks: int
    owner_blocks: int
    inode_table_blocks: int
    namespace_blocks: int
    block_size: int = BLOCK_SIZE

    def __post_init__(self) -> None:
        if self.block_size != BLOCK_SIZE:
            raise ValueError("only 4096-byte blocks are supported")
        if self.journal_blocks < 2 or self.journal_blocks % 2:
            raise ValueError("journal needs an even number of blocks, at least 2")
        if self.data_blocks <= 0:
            raise ValueError("geometry leaves no data blocks")
        if self.owner_blocks * BLOCK_SIZE < self.data_blocks * OWNER_SIZE:
            raise ValueError("owner map too small for the data region")

    @classmethod
    def for_capacity(
        cls,
        capacity: int,
        journal_blocks: int | None = None,
        inode_table_blocks: int | None = None,
        namespace_blocks: int | None = None,
    ) -> "Geometry":
        total = capacity // BLOCK_SIZE
        if journal_blocks is None:
            journal_blocks = max(16, total // 64)
            journal_blocks += journal_blocks % 2
        if inode_table_blocks is None:
            inode_table_blocks = max(1, total // 1024)
        if namespace_blocks is None:
            namespace_blocks = inode_table_blocks
        fixed = 1 + journal_blocks + inode_table_blocks + namespace_blocks
        owner = 1
        while owner * BLOCK_SIZE < (total - fixed - owner) * OWNER_SIZE:
            owner += 1
        return cls(total, journal_blocks, owner, inode_table_blocks, namespace_blocks)

    # region starts, in blocks
    @cached_property
    def journal_start(self) -> int:
        return 1

    @cached_property
    def owner_start(self) -> int:
        return self.journal_start + self.journal_blocks

    @cached_property
    def inode_start(self) -> int:
        return self.owner_start + self.owner_blocks

    @cached_property
    def namespace_start(self) -> int:
        return self.inode_start + self.inode_table_blocks

    @cached_property
    def data_start(self) -> int:
        return self.namespace_start + self.namespace_blocks

    @cached_property
    def data_blocks(self) -> int:
        return self.total_blocks - self.data_start

    @cached_property
    def metadata_blocks(self) -> int:
        return self.data_start

    @property
    def inode_count(self) -> int:
        return self.inode_table_blocks * INODES_PER_BLOCK

    @property
    def namespace_slots(self) -> int:
        return self.namespace_blocks * NS_PER_BLOCK

    @property
    def journal_half_bytes(self) -> int:
        return self.journal_blocks // 2 * BLOCK_SIZE

    def journal_half_addr(self, half: int) -> int:
        return (self.journal_start * BLOCK_SIZE) + half * self.journal_half_bytes

    def owner_addr(self, block: int) -> int:
        return self.owner_start * BLOCK_SIZE + (block - self.data_start) * OWNER_SIZE

    def inode_addr(self, ino: int) -> int:
        return self.inode_start * BLOCK_SIZE + (ino - 1) * INODE_SLOT

    def namespace_addr(self, slot: int) -> int:
        return self.namespace_start * BLOCK_SIZE + slot * NS_SLOT

    def block_addr(self, block: int) -> int:
        return block * BLOCK_SIZE

    def encode_superblock(self) -> bytes:
        body = _SB.pack(
            SB_MAGIC,
            SB_VERSION,
            self.block_size,
            self.total_blocks,
            self.journal_start,
            self.journal_blocks,
            self.owner_start,
            self.owner_blocks,
            self.inode_start,
            self.inode_table_blocks,
            self.namespace_start,
            self.namespace_blocks,
            self.data_start,
        )
        return body + _SB_CRC.pack(zlib.crc32(body))

    @classmethod
    def decode_superblock(cls, raw: bytes, capacity: int) -> "Geometry":
        if len(raw) < _SB.size + _SB_CRC.size:
            raise Unmountable("superblock truncated")
        body = bytes(raw[: _SB.size])
        (crc,) = _SB_CRC.unpack_from(raw, _SB.size)
        if zlib.crc32(body) != crc:
            raise Unmountable("superblock checksum mismatch")
        (magic, version, bs, total, js, jb, os_, ob, is_, ib, ns, nb, ds) = _SB.unpack(body)
        if magic != SB_MAGIC or version != SB_VERSION:
            raise Unmountable("bad superblock magic or version")
        try:
            geo = cls(total, jb, ob, ib, nb, bs)
        except ValueError as exc:
            raise Unmountable(f"bad geometry: {exc}") from None
        if (js, os_, is_, ns, ds) != (
            geo.journal_start,
            geo.owner_start,
            geo.inode_start,
            geo.namespace_start,
            geo.data_start,
        ):
            raise Unmountable("superblock region table is inconsistent")
        if total * bs > capacity:
            raise Unmountable("file system larger than device")
        return geo


def encode_inode(ino: int, in_use: bool, size: int, generation: int) -> bytes:
    return INODE.pack(ino if in_use else 0, INODE_IN_USE if in_use else 0, size, generation)


def encode_name(ino: int, name: str) -> bytes:
    raw = name.encode()
    if ino == 0:
        return bytes(NS_SLOT)
    return NS_HEADER.pack(ino, len(raw), 0) + raw.ljust(NAME_MAX, b"\0")


def check_name(name: str) -> None:
    raw = name.encode()
    if not raw or len(raw) > NAME_MAX or b"\0" in raw or b"/" in raw:
        raise InvalidArgument(f"invalid file name {name!r}")
