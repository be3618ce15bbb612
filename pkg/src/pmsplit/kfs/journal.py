"""Physical redo journal framing.

A transaction occupies one of the two journal halves (``txn_id % 2``)::

    header  32B   magic "KJTX", record count, txn_id, payload length
    records       (addr u64, len u32, pad u32) + data padded to 8 bytes
    commit  24B   at the next 64-byte boundary: magic "KJCM", txn_id,
                  crc32 over header + records

Records are written and fenced, then the commit record is written and
fenced. A transaction is effective iff its commit is intact and the
checksum matches.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

TXN_MAGIC = b"KJTX"
COMMIT_MAGIC = b"KJCM"
TXN_HEADER = struct.Struct("<4sIQQ8x")
REC_HEADER = struct.Struct("<QI4x")
COMMIT = struct.Struct("<4s4xQI4x")


def _align(n: int, to: int) -> int:
    return -(-n // to) * to


def coalesce(records: dict[int, bytes]) -> list[tuple[int, bytes]]:
    """Merge byte-adjacent records into runs, sorted by address."""
    runs: list[tuple[int, bytearray]] = []
    for addr in sorted(records):
        data = records[addr]
        if runs and runs[-1][0] + len(runs[-1][1]) == addr:
            runs[-1][1].extend(data)
        else:
            runs.append((addr, bytearray(data)))
    return [(a, bytes(d)) for a, d in runs]


def encoded_size(runs: list[tuple[int, bytes]]) -> int:
    payload = sum(REC_HEADER.size + _align(len(d), 8) for _, d in runs)
    return _align(TXN_HEADER.size + payload, 64) + COMMIT.size


@dataclass
class EncodedTxn:
    txn_id: int
    body: bytes
    commit_offset: int
    commit: bytes

    @property
    def total(self) -> int:
        return self.commit_offset + len(self.commit)


def encode(txn_id: int, runs: list[tuple[int, bytes]]) -> EncodedTxn:
    parts = []
    for addr, data in runs:
        parts.append(REC_HEADER.pack(addr, len(data)))
        parts.append(data)
        pad = _align(len(data), 8) - len(data)
        if pad:
            parts.append(bytes(pad))
    payload = b"".join(parts)
    body = TXN_HEADER.pack(TXN_MAGIC, len(runs), txn_id, len(payload)) + payload
    commit = COMMIT.pack(COMMIT_MAGIC, txn_id, zlib.crc32(body))
    return EncodedTxn(txn_id, body, _align(len(body), 64), commit)


@dataclass
class ParsedTxn:
    txn_id: int
    runs: list[tuple[int, bytes]]


def parse(raw: bytes) -> ParsedTxn | None:
    """Decode the transaction at the start of a journal half, or None."""
    if len(raw) < TXN_HEADER.size:
        return None
    magic, nrec, txn_id, payload_len = TXN_HEADER.unpack_from(raw, 0)
    if magic != TXN_MAGIC:
        return None
    body_len = TXN_HEADER.size + payload_len
    commit_off = _align(body_len, 64)
    if commit_off + COMMIT.size > len(raw):
        return None
    cmagic, ctxn, crc = COMMIT.unpack_from(raw, commit_off)
    if cmagic != COMMIT_MAGIC or ctxn != txn_id:
        return None
    if zlib.crc32(raw[:body_len]) != crc:
        return None
    runs = []
    pos = TXN_HEADER.size
    for _ in range(nrec):
        if pos + REC_HEADER.size > body_len:
            return None
        addr, length = REC_HEADER.unpack_from(raw, pos)
        pos += REC_HEADER.size
        if pos + length > body_len:
            return None
        runs.append((addr, bytes(raw[pos : pos + length])))
        pos += _align(length, 8)
    return ParsedTxn(txn_id, runs)
