"""Workload scripts: one operation per line.

::

    open <name>
    write <fd> <off|@cur> <len> <seed>
    read <fd> <off|@cur> <len>
    fsync <fd>
    close <fd>
    unlink <name>
    rename <a> <b>
    mark <label>

Blank lines and ``#`` comments are ignored. ``@cur`` means "at the shared
file offset, advancing it" (write/read); a number means pwrite/pread.
Payload bytes are a pure function of (seed, len).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

from ..errors import PmsplitError

CUR = None


@dataclass(frozen=True)
class ScriptOp:
    kind: str
    name: str | None = None
    fd: int | None = None
    off: int | None = CUR
    length: int = 0
    seed: int = 0
    new_name: str | None = None
    label: str | None = None

    def __str__(self) -> str:
        off = "@cur" if self.off is None else str(self.off)
        if self.kind in ("open", "unlink"):
            return f"{self.kind} {self.name}"
        if self.kind == "rename":
            return f"rename {self.name} {self.new_name}"
        if self.kind == "write":
            return f"write {self.fd} {off} {self.length} {self.seed}"
        if self.kind == "read":
            return f"read {self.fd} {off} {self.length}"
        if self.kind in ("fsync", "close"):
            return f"{self.kind} {self.fd}"
        return f"mark {self.label}"

    @property
    def mutates(self) -> bool:
        return self.kind not in ("read", "mark")


class ScriptError(ValueError):
    pass


def payload(seed: int, length: int) -> bytes:
    return random.Random(seed).randbytes(length)


def _offset(tok: str) -> int | None:
    return CUR if tok == "@cur" else int(tok)


def parse_line(line: str) -> ScriptOp | None:
    line = line.split("#", 1)[0].strip()
    if not line:
        return None
    parts = line.split()
    kind, args = parts[0], parts[1:]
    arity = {"open": 1, "write": 4, "read": 3, "fsync": 1, "close": 1, "unlink": 1, "rename": 2, "mark": 1}
    if kind not in arity:
        raise ScriptError(f"unknown operation {kind!r}")
    if len(args) != arity[kind]:
        raise ScriptError(f"{kind} takes {arity[kind]} arguments, got {len(args)}")
    try:
        if kind in ("open", "unlink"):
            return ScriptOp(kind, name=args[0])
        if kind == "rename":
            return ScriptOp(kind, name=args[0], new_name=args[1])
        if kind == "write":
            return ScriptOp(kind, fd=int(args[0]), off=_offset(args[1]), length=int(args[2]), seed=int(args[3]))
        if kind == "read":
            return ScriptOp(kind, fd=int(args[0]), off=_offset(args[1]), length=int(args[2]))
        if kind in ("fsync", "close"):
            return ScriptOp(kind, fd=int(args[0]))
        return ScriptOp(kind, label=args[0])
    except ValueError as exc:
        raise ScriptError(f"bad argument in {line!r}: {exc}") from None


def parse(text: str) -> list[ScriptOp]:
    ops = []
    for lineno, line in enumerate(text.splitlines(), 1):
        try:
            op = parse_line(line)
        except ScriptError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from None
        if op is not None:
            ops.append(op)
    return ops


def load(path: str | Path) -> list[ScriptOp]:
    return parse(Path(path).read_text())


def dumps(ops: Iterable[ScriptOp]) -> str:
    return "".join(f"{op}\n" for op in ops)


class FileApi(Protocol):
    def open(self, name: str) -> int: ...
    def close(self, fd: int) -> None: ...
    def read(self, fd: int, length: int) -> bytes: ...
    def pread(self, fd: int, length: int, offset: int) -> bytes: ...
    def write(self, fd: int, data: bytes) -> int: ...
    def pwrite(self, fd: int, data: bytes, offset: int) -> int: ...
    def fsync(self, fd: int) -> None: ...
    def unlink(self, name: str) -> None: ...
    def rename(self, old: str, new: str) -> None: ...


@dataclass
class OpResult:
    value: object = None
    error: str | None = None


def apply(api: FileApi, op: ScriptOp) -> OpResult:
    """Run one op; file-system errors are captured by class name so runs can be compared."""
    try:
        if op.kind == "open":
            return OpResult(api.open(op.name))
        if op.kind == "write":
            data = payload(op.seed, op.length)
            if op.off is CUR:
                return OpResult(api.write(op.fd, data))
            return OpResult(api.pwrite(op.fd, data, op.off))
        if op.kind == "read":
            if op.off is CUR:
                return OpResult(api.read(op.fd, op.length))
            return OpResult(api.pread(op.fd, op.length, op.off))
        if op.kind == "fsync":
            api.fsync(op.fd)
        elif op.kind == "close":
            api.close(op.fd)
        elif op.kind == "unlink":
            api.unlink(op.name)
        elif op.kind == "rename":
            api.rename(op.name, op.new_name)
        return OpResult()
    except PmsplitError as exc:
        return OpResult(error=type(exc).__name__)
