"""A trivially correct in-memory file model used as the equivalence oracle."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from ..errors import BadFileDescriptor, InvalidArgument, NotFound
from ..kfs.layout import check_name
from .core import FIRST_FD


@dataclass(eq=False)
class ShadowFile:
    data: bytearray = field(default_factory=bytearray)
    alive: bool = True


@dataclass(eq=False)
class ShadowDesc:
    file: ShadowFile
    offset: int = 0


class ShadowFs:
    def __init__(self) -> None:
        self.names: dict[str, ShadowFile] = {}
        self.fds: dict[int, ShadowDesc] = {}

    def _desc(self, fd: int) -> ShadowDesc:
        d = self.fds.get(fd)
        if d is None or not d.file.alive:
            raise BadFileDescriptor(f"bad file descriptor {fd}")
        return d

    def _new_fd(self, desc: ShadowDesc) -> int:
        fd = FIRST_FD
        while fd in self.fds:
            fd += 1
        self.fds[fd] = desc
        return fd

    def open(self, name: str) -> int:
        f = self.names.get(name)
        if f is None:
            check_name(name)
            f = self.names[name] = ShadowFile()
        return self._new_fd(ShadowDesc(f))

    def close(self, fd: int) -> None:
        if self.fds.pop(fd, None) is None:
            raise BadFileDescriptor(f"bad file descriptor {fd}")

    def dup(self, fd: int) -> int:
        return self._new_fd(self._desc(fd))

    def lseek(self, fd: int, offset: int, whence: int = os.SEEK_SET) -> int:
        d = self._desc(fd)
        base = {os.SEEK_SET: 0, os.SEEK_CUR: d.offset, os.SEEK_END: len(d.file.data)}[whence]
        if base + offset < 0:
            raise InvalidArgument("negative file offset")
        d.offset = base + offset
        return d.offset

    @staticmethod
    def _pwrite(f: ShadowFile, data: bytes, off: int) -> int:
        if off < 0:
            raise InvalidArgument("negative offset")
        if not data:
            return 0
        if off > len(f.data):
            f.data.extend(bytes(off - len(f.data)))
        f.data[off : off + len(data)] = data
        return len(data)

    def write(self, fd: int, data: bytes) -> int:
        d = self._desc(fd)
        n = self._pwrite(d.file, data, d.offset)
        d.offset += n
        return n

    def pwrite(self, fd: int, data: bytes, offset: int) -> int:
        return self._pwrite(self._desc(fd).file, data, offset)

    def read(self, fd: int, length: int) -> bytes:
        d = self._desc(fd)
        out = bytes(d.file.data[d.offset : d.offset + length])
        d.offset += len(out)
        return out

    def pread(self, fd: int, length: int, offset: int) -> bytes:
        if offset < 0 or length < 0:
            raise InvalidArgument("negative offset or length")
        return bytes(self._desc(fd).file.data[offset : offset + length])

    def fsync(self, fd: int) -> None:
        self._desc(fd)

    def unlink(self, name: str) -> None:
        f = self.names.pop(name, None)
        if f is None:
            raise NotFound(name)
        f.alive = False

    def rename(self, old: str, new: str) -> None:
        check_name(new)
        f = self.names.get(old)
        if f is None:
            raise NotFound(old)
        if old == new:
            return
        victim = self.names.pop(new, None)
        if victim is not None:
            victim.alive = False
        self.names[new] = self.names.pop(old)

    def size(self, fd: int) -> int:
        return len(self._desc(fd).file.data)

    def open_count(self, f: ShadowFile) -> int:
        return len({id(d) for d in self.fds.values() if d.file is f})

    def snapshot(self) -> dict[str, bytes]:
        return {name: bytes(f.data) for name, f in sorted(self.names.items())}
