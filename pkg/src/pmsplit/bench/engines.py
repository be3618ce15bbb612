"""File-system engines the benchmarks can drive.

Every engine exposes the same small POSIX-like surface as the script
interpreter (open/close/read/pread/write/pwrite/fsync/unlink/rename), so
workloads and scripts run unchanged on all of them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

from ..errors import BadFileDescriptor, InvalidArgument, NotFound
from ..kfs import Geometry, Kfs, mkfs, mount
from ..pmem import PmemDevice
from ..usplit import Config, Mode, Usplit

ENGINES = ("splitfs-posix", "splitfs-sync", "splitfs-strict", "dax-baseline", "copy-on-fsync")
DEFAULT_DEVICE_SIZE = 128 << 20


def device_size_from_env() -> int:
    raw = os.environ.get("PMSPLIT_DEVICE_SIZE")
    if not raw:
        return DEFAULT_DEVICE_SIZE
    units = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}
    raw = raw.strip().upper().removesuffix("B")
    if raw and raw[-1] in units:
        return int(raw[:-1]) * units[raw[-1]]
    return int(raw)


@dataclass
class _DaxFile:
    ino: int
    offset: int = 0


class DaxFs:
    """Kernel-path baseline: every data operation is a kfs call.

    Appends allocate blocks inside a journaled transaction and overwrites are
    stored in place, much like a DAX file system without a user-space layer.
    """

    def __init__(self, fs: Kfs):
        self.fs = fs
        self.device = fs.device
        self._fds: dict[int, _DaxFile] = {}

    def _fd(self, fd: int) -> _DaxFile:
        f = self._fds.get(fd)
        if f is None:
            raise BadFileDescriptor(f"bad file descriptor {fd}")
        return f

    def open(self, name: str, create: bool = True) -> int:
        try:
            ino = self.fs.lookup(name)
        except NotFound:
            if not create:
                raise
            ino = self.fs.create(name)
        fd = 3
        while fd in self._fds:
            fd += 1
        self._fds[fd] = _DaxFile(ino)
        return fd

    def close(self, fd: int) -> None:
        self._fd(fd)
        del self._fds[fd]

    def pread(self, fd: int, length: int, offset: int) -> bytes:
        if offset < 0 or length < 0:
            raise InvalidArgument("negative offset or length")
        return self.fs.read_direct(self._fd(fd).ino, offset, length)

    def read(self, fd: int, length: int) -> bytes:
        f = self._fd(fd)
        data = self.pread(fd, length, f.offset)
        f.offset += len(data)
        return data

    def pwrite(self, fd: int, data: bytes, offset: int) -> int:
        return self.fs.write_direct(self._fd(fd).ino, offset, data)

    def write(self, fd: int, data: bytes) -> int:
        f = self._fd(fd)
        n = self.pwrite(fd, data, f.offset)
        f.offset += n
        return n

    def lseek(self, fd: int, offset: int, whence: int = os.SEEK_SET) -> int:
        f = self._fd(fd)
        base = {os.SEEK_SET: 0, os.SEEK_CUR: f.offset, os.SEEK_END: self.fs.stat(f.ino).size}[whence]
        if base + offset < 0:
            raise InvalidArgument("negative resulting offset")
        f.offset = base + offset
        return f.offset

    def fsync(self, fd: int) -> None:
        self.fs.fsync_meta(self._fd(fd).ino)

    def unlink(self, name: str) -> None:
        ino = self.fs.lookup(name)
        self.fs.unlink(name)
        for fd in [fd for fd, f in self._fds.items() if f.ino == ino]:
            del self._fds[fd]

    def rename(self, old: str, new: str) -> None:
        self.fs.rename(old, new)

    def fstat(self, fd: int):
        return self.fs.stat(self._fd(fd).ino)


@dataclass
class Engine:
    name: str
    api: object  # Usplit or DaxFs
    device: PmemDevice
    fs: Kfs


def make_engine(name: str, device_size: int | None = None, config: Config | None = None) -> Engine:
    """Fresh device, fresh file system, and a warmed-up engine on top."""
    if name not in ENGINES:
        raise ValueError(f"unknown engine {name!r}; expected one of {ENGINES}")
    size = device_size or device_size_from_env()
    dev = PmemDevice(size, tracing=False)
    mkfs(dev, Geometry.for_capacity(size))
    fs = mount(dev)
    if name == "dax-baseline":
        api = DaxFs(fs)
    elif name == "copy-on-fsync":
        cfg = config or Config()
        api = Usplit.init(fs, Mode.POSIX, replace(cfg, use_relink=False))
    else:
        api = Usplit.init(fs, Mode(name.removeprefix("splitfs-")), config)
    return Engine(name, api, dev, fs)
