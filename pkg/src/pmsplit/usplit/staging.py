"""Pre-allocated staging files that absorb appends (and strict-mode overwrites)."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import NoSpace, NotFound
from ..kfs import BLOCK_SIZE, Kfs

PREFIX = ".pmsplit.stg."


def staging_name(instance_id: int, n: int) -> str:
    return f"{PREFIX}{instance_id}.{n}"


def parse_staging_name(name: str) -> tuple[int, int] | None:
    if not name.startswith(PREFIX):
        return None
    try:
        iid, n = name[len(PREFIX) :].split(".")
        return int(iid), int(n)
    except ValueError:
        return None


@dataclass(eq=False)
class StagingFile:
    name: str
    ino: int
    capacity: int
    blocks: list[int | None]
    cursor: int = 0
    # ranges handed out whose target has not been fsynced (or unlinked) yet
    pins: int = 0

    def addr(self, off: int) -> int:
        block = self.blocks[off // BLOCK_SIZE]
        if block is None:
            raise RuntimeError(f"staging offset {off} of {self.name} is no longer mapped")
        return block * BLOCK_SIZE + off % BLOCK_SIZE

    def runs(self, off: int, length: int) -> list[tuple[int, int]]:
        """Device (addr, len) pieces for a staging range, split at block edges."""
        out = []
        pos, end = off, off + length
        while pos < end:
            run_end = min((pos // BLOCK_SIZE + 1) * BLOCK_SIZE, end)
            out.append((self.addr(pos), run_end - pos))
            pos = run_end
        return out

    def place(self, target_off: int) -> int:
        """First offset at or after the cursor that is congruent to target_off within a block."""
        return self.cursor + (target_off - self.cursor) % BLOCK_SIZE

    @property
    def exhausted(self) -> bool:
        return self.cursor >= self.capacity

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "ino": self.ino,
            "capacity": self.capacity,
            "cursor": self.cursor,
            "pins": self.pins,
        }


@dataclass
class StagingPool:
    fs: Kfs
    instance_id: int
    count: int
    size: int
    files: list[StagingFile] = field(default_factory=list)
    next_n: int = 0
    created: int = 0
    retired: int = 0

    def by_ino(self, ino: int) -> StagingFile:
        for f in self.files:
            if f.ino == ino:
                return f
        raise KeyError(ino)

    def _create(self) -> StagingFile:
        name = staging_name(self.instance_id, self.next_n)
        self.next_n += 1
        ino = self.fs.create(name)
        try:
            # contents are never read back outside staged ranges, so skip zeroing
            self.fs.allocate(ino, 0, self.size, zero=False)
        except NoSpace:
            self.fs.unlink(name)
            raise
        blocks = self.fs.block_map(ino, 0, self.size // BLOCK_SIZE)
        f = StagingFile(name, ino, self.size, blocks)
        self.files.append(f)
        self.created += 1
        return f

    def fill(self) -> None:
        """Top the pool up to ``count`` files with free space."""
        while sum(not f.exhausted for f in self.files) < self.count:
            self._create()

    def adopt(self) -> None:
        """Take over this instance's staging files after a crash.

        Nothing staged survives recovery, so complete files restart at cursor
        zero and files with moved-out blocks are dropped.
        """
        for name in self.fs.listdir():
            parsed = parse_staging_name(name)
            if parsed is None or parsed[0] != self.instance_id:
                continue
            self.next_n = max(self.next_n, parsed[1] + 1)
            ino = self.fs.lookup(name)
            st = self.fs.stat(ino)
            blocks = self.fs.block_map(ino, 0, -(-st.size // BLOCK_SIZE))
            if st.size != self.size or None in blocks:
                self.fs.unlink(name)
                continue
            self.files.append(StagingFile(name, ino, self.size, blocks))
        self.files.sort(key=lambda f: parse_staging_name(f.name)[1])

    def retire(self) -> None:
        """Unlink exhausted files that no unsynced data refers to."""
        keep = []
        for f in self.files:
            if f.exhausted and f.pins == 0:
                try:
                    self.fs.unlink(f.name)
                except NotFound:
                    pass
                self.retired += 1
            else:
                keep.append(f)
        self.files = keep

    def maintain(self) -> None:
        self.retire()
        self.fill()

    def reserve(self, target_off: int, length: int) -> tuple[StagingFile, int, int]:
        """Hand out staging space for data bound for ``target_off``.

        Returns (file, staging offset, granted length); the grant may be
        shorter than asked when a file runs out.
        """
        for attempt in range(2):
            for f in self.files:
                if f.exhausted:
                    continue
                off = f.place(target_off)
                room = f.capacity - off
                if room <= 0:
                    f.cursor = f.capacity
                    continue
                n = min(length, room)
                f.cursor = off + n
                return f, off, n
            # starved: recycle what we can and add one more file
            self.retire()
            self._create()
        raise NoSpace("staging space exhausted")

    def to_list(self) -> list[dict]:
        return [f.to_dict() for f in self.files]
