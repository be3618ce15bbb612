"""Deterministic microbenchmarks over the engines, with counter-based results."""

from __future__ import annotations

import csv
import gc
import io
import json
import random
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from ..pmem import IoCounters
from ..usplit import script as script_mod
from ..usplit.log import scan
from .engines import ENGINES, Engine, make_engine

WORKLOADS = ("seq_read", "rand_read", "seq_write", "rand_write", "append", "append_fsync10", "varmail_micro")
DATA_FILE = "bench.dat"


@dataclass
class BenchConfig:
    engine: str
    workload: str
    file_size: int = 32 << 20
    op_size: int = 4096
    iterations: int | None = None  # default: enough ops to cover file_size once
    seed: int = 0
    latency_ns_per_byte: float = 0.0  # modeled device cost, reported only
    device_size: int | None = None

    def __post_init__(self) -> None:
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}; expected one of {ENGINES}")
        if self.workload not in WORKLOADS and not self.workload.startswith("script:"):
            raise ValueError(f"unknown workload {self.workload!r}; expected one of {WORKLOADS} or script:<path>")
        if self.op_size <= 0 or self.file_size <= 0:
            raise ValueError("file_size and op_size must be positive")

    @property
    def ops(self) -> int:
        if self.iterations is not None:
            return self.iterations
        if self.workload == "varmail_micro":
            return max(1, self.file_size // (4 * self.op_size))
        return max(1, self.file_size // self.op_size)


@dataclass
class BenchResult:
    config: BenchConfig
    ops: int
    elapsed: float
    logical_bytes_written: int
    counters: dict[str, int]
    modeled_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def ops_per_sec(self) -> float:
        return self.ops / self.elapsed if self.elapsed > 0 else float("inf")

    @property
    def write_amplification(self) -> float | None:
        if not self.logical_bytes_written:
            return None
        return self.counters["bytes_persisted"] / self.logical_bytes_written

    @property
    def kfs_calls(self) -> int:
        return self.counters["kfs_calls"]

    @property
    def log_entries(self) -> int:
        return self.counters["log_entries_written"]

    @property
    def fences_per_op(self) -> float:
        return self.counters["fence_count"] / self.ops if self.ops else 0.0

    def row(self) -> dict:
        c = self.config
        wa = self.write_amplification
        return {
            "engine": c.engine,
            "workload": c.workload,
            "file_size": c.file_size,
            "op_size": c.op_size,
            "seed": c.seed,
            "ops": self.ops,
            "elapsed": round(self.elapsed, 6),
            "ops_per_sec": round(self.ops_per_sec, 1),
            "modeled_seconds": round(self.modeled_seconds, 6),
            "logical_bytes_written": self.logical_bytes_written,
            "write_amplification": None if wa is None else round(wa, 4),
            "kfs_calls": self.kfs_calls,
            "log_entries": self.log_entries,
            "fences_per_op": round(self.fences_per_op, 4),
            **{f"counter.{k}": v for k, v in self.counters.items()},
            **self.extra,
        }


# -- workloads ---------------------------------------------------------------
# Each workload has a setup step (untimed) and a body (timed). The body
# returns the number of bytes the application asked to write.


def _prefill(api, size: int, chunk: bytes) -> None:
    fd = api.open(DATA_FILE)
    done = 0
    while done < size:
        n = min(len(chunk), size - done)
        api.pwrite(fd, chunk[:n], done)
        done += n
    api.fsync(fd)
    api.close(fd)


def _offsets(cfg: BenchConfig, rng: random.Random, sequential: bool) -> list[int]:
    slots = max(1, cfg.file_size // cfg.op_size)
    if sequential:
        return [(i % slots) * cfg.op_size for i in range(cfg.ops)]
    return [rng.randrange(slots) * cfg.op_size for _ in range(cfg.ops)]


def _reader(sequential: bool):
    def setup(api, cfg, chunk, rng):
        _prefill(api, cfg.file_size, chunk)
        return api.open(DATA_FILE), _offsets(cfg, rng, sequential)

    def body(api, cfg, chunk, state):
        fd, offsets = state
        n = cfg.op_size
        for off in offsets:
            api.pread(fd, n, off)
        return 0

    return setup, body


def _overwriter(sequential: bool):
    def setup(api, cfg, chunk, rng):
        _prefill(api, cfg.file_size, chunk)
        return api.open(DATA_FILE), _offsets(cfg, rng, sequential)

    def body(api, cfg, chunk, state):
        fd, offsets = state
        for off in offsets:
            api.pwrite(fd, chunk, off)
        api.fsync(fd)
        return len(chunk) * len(offsets)

    return setup, body


def _appender(fsync_every: int | None):
    def setup(api, cfg, chunk, rng):
        return api.open(DATA_FILE)

    def body(api, cfg, chunk, fd):
        for i in range(1, cfg.ops + 1):
            api.write(fd, chunk)
            if fsync_every and i % fsync_every == 0:
                api.fsync(fd)
        api.fsync(fd)
        return len(chunk) * cfg.ops

    return setup, body


def _varmail_setup(api, cfg, chunk, rng):
    return None


def _varmail_body(api, cfg, chunk, _state):
    # create, four appends each followed by fsync, read back, delete
    for i in range(cfg.ops):
        name = f"mail.{i}"
        fd = api.open(name)
        for _ in range(4):
            api.write(fd, chunk)
            api.fsync(fd)
        api.pread(fd, 4 * len(chunk), 0)
        api.close(fd)
        api.unlink(name)
    return 4 * len(chunk) * cfg.ops


def _script_workload(path: str):
    ops = script_mod.load(path)

    def setup(api, cfg, chunk, rng):
        return None

    def body(api, cfg, chunk, _state):
        written = 0
        for op in ops:
            res = script_mod.apply(api, op)
            if op.kind == "write" and res.error is None:
                written += op.length
        return written

    return setup, body, len(ops)


_WORKLOADS: dict[str, tuple[Callable, Callable]] = {
    "seq_read": _reader(True),
    "rand_read": _reader(False),
    "seq_write": _overwriter(True),
    "rand_write": _overwriter(False),
    "append": _appender(None),
    "append_fsync10": _appender(10),
    "varmail_micro": (_varmail_setup, _varmail_body),
}


def run(cfg: BenchConfig, engine: Engine | None = None) -> BenchResult:
    """Run one benchmark from a warm start; counters cover only the timed part."""
    engine = engine or make_engine(cfg.engine, cfg.device_size)
    rng = random.Random(cfg.seed)
    chunk = rng.randbytes(cfg.op_size)
    ops = cfg.ops
    if cfg.workload.startswith("script:"):
        setup, body, ops = _script_workload(cfg.workload.removeprefix("script:"))
    else:
        setup, body = _WORKLOADS[cfg.workload]
    state = setup(engine.api, cfg, chunk, rng)
    engine.device.fence()
    engine.device.reset_counters("warm-start")
    # like timeit: keep collector pauses, which depend on the caller's heap, out of the timing
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        t0 = time.perf_counter()
        logical = body(engine.api, cfg, chunk, state)
        elapsed = time.perf_counter() - t0
    finally:
        if gc_was_enabled:
            gc.enable()
    counters = engine.device.counters.as_dict()
    modeled = elapsed + counters["bytes_persisted"] * cfg.latency_ns_per_byte * 1e-9
    return BenchResult(cfg, ops, elapsed, logical, counters, modeled)


def compare(configs: list[BenchConfig], repeat: int = 1) -> list[dict]:
    """Run each config (best of ``repeat`` by time) and normalize throughput to the first."""
    results = []
    for cfg in configs:
        best = min((run(cfg) for _ in range(repeat)), key=lambda r: r.elapsed)
        results.append(best)
    base = results[0].ops_per_sec if results else 1.0
    rows = []
    for r in results:
        row = r.row()
        row["normalized_throughput"] = round(r.ops_per_sec / base, 4) if base else None
        rows.append(row)
    return rows


def emit(rows: list[dict], fmt: str, path: str | Path | None = None) -> str:
    """Serialize result rows as csv or json; write to ``path`` when given."""
    if fmt == "json":
        text = json.dumps(rows, indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        keys: list[str] = []
        for row in rows:
            keys += [k for k in row if k not in keys]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown format {fmt!r}; expected csv or json")
    if path is not None:
        Path(path).write_text(text)
    return text


def config_dict(cfg: BenchConfig) -> dict:
    return asdict(cfg)


# -- concurrent appends --------------------------------------------------------


@dataclass
class ThreadedAppendResult:
    threads: int
    ops_per_thread: int
    elapsed: float
    log_seqs: list[int]
    counters: IoCounters

    @property
    def slots_distinct(self) -> bool:
        return len(set(self.log_seqs)) == len(self.log_seqs)

    @property
    def seq_gap_free(self) -> bool:
        s = sorted(self.log_seqs)
        return s == list(range(s[0], s[0] + len(s))) if s else True


def threaded_append(threads: int = 4, ops_per_thread: int = 64, op_size: int = 4096, device_size: int | None = None):
    """Strict-mode appends from several threads sharing one operation log."""
    engine = make_engine("splitfs-strict", device_size or (64 << 20))
    u = engine.api
    fds = [u.open(f"t{i}.dat") for i in range(threads)]
    engine.device.reset_counters("warm-start")
    chunk = random.Random(0).randbytes(op_size)
    errors: list[BaseException] = []

    def worker(fd: int) -> None:
        try:
            for _ in range(ops_per_thread):
                u.write(fd, chunk)
        except BaseException as exc:  # surfaced to the caller below
            errors.append(exc)

    workers = [threading.Thread(target=worker, args=(fd,)) for fd in fds]
    t0 = time.perf_counter()
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    elapsed = time.perf_counter() - t0
    if errors:
        raise errors[0]
    counters = engine.device.counters.copy()
    log = u.log
    raw = engine.fs.read_direct(log.ino, 0, log.size)
    seqs = [e.seq for e in scan(raw).entries]
    return ThreadedAppendResult(threads, ops_per_thread, elapsed, seqs, counters)
