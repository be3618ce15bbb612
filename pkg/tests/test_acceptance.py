"""Acceptance criteria, one test each.

Every test records a one-line PASS/FAIL verdict; the lines are printed as
they happen (visible with ``-s``) and again in the terminal summary.
"""

import functools
import hashlib
import random
import time
from pathlib import Path

from pmsplit import faults
from pmsplit.bench import BenchConfig, run
from pmsplit.crashcheck import ADVERSARIAL, STRICT_EPOCH, crashcheck
from pmsplit.kfs import BLOCK_SIZE
from pmsplit.pmem import PmemDevice
from pmsplit.usplit import Config, Mode, ShadowFs, Usplit, recover_fs
from pmsplit.usplit import script as script_mod
from pmsplit.usplit.log import ENTRY_SIZE, LogEntry, Opcode, header_entry, scan

from conftest import SMALL, new_fs
from test_properties import random_ops

VERDICTS: list[str] = []
SCRIPTS = sorted((Path(script_mod.__file__).parents[1] / "scripts").glob("*.script"))
MODES = ("posix", "sync", "strict")


def criterion(number: int, title: str, limit: float | None = None):
    """Record a verdict line for the wrapped test; enforce its time bound."""

    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            t0 = time.perf_counter()
            detail = ""
            ok = False
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - t0
                assert limit is None or elapsed < limit, f"took {elapsed:.1f}s, bound {limit}s"
                ok = True
            except AssertionError as exc:
                detail = str(exc).splitlines()[0] if str(exc) else "assertion failed"
                raise
            finally:
                elapsed = time.perf_counter() - t0
                line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'} {title} ({elapsed:.1f}s) {detail}".rstrip()
                VERDICTS.append(line)
                print(line)

        return inner

    return wrap


def crash(device: PmemDevice) -> PmemDevice:
    return PmemDevice.from_image(device.crash_image())


def digest(device: PmemDevice) -> str:
    return hashlib.sha256(device.snapshot()).hexdigest()


@criterion(1, "log cost: 64B and one fence per strict append", limit=10)
def test_logging_cost_is_exact():
    u = Usplit.init(new_fs(128 << 20), Mode.STRICT, Config())
    fd = u.open("f")
    chunk = bytes(4096)
    u.device.reset_counters("test")
    fsyncs = 0
    for i in range(1, 10_001):
        u.write(fd, chunk)
        if i % 10 == 0:
            u.fsync(fd)
            fsyncs += 1
    c = u.counters
    entries = scan(u.fs.read_direct(u.log.ino, 0, u.log.size)).entries
    markers = sum(e.opcode is Opcode.FSYNC_DONE for e in entries)
    assert markers == fsyncs == 1000, f"{markers} fsync markers in the log"
    assert c.log_bytes_stored == 640_000 + 64 * markers, f"log bytes {c.log_bytes_stored}"
    appends = sum(e.opcode is Opcode.APPEND for e in entries)
    assert appends == 10_000 and c.log_fences == appends, f"log fences {c.log_fences} for {appends} appends"
    return f"log bytes {c.log_bytes_stored}, fences {c.log_fences}"


@criterion(2, "relink copies nothing for aligned data, only the unaligned tail", limit=5)
def test_relink_zero_copy():
    copied = []
    for tail in (0, 512):
        u = Usplit.init(new_fs(64 << 20), Mode.POSIX, Config())
        fd = u.open("f")
        for _ in range(1024):
            u.write(fd, b"a" * 4096)
        if tail:
            u.write(fd, b"t" * tail)
        u.device.reset_counters("test")
        u.fsync(fd)
        copied.append(u.counters.relink_data_bytes_copied)
        assert u.fs.stat(u.fs.lookup("f")).size == 1024 * 4096 + tail
    assert copied == [0, 512], f"copied {copied}"
    return f"copied {copied[0]} aligned, {copied[1]} with 512B tail"


@criterion(3, "write amplification at 32MB append_fsync10", limit=30)
def test_write_amplification():
    strict = run(BenchConfig("splitfs-strict", "append_fsync10", file_size=32 << 20)).write_amplification
    copy = run(BenchConfig("copy-on-fsync", "append_fsync10", file_size=32 << 20)).write_amplification
    detail = f"strict {strict:.4f}, copy-on-fsync {copy:.4f}"
    assert strict <= 1.1 and copy >= 1.95, detail
    return detail


@criterion(4, "append ordering: relink > copy > dax, persisted bytes reversed", limit=60)
def test_technique_ordering():
    engines = ("splitfs-posix", "copy-on-fsync", "dax-baseline")  # relink, copy, dax
    runs = []
    for _ in range(5):
        best = {}
        for name in engines:
            results = [run(BenchConfig(name, "append", file_size=32 << 20)) for _ in range(3)]
            best[name] = min(results, key=lambda r: r.elapsed)
        runs.append(best)
    tput = [[b[e].ops_per_sec for e in engines] for b in runs]
    persisted = [[b[e].counters["bytes_persisted"] for e in engines] for b in runs]
    chain = " ".join(
        f"[{t[0]:.0f}>{t[1]:.0f}>{t[2]:.0f} ops/s; {p[0]}/{p[1]}/{p[2]} B]" for t, p in zip(tput, persisted)
    )
    tput_ok = sum(t[0] > t[1] > t[2] for t in tput)
    bytes_ok = sum(p[0] < p[1] < p[2] for p in persisted)
    assert tput_ok == 5, f"throughput ordering held in {tput_ok}/5: {chain}"
    assert bytes_ok == 5, f"persisted-byte ordering relink<copy<dax held in {bytes_ok}/5: {chain}"
    return chain


@criterion(5, "crash consistency over the corpus, all modes and policies", limit=600)
def test_crash_consistency_corpus():
    assert len(SCRIPTS) >= 12
    states = 0
    failures = []
    for path in SCRIPTS:
        ops = script_mod.load(path)
        assert len(ops) <= 30, f"{path.name} has {len(ops)} ops"
        for mode in MODES:
            for policy in (STRICT_EPOCH, ADVERSARIAL):
                report = crashcheck(ops, mode, policy, budget=5000, seed=0, script_name=path.name)
                states += report.states_checked
                if not report.ok:
                    v = report.violations[0]
                    failures.append(f"{path.name}/{mode}/{policy}: {v.guarantee} {v.detail}")
    assert not failures, f"{len(failures)} failing runs, first: {failures[0]}"
    return f"{len(SCRIPTS)} scripts, {states} crash states, 0 violations"


@criterion(6, "each injected fault is caught", limit=600)
def test_checker_sensitivity():
    caught = {}
    for fault in faults.ALL:
        for mode in ("strict", "sync", "posix"):
            for path in SCRIPTS:
                report = crashcheck(script_mod.load(path), mode, ADVERSARIAL, budget=5000, inject=[fault])
                if not report.ok:
                    caught[fault] = f"{path.stem}/{mode}"
                    break
            if fault in caught:
                break
    missed = [f for f in faults.ALL if f not in caught]
    assert not missed, f"not caught: {missed}"
    return ", ".join(f"{f} by {where}" for f, where in caught.items())


def _strict_appends(n: int) -> tuple[Usplit, list[bytes]]:
    u = Usplit.init(new_fs(), Mode.STRICT, SMALL)
    fd = u.open("f")
    chunks = [bytes([65 + i]) * 1000 for i in range(n)]
    for c in chunks:
        u.write(fd, c)
    return u, chunks


@criterion(7, "recovery is idempotent and drops torn entries", limit=5)
def test_recovery_idempotence_and_tears():
    u, chunks = _strict_appends(6)
    dev = crash(u.device)
    recover_fs(dev)
    first = digest(dev)
    recover_fs(dev)
    assert digest(dev) == first, "second recovery changed the image"

    # slot 1 holds the CREATE record; appends follow in slots 2..7
    for bad in (6, 3):  # the last valid entry, then one with successors
        u, chunks = _strict_appends(6)
        dev = crash(u.device)
        addr = u.log.slot_addr(1 + bad) + 17
        dev.store(addr, bytes([dev.load(addr, 1)[0] ^ 0x40]))
        dev.flush(addr, 1)
        dev.fence()
        fs, stats = recover_fs(dev)
        assert stats.entries_replayed == bad - 1, f"replayed {stats.entries_replayed} with entry {bad} torn"
        want = b"".join(chunks[: bad - 1])
        ino = fs.lookup("f")
        assert fs.stat(ino).size == len(want) and fs.read_direct(ino, 0, len(want)) == want
        assert fs.fsck() == []
    return "double recovery hash-equal; torn entry and successors dropped"


@criterion(8, "cross-instance visibility", limit=5)
def test_visibility():
    fs = new_fs()
    a = Usplit.init(fs, Mode.POSIX, SMALL)
    b = Usplit.init(fs, Mode.POSIX, SMALL)
    fa = a.open("f")
    a.write(fa, b"x" * 4096)
    fb = b.open("f")
    assert b.fstat(fb).size == 0, "append visible before fsync"
    a.fsync(fa)
    assert b.fstat(fb).size == 4096 and b.pread(fb, 4096, 0) == b"x" * 4096, "append invisible after fsync"
    for mode in (Mode.POSIX, Mode.SYNC):
        fs = new_fs()
        a, b = Usplit.init(fs, mode, SMALL), Usplit.init(fs, mode, SMALL)
        fa = a.open("g")
        a.write(fa, b"o" * 8192)
        a.fsync(fa)
        fb = b.open("g")
        b.pread(fb, 1, 0)
        a.pwrite(fa, b"N" * 100, 4000)
        assert b.pread(fb, 100, 4000) == b"N" * 100, f"{mode.value} overwrite not visible"
    return "appends on fsync, overwrites immediately"


@criterion(9, "replay of 100,000 log entries", limit=10)
def test_recovery_scalability():
    n, size = 100_000, 64
    fs = new_fs(64 << 20)
    target = fs.create("t")
    staging = fs.create(".pmsplit.stg.0.0")
    log = fs.create(".pmsplit.log.0")
    data = random.Random(9).randbytes(n * size)
    fs.write_direct(staging, 0, data)
    fs.allocate(log, 0, -(-(n + 1) * ENTRY_SIZE // BLOCK_SIZE) * BLOCK_SIZE)
    records = [header_entry(0, 0).encode()]
    records += [LogEntry(Opcode.APPEND, target, i * size, staging, i * size, size, seq=i + 1).encode() for i in range(n)]
    fs.write_direct(log, 0, b"".join(records))
    fs.device.fence()
    t0 = time.perf_counter()
    fs, stats = recover_fs(fs.device)
    elapsed = time.perf_counter() - t0
    assert stats.entries_replayed == n, f"replayed {stats.entries_replayed}"
    assert elapsed < 10, f"replay took {elapsed:.1f}s"
    assert fs.read_direct(target, 0, n * size) == data
    return f"{n} entries in {elapsed:.2f}s"


def _view(u: Usplit, names: list[str]) -> dict[str, bytes]:
    out = {}
    for name in names:
        fd = u.open(name)  # lowest free fd, released right away
        out[name] = u.pread(fd, u.fstat(fd).size, 0)
        u.close(fd)
    return out


@criterion(10, "usplit matches the flat-file model over 10,000 random ops", limit=120)
def test_shadow_equivalence():
    steps = 0
    for mode, seed in zip(Mode, (101, 202, 303)):
        fs = new_fs(32 << 20)
        u = Usplit.init(fs, mode, SMALL)
        sh = ShadowFs()
        for i, op in enumerate(random_ops(random.Random(seed), 10_000)):
            got, want = script_mod.apply(u, op), script_mod.apply(sh, op)
            assert (got.value, got.error) == (want.value, want.error), f"{mode.value} op {i} {op}"
            if op.mutates:
                names = sorted(sh.names)
                assert u.listdir() == names, f"{mode.value} op {i}: names differ"
                assert _view(u, names) == sh.snapshot(), f"{mode.value} op {i}: contents differ"
            steps += 1
        assert fs.fsck() == []
    return f"{steps} ops, 3 modes"
