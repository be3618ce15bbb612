import random

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from pmsplit.crashcheck import TraceInterpreter
from pmsplit.errors import PmsplitError
from pmsplit.kfs import BLOCK_SIZE, mount
from pmsplit.pmem import PmemDevice
from pmsplit.usplit import Mode, ShadowFs, Usplit
from pmsplit.usplit.core import StagedRange, StagedSet
from pmsplit.usplit.log import ENTRY_SIZE, EntryFlag, LogEntry, Opcode
from pmsplit.usplit.script import ScriptOp, apply

from conftest import SMALL, new_fs

CAP = 4096
SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])

addr_len = st.integers(0, CAP - 1).flatmap(lambda a: st.tuples(st.just(a), st.integers(0, min(200, CAP - a))))
device_op = st.one_of(
    st.tuples(st.just("store"), addr_len, st.integers(0, 255)),
    st.tuples(st.just("store_nt"), addr_len, st.integers(0, 255)),
    st.tuples(st.just("flush"), addr_len, st.just(0)),
    st.tuples(st.just("fence"), st.just((0, 0)), st.just(0)),
)


def _drive(ops) -> tuple[PmemDevice, bytes]:
    dev = PmemDevice(CAP)
    base = dev.snapshot()
    for kind, (addr, n), byte in ops:
        if kind == "fence":
            dev.fence()
        elif kind == "flush":
            dev.flush(addr, n)
        else:
            getattr(dev, kind)(addr, bytes([byte]) * n)
    return dev, base


@SETTINGS
@given(st.lists(device_op, max_size=40))
def test_loads_return_latest_stores(ops):
    dev, _ = _drive(ops)
    model = bytearray(CAP)
    for kind, (addr, n), byte in ops:
        if kind.startswith("store"):
            model[addr : addr + n] = bytes([byte]) * n
    assert dev.load(0, CAP) == bytes(model)
    assert dev.snapshot("volatile") == bytes(model)


@SETTINGS
@given(st.lists(device_op, max_size=40), st.randoms(use_true_random=False))
def test_interpreter_matches_emulator_for_every_prefix_choice(ops, rnd):
    dev, base = _drive(ops)
    interp = TraceInterpreter(base)
    interp.run(dev.trace())
    assert interp.crash_image() == dev.crash_image()
    counts = interp.line_counts()
    assert counts == {line: len(gs) for line, gs in sorted(dev.dirty_lines().items())}
    choices = {line: rnd.randint(0, n) for line, n in counts.items()}
    assert interp.crash_image(choices) == dev.crash_image(choices)


@SETTINGS
@given(st.lists(device_op, max_size=40))
def test_crash_image_differs_only_on_pending_granules(ops):
    dev, _ = _drive(ops)
    pending = {a for gs in dev.dirty_lines().values() for g in gs for a in range(g.addr, g.addr + len(g.data))}
    persistent, volatile = dev.snapshot(), dev.snapshot("volatile")
    for i in range(CAP):
        if persistent[i] != volatile[i]:
            assert i in pending


@SETTINGS
@given(st.lists(device_op, max_size=40))
def test_stored_bytes_are_persisted_or_pending(ops):
    dev, _ = _drive(ops)
    c = dev.counters
    pending = sum(len(g.data) for gs in dev.dirty_lines().values() for g in gs)
    assert c.bytes_stored + c.bytes_stored_nt == c.bytes_persisted + pending
    dev.flush(0, CAP)
    dev.fence()
    assert not dev.has_pending()
    assert dev.snapshot() == dev.snapshot("volatile")


class _Staging:
    """Stand-in staging file; identity is all StagedSet looks at."""


@SETTINGS
@given(st.lists(st.tuples(st.integers(0, 300), st.integers(1, 80), st.booleans()), max_size=40))
def test_staged_set_matches_byte_model(writes):
    files = [_Staging(), _Staging()]
    staged = StagedSet()
    model: dict[int, tuple[int, int]] = {}  # target byte -> (staging file, staging byte)
    next_off = [0, 0]
    for off, n, second in writes:
        k = int(second)
        staged.insert(StagedRange(off, n, files[k], next_off[k], "append"))
        for i in range(n):
            model[off + i] = (k, next_off[k] + i)
        next_off[k] += n
    got = {}
    prev_end = -1
    for r in staged:
        assert r.length > 0 and r.target_off >= prev_end
        prev_end = r.end
        for i in range(r.length):
            got[r.target_off + i] = (files.index(r.staging), r.staging_off + i)
    assert got == model
    assert sum(r.length for r in staged.coalesced()) == len(model)
    lo, hi = 50, 150
    assert {
        b for r in staged.overlapping(lo, hi) for b in range(max(lo, r.target_off), min(hi, r.end))
    } == {b for b in model if lo <= b < hi}


u64 = st.integers(0, 2**64 - 1)


@SETTINGS
@given(st.sampled_from(list(Opcode)), u64, u64, u64, u64, u64, u64, st.booleans())
def test_log_entry_round_trip(op, t_ino, t_off, s_ino, s_off, size, seq, cont):
    e = LogEntry(op, t_ino, t_off, s_ino, s_off, size, seq, EntryFlag.CONT if cont else EntryFlag.NONE)
    raw = e.encode()
    assert len(raw) == ENTRY_SIZE
    assert LogEntry.decode(raw) == e


@SETTINGS
@given(st.integers(0, ENTRY_SIZE - 1), st.integers(1, 255))
def test_log_entry_rejects_any_single_byte_flip(pos, mask):
    raw = bytearray(LogEntry(Opcode.APPEND, 1, 2, 3, 4, 5, 6).encode())
    raw[pos] ^= mask
    assert LogEntry.decode(bytes(raw)) is None  # the checksum covers the padding too


kfs_op = st.one_of(
    st.tuples(st.just("create"), st.sampled_from("abcd")),
    st.tuples(st.just("unlink"), st.sampled_from("abcd")),
    st.tuples(st.just("rename"), st.sampled_from("abcd"), st.sampled_from("abcd")),
    st.tuples(st.just("write"), st.sampled_from("abcd"), st.integers(0, 6 * BLOCK_SIZE), st.integers(1, 3 * BLOCK_SIZE)),
    st.tuples(st.just("truncate"), st.sampled_from("abcd"), st.integers(0, 4 * BLOCK_SIZE)),
    st.tuples(st.just("relink"), st.sampled_from("abcd"), st.sampled_from("abcd"), st.integers(0, 3), st.integers(1, 9000)),
)


@SETTINGS
@given(st.lists(kfs_op, max_size=25))
def test_kfs_stays_consistent_under_random_operations(ops):
    fs = new_fs(2 << 20)
    for op in ops:
        try:
            kind = op[0]
            if kind == "create":
                fs.create(op[1])
            elif kind == "unlink":
                fs.unlink(op[1])
            elif kind == "rename":
                fs.rename(op[1], op[2])
            elif kind == "write":
                fs.write_direct(fs.lookup(op[1]), op[2], b"w" * op[3])
            elif kind == "truncate":
                fs.truncate(fs.lookup(op[1]), op[2])
            else:
                src, dst = fs.lookup(op[1]), fs.lookup(op[2])
                size = min(op[4], fs.stat(src).size)
                if src != dst and size:
                    fs.relink(src, 0, dst, op[3] * BLOCK_SIZE, size)
        except PmsplitError:
            pass
        assert fs.fsck() == []
    remounted = mount(PmemDevice.from_image(fs.device.crash_image()))
    assert remounted.fsck() == []
    assert sorted(remounted.listdir()) == sorted(fs.listdir())


def random_ops(rng: random.Random, n: int) -> list[ScriptOp]:
    names = ["a", "b", "c", "d"]
    kinds = ["open", "write", "read", "fsync", "close", "unlink", "rename"]
    ops = []
    for _ in range(n):
        k = rng.choices(kinds, [2, 8, 4, 2, 2, 1, 1])[0]
        fd = rng.randint(3, 6)
        if k == "open":
            ops.append(ScriptOp("open", name=rng.choice(names)))
        elif k == "write":
            off = rng.choice([None, rng.randint(0, 20000)])
            ops.append(ScriptOp("write", fd=fd, off=off, length=rng.choice([1, 7, 100, 4096, 5000, 8192]), seed=rng.getrandbits(30)))
        elif k == "read":
            ops.append(ScriptOp("read", fd=fd, off=rng.choice([None, rng.randint(0, 20000)]), length=rng.randint(0, 9000)))
        elif k in ("fsync", "close"):
            ops.append(ScriptOp(k, fd=fd))
        elif k == "unlink":
            ops.append(ScriptOp("unlink", name=rng.choice(names)))
        else:
            ops.append(ScriptOp("rename", name=rng.choice(names), new_name=rng.choice(names)))
    return ops


def run_equivalence(mode: Mode, ops: list[ScriptOp], capacity: int = 16 << 20) -> list[str]:
    """Apply ``ops`` to usplit and to the in-memory model; return any disagreements."""
    fs = new_fs(capacity)
    u = Usplit.init(fs, mode, SMALL)
    sh = ShadowFs()
    problems = []
    for i, op in enumerate(ops):
        a, b = apply(u, op), apply(sh, op)
        if (a.value, a.error) != (b.value, b.error):
            problems.append(f"op {i} {op}: {a.error or a.value!r:.40} vs {b.error or b.value!r:.40}")
    for name, data in sh.snapshot().items():
        fd = u.open(name)
        if u.pread(fd, len(data) + 10, 0) != data:
            problems.append(f"final contents of {name}")
        u.close(fd)
    if u.listdir() != sorted(sh.names):
        problems.append(f"names {u.listdir()} vs {sorted(sh.names)}")
    problems += fs.fsck()
    return problems


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(list(Mode)), st.integers(0, 2**32))
def test_usplit_matches_model_on_random_scripts(mode, seed):
    assert run_equivalence(mode, random_ops(random.Random(seed), 150)) == []
