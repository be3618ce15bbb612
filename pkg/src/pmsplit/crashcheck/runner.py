"""Record a workload, generate crash states, recover each one, and judge it."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterable

from .. import faults as fault_mod
from ..errors import PmsplitError
from ..kfs import Geometry, mkfs, mount
from ..kfs.fs import Kfs
from ..pmem import PmemDevice, TraceEvent
from ..usplit.core import INTERNAL_PREFIX, Config, Mode, Usplit, recover_fs
from ..usplit.script import ScriptOp, apply
from ..usplit.shadow import ShadowFs
from .interp import TraceInterpreter
from .oracle import Expectation, State, Timeline, build_timeline
from .plans import ADVERSARIAL, CrashPlan, enumerate_plans

# small enough that a recovery check costs about a millisecond
CHECK_CAPACITY = 1 << 20
CHECK_GEOMETRY = dict(journal_blocks=16, inode_table_blocks=1, namespace_blocks=1)
CHECK_CONFIG = Config(map_size=64 << 10, staging_count=2, staging_size=64 << 10, log_size=8 << 10)


@dataclass
class Recording:
    ops: list[ScriptOp]
    mode: Mode
    base: bytes
    trace: list[TraceEvent]
    spans: list[tuple[int, int]]  # trace [start, end) of each op
    timeline: Timeline
    mismatches: list[str] = field(default_factory=list)
    final_image: bytes = b""

    def expectation(self, point: int) -> Expectation:
        completed = 0
        in_flight = False
        for start, end in self.spans:
            if end <= point:
                completed += 1
            else:
                in_flight = start < point
                break
        return self.timeline.expectation(self.mode, completed, in_flight)


def run_recorded(
    ops: list[ScriptOp],
    mode: Mode | str,
    config: Config = CHECK_CONFIG,
    capacity: int = CHECK_CAPACITY,
    inject: Iterable[str] = (),
) -> Recording:
    """Run ``ops`` on a fresh file system, tracing every device event after setup."""
    mode = Mode(mode)
    dev = PmemDevice(capacity)
    mkfs(dev, Geometry.for_capacity(capacity, **CHECK_GEOMETRY))
    fs = mount(dev)
    u = Usplit.init(fs, mode, config)
    dev.fence()
    base = dev.snapshot()
    dev.reset_trace()

    shadow = ShadowFs()
    spans = []
    mismatches = []
    for f in inject:
        fault_mod.inject(f)
    try:
        for i, op in enumerate(ops):
            start = dev.trace_len
            got = apply(u, op)
            spans.append((start, dev.trace_len))
            want = apply(shadow, op)
            if (got.value, got.error) != (want.value, want.error):
                mismatches.append(f"op {i} ({op}): got {got.error or _short(got.value)}, model {want.error or _short(want.value)}")
    finally:
        for f in inject:
            fault_mod.clear(f)
    return Recording(ops, mode, base, dev.trace(), spans, build_timeline(ops), mismatches, dev.snapshot())


def _short(value) -> str:
    if isinstance(value, bytes):
        return f"{len(value)} bytes"
    return repr(value)


def user_state(fs: Kfs) -> State:
    out = {}
    for name in fs.listdir():
        if name.startswith(INTERNAL_PREFIX):
            continue
        ino = fs.names[name]
        inode = fs.inodes.get(ino)
        if inode is None:  # dangling name; fsck reports it
            continue
        out[name] = fs.read_direct(ino, 0, inode.size)
    return out


@dataclass
class CheckResult:
    violations: list[tuple[str, str]]  # (guarantee, detail)
    entries_replayed: int = 0
    seconds: float = 0.0


def check(image: bytes, expectation: Expectation, mode: Mode) -> CheckResult:
    """Mount a crash image, recover it, and judge structure and contents."""
    t0 = time.perf_counter()
    dev = PmemDevice.from_image(image)
    try:
        fs = mount(dev)
    except PmsplitError as exc:
        return CheckResult([("mountable", str(exc))], 0, time.perf_counter() - t0)
    try:
        fs, stats = recover_fs(fs)
    except Exception as exc:  # any crash in recovery is a finding, not a checker error
        return CheckResult([("recoverable", f"{type(exc).__name__}: {exc}")], 0, time.perf_counter() - t0)
    violations = [("metadata-consistency", p) for p in fs.fsck()]
    try:
        state = user_state(fs)
    except Exception as exc:
        violations.append(("readable", f"{type(exc).__name__}: {exc}"))
        return CheckResult(violations, stats.entries_replayed, time.perf_counter() - t0)
    if not expectation.allows(state):
        violations.append((f"{mode.value}-guarantee", expectation.explain(state)))
    return CheckResult(violations, stats.entries_replayed, time.perf_counter() - t0)


@dataclass
class Violation:
    plan: CrashPlan
    guarantee: str
    detail: str

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "guarantee": self.guarantee, "detail": self.detail}


@dataclass
class Report:
    script: str
    mode: str
    policy: str
    budget: int
    seed: int
    faults: list[str]
    states_checked: int = 0
    distinct_images: int = 0
    entries_replayed: int = 0
    violations: list[Violation] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "script": self.script,
            "mode": self.mode,
            "policy": self.policy,
            "budget": self.budget,
            "seed": self.seed,
            "faults": self.faults,
            "states_checked": self.states_checked,
            "distinct_images": self.distinct_images,
            "entries_replayed": self.entries_replayed,
            "violations": [v.to_dict() for v in self.violations],
        }
        if timing:
            d["seconds"] = round(self.seconds, 3)
        return d

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True)


def check_plans(rec: Recording, plans: list[CrashPlan], report: Report, max_violations: int = 50) -> None:
    """Materialize and check plans in crash-point order, caching identical outcomes."""
    interp = TraceInterpreter(rec.base)
    cache: dict[tuple, CheckResult] = {}
    images = set()
    for plan in plans:
        interp.advance(rec.trace, plan.point)
        exp = rec.expectation(plan.point)
        # the persistent image only changes at fences, so (epoch, changed words) identifies the crash image
        delta = interp.delta(plan.choices)
        ident = (interp.epoch, tuple(sorted(delta.items())))
        images.add(ident)
        key = (ident, exp.key)
        result = cache.get(key)
        if result is None:
            result = cache[key] = check(interp.image_with(delta), exp, rec.mode)
            report.entries_replayed += result.entries_replayed
        report.states_checked += 1
        for guarantee, detail in result.violations:
            if len(report.violations) < max_violations:
                report.violations.append(Violation(plan, guarantee, detail))
    report.distinct_images = len(images)


def crashcheck(
    ops: list[ScriptOp],
    mode: Mode | str,
    policy: str = ADVERSARIAL,
    budget: int = 5000,
    seed: int = 0,
    inject: Iterable[str] = (),
    script_name: str = "<script>",
) -> Report:
    t0 = time.perf_counter()
    mode = Mode(mode)
    inject = list(inject)
    rec = run_recorded(ops, mode, inject=inject)
    report = Report(script_name, mode.value, policy, budget, seed, inject)
    for m in rec.mismatches:
        report.violations.append(Violation(CrashPlan(len(rec.trace)), "equivalence", m))
    plans = enumerate_plans(rec.base, rec.trace, policy, budget, seed)
    check_plans(rec, plans, report)
    report.seconds = time.perf_counter() - t0
    return report


def replay_plan(
    ops: list[ScriptOp], mode: Mode | str, plan: CrashPlan, inject: Iterable[str] = ()
) -> CheckResult:
    """Re-run one recorded crash plan, e.g. from a saved violation."""
    rec = run_recorded(ops, Mode(mode), inject=list(inject))
    interp = TraceInterpreter(rec.base)
    interp.advance(rec.trace, plan.point)
    return check(interp.crash_image(plan.choices), rec.expectation(plan.point), rec.mode)
