"""What a recovered file system may look like after a crash, per mode.

Two timelines are derived from the script alone, using the shadow model:

* the *visible* timeline ``V[k]``: every file's contents after ``k`` ops;
* the *durable* timeline ``D[k]``: what POSIX and sync modes promise to
  survive after ``k`` ops. Metadata operations and in-place overwrites are
  durable when they return; appended bytes become durable when the file is
  fsynced or its last descriptor is closed.

Strict mode must recover exactly ``V[C]`` or ``V[C+1]`` where ``C`` ops had
returned and one may have been in flight. POSIX and sync modes must recover
``D[C]`` or ``D[C+1]``; an in-flight in-place overwrite may additionally be
torn at 8-byte granules.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..usplit.core import Mode
from ..usplit.script import CUR, ScriptOp, apply, payload
from ..usplit.shadow import ShadowFile, ShadowFs

GRANULE = 8
State = dict[str, bytes]


def _name_of(sh: ShadowFs, f: ShadowFile) -> str | None:
    for name, g in sh.names.items():
        if g is f:
            return name
    return None


@dataclass
class Timeline:
    visible: list[State]
    durable: list[State]
    torn: list[bool]  # op k may tear when interrupted (in-place overwrite)

    def expectation(self, mode: Mode, completed: int, in_flight: bool) -> "Expectation":
        if mode is Mode.STRICT:
            states = self.visible
            torn = False
        else:
            states = self.durable
            torn = in_flight and self.torn[completed]
        after = states[completed + 1] if in_flight else None
        return Expectation(completed, in_flight, states[completed], after, torn)


def build_timeline(ops: list[ScriptOp]) -> Timeline:
    sh = ShadowFs()
    durable: dict[str, bytearray] = {}
    vis = [sh.snapshot()]
    dur = [{}]
    torn = []
    for op in ops:
        tear = False
        desc = sh.fds.get(op.fd) if op.fd is not None else None
        live = desc is not None and desc.file.alive
        name = _name_of(sh, desc.file) if live else None
        pos = None
        if op.kind == "write" and live:
            pos = desc.offset if op.off is CUR else op.off
        existed = op.name in sh.names if op.kind == "open" else False

        res = apply(sh, op)
        ok = res.error is None

        if ok and op.kind == "write" and op.length:
            dsize = len(durable[name])
            hi = min(pos + op.length, dsize)
            if pos < hi:
                durable[name][pos:hi] = payload(op.seed, op.length)[: hi - pos]
                tear = True
        elif ok and op.kind == "fsync":
            durable[name] = bytearray(desc.file.data)
        elif ok and op.kind == "close" and live and sh.open_count(desc.file) == 0:
            durable[name] = bytearray(desc.file.data)
        elif ok and op.kind == "open" and not existed:
            durable[op.name] = bytearray()
        elif ok and op.kind == "unlink":
            durable.pop(op.name)
        elif ok and op.kind == "rename" and op.name != op.new_name:
            durable.pop(op.new_name, None)
            durable[op.new_name] = durable.pop(op.name)

        vis.append(sh.snapshot())
        dur.append({k: bytes(v) for k, v in sorted(durable.items())})
        torn.append(tear)
    torn.append(False)
    return Timeline(vis, dur, torn)


def granule_mix(state: State, before: State, after: State) -> bool:
    """Every 8-byte granule of every file comes from ``before`` or from ``after``."""
    if set(state) != set(before) or set(before) != set(after):
        return False
    for name, got in state.items():
        a, b = before[name], after[name]
        if not len(got) == len(a) == len(b):
            return False
        for i in range(0, len(got), GRANULE):
            g = got[i : i + GRANULE]
            if g != a[i : i + GRANULE] and g != b[i : i + GRANULE]:
                return False
    return True


def describe_diff(got: State, want: State) -> str:
    if set(got) != set(want):
        return f"files {sorted(got)} != expected {sorted(want)}"
    for name in sorted(want):
        g, w = got[name], want[name]
        if g != w:
            if len(g) != len(w):
                return f"{name}: size {len(g)} != expected {len(w)}"
            first = next(i for i in range(len(g)) if g[i] != w[i])
            return f"{name}: first difference at byte {first}"
    return "identical"


@dataclass
class Expectation:
    completed: int
    in_flight: bool
    before: State
    after: State | None
    torn: bool

    @property
    def key(self) -> tuple:
        return (self.completed, self.in_flight)

    def allows(self, state: State) -> bool:
        if state == self.before:
            return True
        if self.after is None:
            return False
        if state == self.after:
            return True
        return self.torn and granule_mix(state, self.before, self.after)

    def explain(self, state: State) -> str:
        text = f"after {self.completed} ops: {describe_diff(state, self.before)}"
        if self.after is not None:
            text += f"; with op {self.completed} applied: {describe_diff(state, self.after)}"
        return text
