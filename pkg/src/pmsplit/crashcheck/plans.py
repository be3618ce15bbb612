"""Crash points and per-line persistence choices.

Two policies:

* ``strict-epoch``: crash at the start, after every fence, and at the end of
  the trace; only fenced data survives.
* ``adversarial``: everything above, plus crashes just before every fence
  and at the end of the trace where each dirty cache line independently
  keeps any prefix of its pending 8-byte granules.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from ..pmem import EventKind, TraceEvent
from .interp import TraceInterpreter

STRICT_EPOCH = "strict-epoch"
ADVERSARIAL = "adversarial"
POLICIES = (STRICT_EPOCH, ADVERSARIAL)


@dataclass(frozen=True)
class CrashPlan:
    point: int  # number of trace events executed before the crash
    choices: tuple[tuple[int, int], ...] = ()  # (line address, granules of its pending prefix kept)

    def to_dict(self) -> dict:
        return {"point": self.point, "choices": [list(c) for c in self.choices]}

    @classmethod
    def from_dict(cls, d: dict) -> "CrashPlan":
        return cls(int(d["point"]), tuple((int(a), int(b)) for a, b in d.get("choices", ())))


def fence_points(trace: list[TraceEvent]) -> list[int]:
    return [i for i, ev in enumerate(trace) if ev.kind is EventKind.FENCE]


def strict_epoch_points(trace: list[TraceEvent]) -> list[int]:
    return sorted({0, len(trace), *(i + 1 for i in fence_points(trace))})


def adversarial_points(trace: list[TraceEvent]) -> list[int]:
    return sorted({*fence_points(trace), len(trace)})


def _space(counts: dict[int, int], cap: int) -> int:
    size = 1
    for c in counts.values():
        size *= c + 1
        if size > cap:
            return cap + 1
    return size


def enumerate_plans(
    base: bytes, trace: list[TraceEvent], policy: str, budget: int = 5000, seed: int = 0
) -> list[CrashPlan]:
    """Deterministic list of plans, sorted by crash point."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    plans = {CrashPlan(p) for p in strict_epoch_points(trace)}
    if policy == ADVERSARIAL:
        interp = TraceInterpreter(base)
        points = []
        for p in adversarial_points(trace):
            interp.advance(trace, p)
            counts = interp.line_counts()
            if counts:
                points.append((_space(counts, budget), p, counts))
        points.sort(key=lambda t: (t[0], t[1]))
        remaining = budget
        for i, (space, p, counts) in enumerate(points):
            share = remaining // (len(points) - i)
            lines = list(counts)
            if space <= share:
                for combo in itertools.product(*(range(counts[l] + 1) for l in lines)):
                    plans.add(CrashPlan(p, tuple((l, k) for l, k in zip(lines, combo) if k)))
                remaining -= space
            else:
                rng = random.Random(f"{seed}:{p}")
                for _ in range(share):
                    choice = tuple((l, k) for l in lines if (k := rng.randint(0, counts[l])))
                    plans.add(CrashPlan(p, choice))
                remaining -= share
    return sorted(plans, key=lambda pl: (pl.point, pl.choices))
