"""Granule-level trace interpreter.

This is a second, deliberately simple implementation of the persistence
model. It shares no state-tracking code with the device emulator, so the
checker can cross-validate the emulator's crash images against it.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from ..pmem import EventKind, TraceEvent

LINE = 64
WORD = 8


def _pieces(addr: int, data: bytes) -> list[tuple[int, bytes]]:
    out = []
    a, end = addr, addr + len(data)
    while a < end:
        b = min((a // WORD + 1) * WORD, end)
        out.append((a, data[a - addr : b - addr]))
        a = b
    return out


class TraceInterpreter:
    def __init__(self, base: bytes):
        self.image = bytearray(base)
        # line address -> pending granules in program order, each [addr, data, committed_to_media_at_fence]
        self.pending: dict[int, list[list]] = {}
        self.position = 0
        self.epoch = 0  # fences executed so far; identifies the persistent image

    def step(self, ev: TraceEvent) -> None:
        kind = ev.kind
        if kind is EventKind.STORE or kind is EventKind.STORE_NT:
            nt = kind is EventKind.STORE_NT
            pieces = _pieces(ev.addr, ev.data)
            if nt:
                for line in {a - a % LINE for a, _ in pieces}:
                    for g in self.pending.get(line, ()):
                        g[2] = True
            for a, d in pieces:
                self.pending.setdefault(a - a % LINE, []).append([a, d, nt])
        elif kind is EventKind.FLUSH:
            for g in self.pending.get(ev.addr - ev.addr % LINE, ()):
                g[2] = True
        else:
            for line in list(self.pending):
                keep = []
                for g in self.pending[line]:
                    if g[2]:
                        a, d = g[0], g[1]
                        self.image[a : a + len(d)] = d
                    else:
                        keep.append(g)
                if keep:
                    self.pending[line] = keep
                else:
                    del self.pending[line]
            self.epoch += 1
        self.position += 1

    def run(self, events: Iterable[TraceEvent]) -> None:
        for ev in events:
            self.step(ev)

    def advance(self, trace: list[TraceEvent], point: int) -> None:
        """Execute trace events until ``point`` events have been applied."""
        if point < self.position:
            raise ValueError("interpreter cannot move backwards")
        for ev in trace[self.position : point]:
            self.step(ev)

    def line_counts(self) -> dict[int, int]:
        return {line: len(gs) for line, gs in sorted(self.pending.items())}

    def delta(self, choices: Mapping[int, int] | Iterable[tuple[int, int]] = ()) -> dict[int, bytes]:
        """Words that the chosen pending prefixes change, keyed by word address."""
        items = choices.items() if isinstance(choices, Mapping) else choices
        img = self.image
        words: dict[int, bytearray] = {}
        for line, count in items:
            for a, d, _ in self.pending.get(line, ())[:count]:
                w = a - a % WORD
                buf = words.get(w)
                if buf is None:
                    buf = words[w] = bytearray(img[w : w + WORD])
                buf[a - w : a - w + len(d)] = d
        return {w: bytes(b) for w, b in words.items() if img[w : w + WORD] != b}

    def crash_image(self, choices: Mapping[int, int] | Iterable[tuple[int, int]] = ()) -> bytearray:
        return self.image_with(self.delta(choices))

    def image_with(self, delta: Mapping[int, bytes]) -> bytearray:
        img = bytearray(self.image)
        for w, d in delta.items():
            img[w : w + WORD] = d
        return img


def materialize(base: bytes, trace: list[TraceEvent], point: int, choices=()) -> bytes:
    interp = TraceInterpreter(base)
    interp.advance(trace, point)
    return interp.crash_image(choices)
