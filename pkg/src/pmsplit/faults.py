"""Deliberate persistence bugs, used to check that the crash checker notices them."""

from contextlib import contextmanager

SKIP_JOURNAL_COMMIT = "skip_journal_commit"
SKIP_LOG_FENCE = "skip_log_fence"
SKIP_RELINK_DEALLOC = "skip_relink_dealloc"
ALL = (SKIP_JOURNAL_COMMIT, SKIP_LOG_FENCE, SKIP_RELINK_DEALLOC)

_active: set[str] = set()


def active(fault: str) -> bool:
    return fault in _active


def inject(fault: str) -> None:
    if fault not in ALL:
        raise ValueError(f"unknown fault {fault!r}; expected one of {ALL}")
    _active.add(fault)


def clear(fault: str | None = None) -> None:
    if fault is None:
        _active.clear()
    else:
        _active.discard(fault)


@contextmanager
def injected(fault: str):
    inject(fault)
    try:
        yield
    finally:
        clear(fault)
