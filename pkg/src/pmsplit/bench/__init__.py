"""Benchmark harness: engines, workloads, and counter-based results."""

from .engines import ENGINES, DaxFs, Engine, device_size_from_env, make_engine
from .runner import WORKLOADS, BenchConfig, BenchResult, compare, emit, run, threaded_append

__all__ = [
    "ENGINES",
    "WORKLOADS",
    "BenchConfig",
    "BenchResult",
    "DaxFs",
    "Engine",
    "compare",
    "device_size_from_env",
    "emit",
    "make_engine",
    "run",
    "threaded_append",
]
