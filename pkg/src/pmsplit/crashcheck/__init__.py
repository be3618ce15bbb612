"""Trace-driven crash-state generation and recovery checking."""

from .interp import TraceInterpreter, materialize
from .oracle import Expectation, Timeline, build_timeline
from .plans import ADVERSARIAL, POLICIES, STRICT_EPOCH, CrashPlan, enumerate_plans
from .runner import Recording, Report, check, crashcheck, replay_plan, run_recorded

__all__ = [
    "ADVERSARIAL",
    "POLICIES",
    "STRICT_EPOCH",
    "CrashPlan",
    "Expectation",
    "Recording",
    "Report",
    "Timeline",
    "TraceInterpreter",
    "build_timeline",
    "check",
    "crashcheck",
    "enumerate_plans",
    "materialize",
    "replay_plan",
    "run_recorded",
]
