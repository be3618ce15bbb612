"""``bench`` command line: run, compare, crashcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import faults
from .bench import ENGINES, WORKLOADS, BenchConfig, compare, emit, run
from .crashcheck import POLICIES, CrashPlan, crashcheck, replay_plan
from .usplit import script as script_mod

SCRIPT_DIR = Path(__file__).parent / "scripts"


def _size(text: str) -> int:
    units = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}
    t = text.strip().upper().removesuffix("B")
    if t and t[-1] in units:
        return int(t[:-1]) * units[t[-1]]
    return int(t)


def _add_bench_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workload", required=True, help=f"one of {', '.join(WORKLOADS)}, or script:<path>")
    p.add_argument("--file-size", type=_size, default=32 << 20, help="working set, e.g. 32M (default 32M)")
    p.add_argument("--op-size", type=_size, default=4096)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--latency-ns-per-byte", type=float, default=0.0, help="modeled device cost, reported only")
    p.add_argument("--format", choices=("json", "csv"), default=None, help="default: from --out suffix, else json")
    p.add_argument("--out", default=None, help="write results here instead of stdout")


def _config(args, engine: str) -> BenchConfig:
    return BenchConfig(
        engine=engine,
        workload=args.workload,
        file_size=args.file_size,
        op_size=args.op_size,
        iterations=args.iterations,
        seed=args.seed,
        latency_ns_per_byte=args.latency_ns_per_byte,
    )


def _emit(rows: list[dict], args) -> None:
    fmt = args.format or ("csv" if args.out and args.out.endswith(".csv") else "json")
    text = emit(rows, fmt, args.out)
    if args.out is None:
        sys.stdout.write(text)


def _resolve_script(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = SCRIPT_DIR / (name if name.endswith(".script") else f"{name}.script")
    if bundled.exists():
        return bundled
    raise SystemExit(f"bench: no such script: {name}")


def _load_plan(path: str) -> CrashPlan:
    """A plan from a saved violation, a bare plan, or a report (its first violation)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read plan from {path}: {exc}") from None
    if "violations" in doc:
        if not doc["violations"]:
            raise ValueError(f"{path} records no violations")
        doc = doc["violations"][0]
    try:
        return CrashPlan.from_dict(doc.get("plan", doc))
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"{path} does not hold a crash plan") from None


def cmd_run(args) -> int:
    _emit([run(_config(args, args.engine)).row()], args)
    return 0


def cmd_compare(args) -> int:
    engines = args.engines or list(ENGINES)
    _emit(compare([_config(args, e) for e in engines], repeat=args.repeat), args)
    return 0


def cmd_crashcheck(args) -> int:
    path = _resolve_script(args.script)
    ops = script_mod.load(path)
    if args.replay_plan:
        plan = _load_plan(args.replay_plan)
        result = replay_plan(ops, args.mode, plan, inject=args.inject)
        out = {"plan": plan.to_dict(), "violations": [{"guarantee": g, "detail": d} for g, d in result.violations]}
        print(json.dumps(out, indent=2, sort_keys=True))
        return 1 if result.violations else 0
    report = crashcheck(ops, args.mode, args.policy, args.budget, args.seed, inject=args.inject, script_name=path.name)
    text = report.to_json(timing=args.timing)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if not args.out or args.verbose:
        status = "ok" if report.ok else f"{len(report.violations)} violation(s)"
        print(f"{path.name} {args.mode} {args.policy}: {report.states_checked} states, {status}", file=sys.stderr)
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Persistent-memory file system benchmarks and crash checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one engine on one workload")
    p.add_argument("--engine", required=True, choices=ENGINES)
    _add_bench_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several engines; throughput normalized to the first")
    p.add_argument("--engines", nargs="+", choices=ENGINES, default=None, help="default: all engines")
    p.add_argument("--repeat", type=int, default=1, help="keep the fastest of N runs per engine")
    _add_bench_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("crashcheck", help="explore crash states of a script and check recovery")
    p.add_argument("--script", required=True, help="script path or bundled script name")
    p.add_argument("--mode", choices=("posix", "sync", "strict"), default="strict")
    p.add_argument("--policy", choices=POLICIES, default="adversarial")
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject", action="append", default=[], choices=faults.ALL, help="enable a deliberate bug")
    p.add_argument("--replay-plan", default=None, help="re-run one crash plan: a saved report (first violation), a violation, or a bare plan")
    p.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_crashcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
