"""edgesched command line: trace generation, simulation runs, matrix checks."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .calendar import ConfigurationError
from .config import ALGORITHMS, NOISE_MODES, ScenarioConfig
from .engine import InvariantViolation, Simulation
from .experiments import (MATRICES, label_for, load_reports, run_matrix, seeded, summarize,
                          verify, write_report)
from .metrics import render_csv, render_table
from .trace import KINDS, TraceError, generate, load, save, stats_json

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _default_seed() -> int:
    raw = os.environ.get("EDGESCHED_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"EDGESCHED_SEED must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgesched",
        description="Simulate priority- and deadline-constrained DNN task offloading "
                    "on a small edge network.")
    sub = parser.add_subparsers(dest="command", required=True)

    trace = sub.add_parser("trace", help="trace file utilities")
    trace_sub = trace.add_subparsers(dest="trace_command", required=True)
    gen = trace_sub.add_parser("gen", help="generate a workload trace")
    gen.add_argument("--kind", required=True, choices=KINDS)
    gen.add_argument("--frames", type=int, default=1296)
    gen.add_argument("--seed", type=int, default=None,
                     help="generator seed (default: $EDGESCHED_SEED or 0)")
    gen.add_argument("-o", "--output", required=True, type=Path, help="trace CSV path")

    run = sub.add_parser("run", help="run one scenario or an experiment matrix")
    source = run.add_mutually_exclusive_group()
    source.add_argument("--trace", type=Path, help="trace CSV to replay")
    source.add_argument("--gen", choices=KINDS, help="generate a trace of this kind")
    source.add_argument("--matrix", choices=sorted(MATRICES), help="run a labelled matrix")
    run.add_argument("--trace-dir", type=Path,
                     help="matrix traces as <kind>.csv (default: generate them)")
    run.add_argument("--frames", type=int, default=1296, help="frames for generated traces")
    run.add_argument("--algo", choices=ALGORITHMS)
    run.add_argument("--preemption", choices=("on", "off"))
    run.add_argument("--noise", choices=NOISE_MODES)
    run.add_argument("--config", type=Path, help="JSON file of ScenarioConfig fields")
    run.add_argument("--seed", type=int, default=None,
                     help="seed for trace generation, staggering, noise and polling "
                          "(default: $EDGESCHED_SEED or 0)")
    run.add_argument("--reps", type=int, default=1,
                     help="repetitions varying stagger/noise/poll seeds")
    run.add_argument("--jobs", type=int, default=1, help="parallel matrix cells")
    run.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    run.add_argument("--format", choices=("table", "json", "csv", "none"), default="table",
                     help="summary printed to stdout")

    ver = sub.add_parser("verify", help="check result orderings across matrix reports")
    ver.add_argument("out_dir", type=Path)
    return parser


def _config(args) -> ScenarioConfig:
    config = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.algo:
        changes["algorithm"] = args.algo
    if args.preemption:
        changes["preemption"] = args.preemption == "on"
    if args.noise:
        changes["noise"] = args.noise
    return config.with_(**changes)


def cmd_trace_gen(args) -> int:
    seed = _default_seed() if args.seed is None else args.seed
    if args.frames < 0:
        print("error: --frames must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    trace = generate(args.kind, args.frames, seed)
    try:
        save(trace, args.output)
        args.output.with_suffix(".stats.json").write_text(stats_json(trace) + "\n")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(stats_json(trace))
    return EXIT_OK


def _print_summary(reports: dict, fmt: str) -> None:
    if fmt == "table":
        print(render_table(reports), end="")
    elif fmt == "csv":
        print(render_csv(reports), end="")
    elif fmt == "json":
        print(json.dumps({k: v.deterministic_dict() for k, v in reports.items()},
                         sort_keys=True, indent=2))


def _dump_violation(exc: InvariantViolation, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "events.log"
    path.write_text("".join(f"{e!r}\n" for e in exc.recent_events))
    print(f"invariant violation: {exc}\nrecent events written to {path}", file=sys.stderr)


def _run_single(args, config: ScenarioConfig, seed: int) -> dict:
    if args.trace is not None:
        trace = load(args.trace)
        if config.scenario == "custom" and "scenario" in trace.metadata:
            config = config.with_(scenario=trace.metadata["scenario"])
    else:
        trace = generate(args.gen, args.frames, seed)
        config = config.with_(scenario=args.gen)
    label = label_for(config)
    runs = [Simulation(seeded(config, seed + i), trace).run() for i in range(args.reps)]
    target = args.out
    if args.reps == 1:
        write_report(runs[0], target, label)
    else:
        for i, report in enumerate(runs):
            write_report(report, target / f"rep_{i}", label)
        target.mkdir(parents=True, exist_ok=True)
        (target / "report.json").write_text(
            json.dumps(summarize(runs), sort_keys=True, indent=2) + "\n")
        (target / "report.csv").write_text(render_csv({f"{label}#{i}": r for i, r in enumerate(runs)}))
    return {label: runs[0]} if args.reps == 1 else {f"{label}#{i}": r for i, r in enumerate(runs)}


def cmd_run(args) -> int:
    seed = _default_seed() if args.seed is None else args.seed
    if args.reps < 1 or args.jobs < 1:
        print("error: --reps and --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.matrix is None and args.trace is None and args.gen is None:
        print("error: one of --trace, --gen or --matrix is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        config = _config(args).validate()
        if args.matrix is not None:
            if args.reps != 1:
                print("error: --reps is not supported with --matrix", file=sys.stderr)
                return EXIT_USAGE
            reports = run_matrix(config, MATRICES[args.matrix], args.trace_dir, args.frames,
                                 seed, args.jobs)
            for label, report in reports.items():
                write_report(report, args.out / label, label)
            (args.out / "matrix.csv").write_text(render_csv(reports))
        else:
            reports = _run_single(args, config, seed)
    except InvariantViolation as exc:
        _dump_violation(exc, args.out)
        return EXIT_FAIL
    except (ConfigurationError, TraceError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _print_summary(reports, args.format)
    return EXIT_OK


def cmd_verify(args) -> int:
    if not args.out_dir.is_dir():
        print(f"error: no such directory {args.out_dir}", file=sys.stderr)
        return EXIT_FAIL
    reports = load_reports(args.out_dir)
    if not reports:
        print(f"error: no */report.json under {args.out_dir}", file=sys.stderr)
        return EXIT_FAIL
    rows = verify(reports)
    width = max(len(status) for status, _ in rows)
    for status, name in rows:
        print(f"{status:<{width}}  {name}")
    return EXIT_FAIL if any(status == "FAIL" for status, _ in rows) else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "trace":
        return cmd_trace_gen(args)
    if args.command == "run":
        return cmd_run(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
