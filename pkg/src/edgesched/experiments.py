"""Experiment matrix, repetitions and ordering checks over finished reports."""

from __future__ import annotations

import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .config import ScenarioConfig
from .engine import Simulation
from .metrics import MetricsReport, render_csv, render_json
from .trace import TraceFile, generate, load


@dataclass(frozen=True)
class Cell:
    label: str
    scenario: str
    algorithm: str
    preemption: bool


def _sched(label, kind, pre):
    return Cell(label, kind, "scheduler", pre)


PAPER_MATRIX = (
    _sched("UPS", "uniform", True),
    _sched("UNPS", "uniform", False),
    _sched("WPS_4", "weighted4", True),
    _sched("WNPS_4", "weighted4", False),
    Cell("DPW", "weighted4", "decentralized_ws", True),
    Cell("DNPW", "weighted4", "decentralized_ws", False),
    Cell("CPW", "weighted4", "centralized_ws", True),
    Cell("CNPW", "weighted4", "centralized_ws", False),
)

FULL_MATRIX = PAPER_MATRIX + tuple(
    _sched(f"W{'' if pre else 'N'}PS_{x}", f"weighted{x}", pre)
    for x in (1, 2, 3) for pre in (True, False))

MATRICES = {"paper": PAPER_MATRIX, "full": FULL_MATRIX}


def label_for(config: ScenarioConfig) -> str:
    for cell in FULL_MATRIX:
        if (cell.scenario, cell.algorithm, cell.preemption) == (
                config.scenario, config.algorithm, config.preemption):
            return cell.label
    return config.label.replace("/", "_")


def seeded(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    return config.with_(stagger_seed=seed, noise_seed=seed, ws_seed=seed)


def trace_for(kind: str, trace_dir: Optional[Path], frames: int, seed: int) -> TraceFile:
    if trace_dir is None:
        return generate(kind, frames, seed)
    path = Path(trace_dir) / f"{kind}.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing trace {path}")
    return load(path)


def _run_cell(args) -> tuple[str, MetricsReport]:
    label, config, trace = args
    return label, Simulation(config, trace).run()


def run_matrix(base: ScenarioConfig, cells=PAPER_MATRIX, trace_dir=None, frames: int = 1296,
               seed: int = 0, jobs: int = 1) -> dict[str, MetricsReport]:
    traces: dict[str, TraceFile] = {}
    work = []
    for cell in cells:
        if cell.scenario not in traces:
            traces[cell.scenario] = trace_for(cell.scenario, trace_dir, frames, seed)
        config = seeded(base, seed).with_(scenario=cell.scenario, algorithm=cell.algorithm,
                                          preemption=cell.preemption)
        work.append((cell.label, config, traces[cell.scenario]))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, work))
    else:
        results = [_run_cell(w) for w in work]
    return dict(results)


def summarize(reports: list[MetricsReport]) -> dict:
    """Mean and population stddev of every numeric field across repetitions."""
    rows = [r.deterministic_dict() for r in reports]
    out = {"reps": len(rows), "mean": {}, "stddev": {}}
    for key in sorted(rows[0]):
        values = [row[key] for row in rows]
        if all(isinstance(v, dict) for v in values):
            out["mean"][key] = {k: statistics.fmean(v[k] for v in values) for k in values[0]}
            out["stddev"][key] = {k: statistics.pstdev([v[k] for v in values]) for k in values[0]}
        elif all(_numeric(v) for v in values):
            out["mean"][key] = statistics.fmean(values)
            out["stddev"][key] = statistics.pstdev(values)
    return out


def _numeric(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def write_report(report: MetricsReport, out_dir: Path, label: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(render_json(report))
    (out_dir / "report.csv").write_text(render_csv({label: report}))
    (out_dir / "latency.json").write_text(json.dumps(report.latency, sort_keys=True, indent=2) + "\n")


def load_reports(out_dir: Path) -> dict[str, dict]:
    reports = {}
    for path in sorted(Path(out_dir).glob("*/report.json")):
        data = json.loads(path.read_text())
        if "mean" in data and "reps" in data:
            data = data["mean"]
        reports[path.parent.name] = data
    return reports


# -- ordering checks -----------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    needs: tuple
    test: Callable[[dict], bool]


def _f(r, label, key):
    return r[label][key]


def _frame_gap(pre: str, nopre: str, strict: bool) -> Check:
    def test(r):
        a, b = _f(r, pre, "frame_completion_rate"), _f(r, nopre, "frame_completion_rate")
        return a > b if strict else a >= b
    op = ">" if strict else ">="
    return Check(f"frame completion {pre} {op} {nopre}", (pre, nopre), test)


def _chain(labels: tuple) -> Check:
    def test(r):
        rates = [_f(r, lab, "frame_completion_rate") for lab in labels]
        return all(x > y for x, y in zip(rates, rates[1:]))
    return Check("frame completion " + " > ".join(labels), labels, test)


CHECKS = (
    Check("HP completion WPS_4 == 100%", ("WPS_4",),
          lambda r: _f(r, "WPS_4", "hp_completion_rate") == 1.0),
    Check("HP completion WNPS_4 <= 85%", ("WNPS_4",),
          lambda r: _f(r, "WNPS_4", "hp_completion_rate") <= 0.85),
    Check("HP completion UPS >= UNPS", ("UPS", "UNPS"),
          lambda r: _f(r, "UPS", "hp_completion_rate") >= _f(r, "UNPS", "hp_completion_rate")),
    _frame_gap("UPS", "UNPS", False),
    _frame_gap("WPS_1", "WNPS_1", False),
    _frame_gap("WPS_2", "WNPS_2", False),
    _frame_gap("WPS_3", "WNPS_3", True),
    _frame_gap("WPS_4", "WNPS_4", True),
    _chain(("WPS_4", "CPW", "DPW")),
    _chain(("WNPS_4", "CNPW", "DNPW")),
    Check("per-request completion UNPS > UPS", ("UPS", "UNPS"),
          lambda r: _f(r, "UNPS", "per_request_completion_mean")
          > _f(r, "UPS", "per_request_completion_mean")),
    Check("realloc success rate < 2% (weighted, scheduler)", ("WPS_4",),
          lambda r: all((_f(r, lab, "realloc_success_rate") or 0.0) < 0.02
                        for lab in ("WPS_1", "WPS_2", "WPS_3", "WPS_4") if lab in r)),
    Check("4-core share of preemptions > 4-core share of allocations (WPS_4)", ("WPS_4",),
          lambda r: _preempt_skew(r["WPS_4"])),
)


def _preempt_skew(report: dict) -> bool:
    pre = report["preempted_by_config"]
    hist = report["core_allocation_histogram"]
    total_pre = pre["2"] + pre["4"]
    total_alloc = sum(hist.values())
    if total_pre == 0 or total_alloc == 0:
        return False
    return pre["4"] / total_pre > (hist["local_4"] + hist["offloaded_4"]) / total_alloc


def verify(reports: dict[str, dict]) -> list[tuple[str, str]]:
    """Return (status, check name) rows; status is pass, FAIL or insufficient data."""
    rows = []
    for check in CHECKS:
        if not all(label in reports for label in check.needs):
            rows.append(("insufficient data", check.name))
            continue
        try:
            ok = check.test(reports)
        except (KeyError, TypeError):
            ok = False
        rows.append(("pass" if ok else "FAIL", check.name))
    return rows

