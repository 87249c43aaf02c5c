"""Run measurements: event-driven counters, the final report, renderers."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import asdict, dataclass, field
from typing import Optional

EVENT_TYPES = frozenset({
    "frame_generated", "frame_completed", "detector_done",
    "hp_generated", "hp_completed", "hp_failed",
    "lp_request", "lp_allocated", "lp_completed", "lp_failed",
    "preemption", "realloc", "violation", "latency",
})

LATENCY_KINDS = ("hp_initial", "hp_preemption", "lp_set", "realloc", "steal_to_start")

# Experiment labels in the order they are reported.
LEGEND = {
    "UPS": "Uniform Scheduler Preemption",
    "UNPS": "Uniform Scheduler Non-Preemption",
    "WPS_N": "Weighted N (1 .. 4) - Preemption Scheduler",
    "WNPS_4": "Weighted 4 - Non-Preemption Scheduler",
    "DPW": "Weighted 4 - Decentralised Preemption Workstealer",
    "DNPW": "Weighted 4 - Decentralised Non-Preemption Workstealer",
    "CPW": "Weighted 4 - Centralised Preemption Workstealer",
    "CNPW": "Weighted 4 - Centralised Non-Preemption Workstealer",
}


@dataclass(frozen=True)
class Event:
    id: str
    type: str
    time: int = 0
    data: dict = field(default_factory=dict, compare=False, hash=False)


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def _summary(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "p50": None, "p95": None}
    ordered = sorted(values)
    p95 = ordered[min(len(ordered) - 1, int(round(0.95 * (len(ordered) - 1))))]
    return {"count": len(values), "mean": statistics.fmean(values),
            "p50": statistics.median(ordered), "p95": p95}


@dataclass
class MetricsReport:
    scenario: str = ""
    algorithm: str = ""
    preemption: bool = False
    frames_total: int = 0
    frames_completed: int = 0
    hp_generated: int = 0
    hp_completed: int = 0
    hp_completed_via_preemption: int = 0
    lp_requests: int = 0
    lp_requests_completed: int = 0
    lp_generated: int = 0
    lp_completed: int = 0
    lp_offloaded_generated: int = 0
    lp_offloaded_completed: int = 0
    per_request_completion_mean: Optional[float] = None
    preempted_by_config: dict = field(default_factory=lambda: {"2": 0, "4": 0})
    preemptions: int = 0
    realloc_success: int = 0
    realloc_failure: int = 0
    realloc_comparable: bool = True
    core_allocation_histogram: dict = field(default_factory=lambda: {
        "local_2": 0, "local_4": 0, "offloaded_2": 0, "offloaded_4": 0})
    violations: int = 0
    frame_completion_rate: Optional[float] = None
    hp_completion_rate: Optional[float] = None
    lp_completion_rate: Optional[float] = None
    offloaded_completion_rate: Optional[float] = None
    realloc_success_rate: Optional[float] = None
    frames_completed_reconstructed: int = 0
    # host wall-clock; excluded from the deterministic JSON rendering
    latency: dict = field(default_factory=dict)

    def deterministic_dict(self) -> dict:
        d = asdict(self)
        d.pop("latency")
        return d


class MetricsCollector:
    """Counts lifecycle events exactly once per event id."""

    def __init__(self, scenario: str = "", algorithm: str = "", preemption: bool = False):
        self.report = MetricsReport(scenario=scenario, algorithm=algorithm, preemption=preemption)
        self._seen: set[str] = set()
        self._request_sizes: dict[int, int] = {}
        self._request_done: dict[int, int] = {}
        self._frame_shape: dict[int, int] = {}
        self._frame_request: dict[int, int] = {}
        self._frame_stages: dict[int, set[str]] = {}
        self._latency: dict[str, list[float]] = {k: [] for k in LATENCY_KINDS}

    def record(self, event: Event) -> None:
        if event.type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {event.type!r}")
        if event.id in self._seen:
            return
        self._seen.add(event.id)
        r, d = self.report, event.data
        kind = event.type
        if kind == "frame_generated":
            r.frames_total += 1
            self._frame_shape[d["frame"]] = d["trace_value"]
        elif kind == "frame_completed":
            r.frames_completed += 1
        elif kind == "detector_done":
            self._frame_stages.setdefault(d["frame"], set()).add("detector")
        elif kind == "hp_generated":
            r.hp_generated += 1
        elif kind == "hp_completed":
            r.hp_completed += 1
            if d.get("via_preemption"):
                r.hp_completed_via_preemption += 1
            self._frame_stages.setdefault(d["frame"], set()).add("hp")
        elif kind == "hp_failed":
            pass
        elif kind == "lp_request":
            r.lp_requests += 1
            r.lp_generated += d["size"]
            self._request_sizes[d["request"]] = d["size"]
            self._request_done[d["request"]] = 0
            self._frame_request[d["frame"]] = d["request"]
        elif kind == "lp_allocated":
            where = "offloaded" if d["offloaded"] else "local"
            r.core_allocation_histogram[f"{where}_{d['cores']}"] += 1
        elif kind == "lp_completed":
            r.lp_completed += 1
            if d["offloaded"]:
                r.lp_offloaded_completed += 1
            self._request_done[d["request"]] += 1
        elif kind == "lp_failed":
            pass
        elif kind == "preemption":
            r.preemptions += 1
            r.preempted_by_config[str(d["cores"])] += 1
        elif kind == "realloc":
            if d["success"]:
                r.realloc_success += 1
            else:
                r.realloc_failure += 1
        elif kind == "violation":
            r.violations += 1
        elif kind == "latency":
            self._latency[d["kind"]].append(d["seconds"])

    def offloaded_task(self, task_id: int) -> None:
        """Count a task as offloaded once, however often it is re-placed."""
        key = f"offloaded:{task_id}"
        if key not in self._seen:
            self._seen.add(key)
            self.report.lp_offloaded_generated += 1

    def finalize(self) -> MetricsReport:
        r = self.report
        r.lp_requests_completed = sum(
            1 for req, n in self._request_sizes.items() if self._request_done[req] == n)
        fractions = [self._request_done[req] / n for req, n in self._request_sizes.items()]
        r.per_request_completion_mean = statistics.fmean(fractions) if fractions else None
        r.frame_completion_rate = _ratio(r.frames_completed, r.frames_total)
        r.hp_completion_rate = _ratio(r.hp_completed, r.hp_generated)
        r.lp_completion_rate = _ratio(r.lp_completed, r.lp_generated)
        r.offloaded_completion_rate = _ratio(r.lp_offloaded_completed, r.lp_offloaded_generated)
        r.realloc_success_rate = _ratio(r.realloc_success, r.realloc_success + r.realloc_failure)
        r.frames_completed_reconstructed = self._reconstruct_frames()
        r.latency = {k: _summary(v) for k, v in self._latency.items()}
        return r

    def _reconstruct_frames(self) -> int:
        done = 0
        for frame, value in self._frame_shape.items():
            stages = self._frame_stages.get(frame, set())
            if "detector" not in stages:
                continue
            if value == -1:
                done += 1
            elif "hp" in stages and (value == 0 or self._request_complete(frame)):
                done += 1
        return done

    def _request_complete(self, frame: int) -> bool:
        req = self._frame_request.get(frame)
        return req is not None and self._request_done[req] == self._request_sizes[req]


CSV_FIELDS = (
    "label", "scenario", "algorithm", "preemption",
    "frames_total", "frames_completed", "frame_completion_rate",
    "hp_generated", "hp_completed", "hp_completed_via_preemption", "hp_completion_rate",
    "lp_requests", "lp_requests_completed", "lp_generated", "lp_completed", "lp_completion_rate",
    "lp_offloaded_generated", "lp_offloaded_completed", "offloaded_completion_rate",
    "per_request_completion_mean",
    "preemptions", "preempted_2core", "preempted_4core",
    "realloc_success", "realloc_failure", "realloc_success_rate", "realloc_comparable",
    "alloc_local_2", "alloc_local_4", "alloc_offloaded_2", "alloc_offloaded_4",
    "violations",
)


def _csv_row(report: MetricsReport, label: str) -> dict:
    d = report.deterministic_dict()
    row = {k: d.get(k) for k in CSV_FIELDS}
    row["label"] = label
    row["preempted_2core"] = report.preempted_by_config["2"]
    row["preempted_4core"] = report.preempted_by_config["4"]
    for k, v in report.core_allocation_histogram.items():
        row[f"alloc_{k}"] = v
    return {k: ("" if v is None else v) for k, v in row.items()}


def render_json(report: MetricsReport) -> str:
    return json.dumps(report.deterministic_dict(), sort_keys=True, indent=2) + "\n"


def render_csv(reports: dict[str, MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for label, report in reports.items():
        writer.writerow(_csv_row(report, label))
    return buf.getvalue()


def _pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{100 * value:6.2f}%"


def render_table(reports: dict[str, MetricsReport]) -> str:
    header = f"{'label':<8} {'frames':>8} {'HP':>8} {'LP':>8} {'per-req':>8} {'preempt':>8} {'realloc':>8}"
    lines = [header, "-" * len(header)]
    for label, r in reports.items():
        lines.append(
            f"{label:<8} {_pct(r.frame_completion_rate):>8} {_pct(r.hp_completion_rate):>8} "
            f"{_pct(r.lp_completion_rate):>8} {_pct(r.per_request_completion_mean):>8} "
            f"{r.preemptions:>8} {r.realloc_success:>3}/{r.realloc_success + r.realloc_failure:<4}")
    legend = [f"  {k:<7} {v}" for k, v in LEGEND.items()]
    return "\n".join(lines + ["", "Legend:"] + legend) + "\n"


def render(report_or_reports, fmt: str = "json", label: str = "run") -> str:
    reports = report_or_reports if isinstance(report_or_reports, dict) else {label: report_or_reports}
    if fmt == "json":
        if len(reports) == 1:
            return render_json(next(iter(reports.values())))
        return json.dumps({k: v.deterministic_dict() for k, v in reports.items()},
                          sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        return render_csv(reports)
    if fmt == "table":
        return render_table(reports)
    raise ValueError(f"unknown format {fmt!r}")
