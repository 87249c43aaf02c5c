"""Workload trace files: one CSV row per frame, one column per device.

Cell values: ``-1`` nothing detected, ``0`` a high-priority task only,
``1..4`` a high-priority task followed by a request of that many DNN tasks.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field

N_DEVICES = 4
VALID_VALUES = (-1, 0, 1, 2, 3, 4)
FRAMES = 1296

# Expected totals per 1296-frame trace (potential LP, potential HP).
TABLE_TOTALS = {
    "uniform": (8640, 4320),
    "weighted1": (9296, 4952),
    "weighted2": (10372, 4915),
    "weighted3": (12973, 4939),
    "weighted4": (13941, 4901),
}
KINDS = tuple(TABLE_TOTALS)


class TraceError(ValueError):
    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        self.row, self.col = row, col
        where = ""
        if row is not None:
            where = f"row {row}" + (f" col {col}" if col is not None else "") + ": "
        super().__init__(where + message)


@dataclass
class TraceFile:
    frames: list[list[int]]
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return len(self.frames[0]) if self.frames else N_DEVICES


def parse(text: str, width: int = N_DEVICES) -> TraceFile:
    """Parse CSV trace text; ``# key: value`` comments become metadata."""
    frames: list[list[int]] = []
    metadata: dict = {}
    saw_header = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            saw_header = True
            m = re.match(r"#\s*([\w-]+)\s*:\s*(.*)$", line)
            if m:
                metadata[m.group(1)] = m.group(2).strip()
            continue
        cells = [c.strip() for c in line.split(",")]
        row = len(frames) + 1
        if len(cells) != width:
            raise TraceError(f"expected {width} columns, got {len(cells)}", row)
        values = []
        for col, cell in enumerate(cells, start=1):
            try:
                v = int(cell)
            except ValueError:
                raise TraceError(f"not an integer: {cell!r}", row, col) from None
            if v not in VALID_VALUES:
                raise TraceError(f"value {v} outside -1..4", row, col)
            values.append(v)
        frames.append(values)
    if not frames and not saw_header:
        raise TraceError("empty trace file")
    return TraceFile(frames, metadata)


def render(trace: TraceFile) -> str:
    lines = ["# edgesched trace"]
    lines += [f"# {k}: {v}" for k, v in sorted(trace.metadata.items())]
    lines += [",".join(str(v) for v in row) for row in trace.frames]
    return "\n".join(lines) + "\n"


def load(path) -> TraceFile:
    with open(path) as fh:
        return parse(fh.read())


def save(trace: TraceFile, path) -> None:
    with open(path, "w") as fh:
        fh.write(render(trace))


def stats(trace: TraceFile) -> dict:
    cells = [v for row in trace.frames for v in row]
    return {
        "frames": len(trace.frames),
        "potential_hp": sum(1 for v in cells if v >= 0),
        "potential_lp": sum(max(v, 0) for v in cells),
    }


def stats_json(trace: TraceFile) -> str:
    return json.dumps(stats(trace), sort_keys=True, indent=2)


def cell_distribution(kind: str) -> dict[int, float]:
    """Per-cell probabilities over -1..4 calibrated to the expected totals.

    The HP share comes straight from the table.  Uniform splits HP mass 1:4
    between ``0`` and an even spread over 1..4, which lands the mean LP per HP
    on 2.0.  Weighted X puts weight ``w`` on X and ``(1-w)/3`` on each other
    count, with ``w`` solved so the mean LP per HP matches the table.
    """
    if kind not in TABLE_TOTALS:
        raise ValueError(f"unknown trace kind {kind!r}; expected one of {', '.join(KINDS)}")
    lp, hp = TABLE_TOTALS[kind]
    p_hp = hp / (FRAMES * N_DEVICES)
    dist = {-1: 1.0 - p_hp}
    if kind == "uniform":
        dist[0] = p_hp / 5
        for n in (1, 2, 3, 4):
            dist[n] = p_hp * 4 / 5 / 4
        return dist
    x = int(kind[-1])
    rest = [n for n in (1, 2, 3, 4) if n != x]
    mean_rest = sum(rest) / 3
    # E[LP | HP] = w*x + (1-w)*mean_rest, linear in w
    w = (lp / hp - mean_rest) / (x - mean_rest)
    if not 0.25 < w <= 1.0:
        raise ValueError(f"table totals for {kind} imply non-dominant weight {w:.3f}")
    dist[0] = 0.0
    dist[x] = p_hp * w
    for n in rest:
        dist[n] = p_hp * (1 - w) / 3
    return dist


def generate(kind: str, frames: int = FRAMES, seed: int = 0,
             width: int = N_DEVICES) -> TraceFile:
    dist = cell_distribution(kind)
    values = list(dist)
    weights = [dist[v] for v in values]
    rng = random.Random(f"{kind}:{seed}")
    rows = [rng.choices(values, weights, k=width) for _ in range(frames)]
    return TraceFile(rows, {"scenario": kind, "seed": str(seed), "frames": str(frames)})
