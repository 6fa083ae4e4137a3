"""Output files and console rendering for simulation results.

Every CSV starts with a ``repeat`` column (0-based repeat index) so files
from multi-seed runs stay in one place. Column order is fixed by the
``*_COLUMNS`` constants below and only changes together with
``OUTPUT_SCHEMA``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from dataclasses import dataclass
from typing import Sequence

from .sim import MetricsReport

OUTPUT_SCHEMA = 1

RESPONSE_COLUMNS = ("repeat", "time_s", "response_ms")
IMBALANCE_COLUMNS = ("repeat", "time_s", "imbalance")
MODE_COLUMNS = ("repeat", "time_s", "mode")
HOST_COLUMNS = ("repeat", "host", "requests")
COMPARISON_COLUMNS = ("method", "throughput", "mean_imbalance", "loss_rate")
FAILOVER_COLUMNS = ("method", "loss_rate", "lost", "pre_failure_median_ms", "spikes", "peak_ms")

SUMMARY_KEYS = (
    "issued",
    "served",
    "lost",
    "in_flight",
    "throughput",
    "loss_rate",
    "mean_response_ms",
    "mean_imbalance",
    "packet_ins",
    "probe_count_total",
    "group_rebuilds",
)


def summary_of(report: MetricsReport) -> dict:
    return {k: getattr(report, k) for k in SUMMARY_KEYS}


def mean_summary(reports: Sequence[MetricsReport]) -> dict:
    return {k: statistics.fmean(getattr(r, k) for r in reports) for k in SUMMARY_KEYS}


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_series(out_dir: str, reports: Sequence[MetricsReport], prefix: str = "") -> list:
    """Write the per-repeat time series and host histogram CSVs; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "response_times.csv": (RESPONSE_COLUMNS, lambda r: r.response_time_series),
        "imbalance.csv": (IMBALANCE_COLUMNS, lambda r: r.imbalance_series),
        "modes.csv": (MODE_COLUMNS, lambda r: r.mode_timeline),
        "hosts.csv": (HOST_COLUMNS, lambda r: list(enumerate(r.per_host_requests))),
    }
    paths = []
    for name, (header, rows_of) in files.items():
        path = os.path.join(out_dir, prefix + name)
        _write_csv(path, header, ((k, *row) for k, r in enumerate(reports) for row in rows_of(r)))
        paths.append(path)
    return paths


def _finite(obj):
    # strict JSON has no infinity; an open-ended interval becomes null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_finite(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_table_csv(path: str, columns, rows: Sequence[dict]) -> None:
    _write_csv(path, columns, ([row[c] for c in columns] for row in rows))


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    throughput: float
    mean_imbalance: float
    loss_rate: float

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in COMPARISON_COLUMNS}


def render(columns, rows: Sequence[dict], fmt: str = "table") -> str:
    """Render rows as an aligned text table, CSV or JSON."""
    if fmt in ("json", "json-like"):
        return json.dumps([{c: row[c] for c in columns} for row in rows], indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([row[c] for c in columns])
        return buf.getvalue().rstrip("\n")
    cells = [[_cell(row[c]) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in cells:
        lines.append("  ".join(v.rjust(w) if _numeric(v) else v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}" if abs(v) < 1 else f"{v:.3f}"
    return str(v)


def _numeric(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
