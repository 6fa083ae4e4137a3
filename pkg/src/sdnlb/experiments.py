"""Multi-run experiments: the method comparison and the failover pair."""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .balancer import HYBRID, AlgorithmKind
from .report import ComparisonRow
from .sim import MetricsReport, Scenario, count_spikes, median_before, run_scenario

DEFAULT_THRESHOLDS = (0.01, 0.005)
SPIKE_FACTOR = 3.0


def run_many(scenarios: Sequence[Scenario], jobs: int = 1) -> list:
    """Run scenarios, optionally in worker processes; result order matches input."""
    if jobs <= 1 or len(scenarios) <= 1:
        return [run_scenario(s) for s in scenarios]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_scenario, scenarios))


def seeded(scn: Scenario, seed: int, repeats: int) -> list:
    return [replace(scn, seed=seed + k) for k in range(repeats)]


def comparison_methods(thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> list:
    """``(label, overrides)`` for each row of the comparison table."""
    methods = [
        (AlgorithmKind.ROUND_ROBIN.value, {"algorithm": AlgorithmKind.ROUND_ROBIN.value}),
        (AlgorithmKind.LEAST_LOAD.value, {"algorithm": AlgorithmKind.LEAST_LOAD.value}),
        ("dwrs", {"algorithm": AlgorithmKind.DWRS_LINEAR.value}),
    ]
    for t in thresholds:
        methods.append((f"hybrid(threshold={t:g})", {"algorithm": HYBRID, "imbalance_threshold": t}))
    return methods


def compare(
    scn: Scenario,
    seed: int,
    repeats: int = 3,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    jobs: int = 1,
) -> tuple:
    """Run every comparison method ``repeats`` times; returns (rows, reports by label)."""
    methods = comparison_methods(thresholds)
    batch = []
    for _, overrides in methods:
        batch.extend(seeded(replace(scn, **overrides), seed, repeats))
    results = run_many(batch, jobs)
    rows, by_label = [], {}
    for k, (label, _) in enumerate(methods):
        reps = results[k * repeats:(k + 1) * repeats]
        by_label[label] = reps
        rows.append(ComparisonRow(
            label,
            statistics.fmean(r.throughput for r in reps),
            statistics.fmean(r.mean_imbalance for r in reps),
            statistics.fmean(r.loss_rate for r in reps),
        ))
    return rows, by_label


@dataclass(frozen=True)
class FailoverOutcome:
    method: str
    loss_rate: float
    lost: int
    pre_failure_median_ms: float
    spikes: int
    peak_ms: float

    def as_dict(self) -> dict:
        return dict(vars(self))


def analyse_failover(method: str, report: MetricsReport, failure_time: float) -> FailoverOutcome:
    """Loss and response-time spikes around the first injected failure."""
    median = median_before(report.response_time_series, failure_time)
    spikes = count_spikes(report.response_time_series, SPIKE_FACTOR * median, after=failure_time)
    peak = max((p for _, _, p in spikes), default=0.0)
    return FailoverOutcome(method, report.loss_rate, report.lost, median, len(spikes), peak)


def failover_pair(scn: Scenario, seed: int, repeats: int = 1, jobs: int = 1) -> tuple:
    """Hybrid with fast failover versus round-robin without it, same failures."""
    fail_times = [ev.time for ev in scn.failures if ev.action == "fail"]
    if not fail_times:
        raise ValueError("failover experiment needs at least one 'fail' entry in 'failures'")
    failure_time = min(fail_times)
    variants = [
        (HYBRID, replace(scn, algorithm=HYBRID)),
        (AlgorithmKind.ROUND_ROBIN.value, replace(scn, algorithm=AlgorithmKind.ROUND_ROBIN.value)),
    ]
    batch = [s for _, v in variants for s in seeded(v, seed, repeats)]
    results = run_many(batch, jobs)
    outcomes, by_method = [], {}
    for k, (method, _) in enumerate(variants):
        reps = results[k * repeats:(k + 1) * repeats]
        by_method[method] = reps
        outcomes.extend(analyse_failover(method, r, failure_time) for r in reps)
    return outcomes, by_method
