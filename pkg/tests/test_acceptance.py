"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(and to stdout, visible with ``-s``).
"""

import math
import random
import statistics
import time
from collections import Counter
from dataclasses import replace

from conftest import WORKED_CUMSUM, WORKED_LOADS, make_hosts, record
from sdnlb.balancer import HYBRID, draw_random, select_target_binary, select_target_linear
from sdnlb.experiments import failover_pair, run_many, seeded
from sdnlb.monitor import CumulativeSumList, build_cumsum, change_threshold, load_imbalance
from sdnlb.scenario_file import default_scenario, failover_scenario
from sdnlb.sim import Scenario, run_scenario

REPEATS = 3


def best_time(fn, tries=5):
    best, result = math.inf, None
    for _ in range(tries):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def mean_of(reports, attr):
    return statistics.fmean(getattr(r, attr) for r in reports)


def test_criterion_1_worked_cumsum():
    hosts = make_hosts(WORKED_LOADS)
    elapsed, s = best_time(lambda: build_cumsum(hosts))
    err = max(abs(a - b) for a, b in zip(s.values, WORKED_CUMSUM))
    ok = len(s) == 8 and err <= 1e-9 and elapsed < 1e-3
    record("1", ok, f"max |error| {err:.1e} (tol 1e-9), {elapsed * 1e6:.1f} us (limit 1 ms)")
    assert ok


def test_criterion_2_probe_counts():
    s = build_cumsum(make_hosts(WORKED_LOADS))
    elapsed, (b, lin) = best_time(lambda: (select_target_binary(s, 3.3), select_target_linear(s, 3.3)))
    ok = tuple(b) == (5, 3) and tuple(lin) == (5, 6) and elapsed < 1e-3
    record("2", ok, f"binary {tuple(b)}, linear {tuple(lin)} as (index, probes); {elapsed * 1e6:.1f} us")
    assert ok


def test_criterion_3_boundary_selection():
    s = build_cumsum(make_hosts(WORKED_LOADS))
    got = select_target_binary(s, 2.2).index
    ok = got == 2 and make_hosts(WORKED_LOADS)[got].live
    record("3", ok, f"r = 2.2 -> index {got} (want 2, live)")
    assert ok


def test_criterion_4_oracle_equivalence():
    rng = random.Random(4)
    instances = []
    for _ in range(10_000):
        n = rng.randint(1, 64)
        acc, vals = 0.0, []
        for _ in range(n):
            acc += 0.0 if rng.random() < 0.25 else rng.random()
            vals.append(acc)
        if acc == 0.0:
            vals[-1] = acc = 0.5
        instances.append((CumulativeSumList(tuple(vals)), draw_random(acc, rng)))
    t0 = time.perf_counter()
    mismatches = sum(
        select_target_binary(s, r).index != select_target_linear(s, r).index for s, r in instances
    )
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 1.0
    record("4", ok, f"{mismatches} mismatches in 10000 instances, {elapsed:.3f} s (limit 1 s)")
    assert ok


def _frequencies(loads, draws, seed):
    s = build_cumsum(make_hosts(loads))
    rng = random.Random(seed)
    counts = Counter(select_target_binary(s, draw_random(s.total, rng)).index for _ in range(draws))
    return s, counts


def test_criterion_5_distribution():
    t0 = time.perf_counter()
    loads = [0.1, 0.4, 0.3, 0.6, 0.7, 0.2, 0.0, 0.5]
    s, counts = _frequencies(loads, 100_000, 5)
    worst = max(abs(counts[i] / 100_000 - (1 - x) / s.total) for i, x in enumerate(loads))
    _, dead_counts = _frequencies(WORKED_LOADS, 100_000, 6)
    dead_hits = sum(dead_counts[i] for i, x in enumerate(WORKED_LOADS) if x is None)
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and dead_hits == 0 and elapsed < 5.0
    record("5", ok, f"worst |freq - (1-x)/S| {worst:.4f} (tol 0.02), dead-host hits {dead_hits}, {elapsed:.2f} s")
    assert ok


def test_criterion_6_failover():
    scn = failover_scenario()
    t0 = time.perf_counter()
    outcomes, _ = failover_pair(scn, scn.seed, repeats=1)
    elapsed = time.perf_counter() - t0
    hybrid, rr = outcomes
    ok = (
        hybrid.method == HYBRID
        and hybrid.loss_rate == 0.0
        and hybrid.spikes == 1
        and rr.loss_rate > 0.0
        and elapsed < 5.0
    )
    record(
        "6",
        ok,
        f"hybrid loss {hybrid.loss_rate} with {hybrid.spikes} spike (peak {hybrid.peak_ms:.0f} ms, "
        f"median {hybrid.pre_failure_median_ms:.0f} ms); round-robin loss {rr.loss_rate:.4f} "
        f"({rr.lost} lost); {scn.duration:.0f} s simulated in {elapsed:.2f} s",
    )
    assert ok


def test_criterion_7a_static_beats_dynamic():
    # equal loads; threshold 1.0 pins hybrid to static, 0.0 pins it to dynamic
    base = Scenario(duration=60.0)
    assert base.controller_latency > 0
    t0 = time.perf_counter()
    static = run_many(seeded(replace(base, imbalance_threshold=1.0), base.seed, REPEATS))
    dynamic = run_many(seeded(replace(base, imbalance_threshold=0.0), base.seed, REPEATS))
    elapsed = time.perf_counter() - t0
    ts, td = mean_of(static, "throughput"), mean_of(dynamic, "throughput")
    ok = ts / td > 1.0 and elapsed < 30.0
    record("7a", ok, f"static {ts:.1f} req/s vs dynamic {td:.1f} req/s, ratio {ts / td:.3f} (> 1); {elapsed:.1f} s")
    assert ok


def test_criterion_7b_hybrid_and_fresh_loads():
    warm = default_scenario()
    t0 = time.perf_counter()
    hybrid = run_many(seeded(replace(warm, algorithm=HYBRID, imbalance_threshold=0.01), warm.seed, REPEATS))
    rr = run_many(seeded(replace(warm, algorithm="round-robin"), warm.seed, REPEATS))
    fresh = run_many(seeded(replace(warm, algorithm="dwrs-binary"), warm.seed, REPEATS))
    stale = run_many(seeded(replace(warm, algorithm="dwrs-binary", stale_loads=True), warm.seed, REPEATS))
    elapsed = time.perf_counter() - t0
    th, tr = mean_of(hybrid, "throughput"), mean_of(rr, "throughput")
    df, ds = mean_of(fresh, "mean_imbalance"), mean_of(stale, "mean_imbalance")
    ok = th >= tr and df < ds and elapsed < 30.0
    record(
        "7b",
        ok,
        f"hybrid(0.01) {th:.1f} >= round-robin {tr:.1f} req/s; "
        f"DWRS fresh delta {df:.6f} < stale {ds:.6f}; {elapsed:.1f} s",
    )
    assert ok


def test_criterion_7c_lower_threshold():
    warm = default_scenario()
    t0 = time.perf_counter()
    d10 = mean_of(run_many(seeded(replace(warm, imbalance_threshold=0.01), warm.seed, REPEATS)), "mean_imbalance")
    d05 = mean_of(run_many(seeded(replace(warm, imbalance_threshold=0.005), warm.seed, REPEATS)), "mean_imbalance")
    elapsed = time.perf_counter() - t0
    ok = d05 <= d10 and elapsed < 30.0
    record("7c", ok, f"mean delta at 0.005 {d05:.6f} <= at 0.01 {d10:.6f}; {elapsed:.1f} s")
    assert ok


def test_criterion_8_variance_and_threshold():
    checks = [
        load_imbalance(make_hosts([0.42] * 8)) == 0.0,
        load_imbalance(make_hosts([0.0, 1.0])) == 0.25,
        change_threshold([0.02, 0.05, 0.03]) == 0.05 - 0.02,
    ]
    rng = random.Random(8)
    worst = 0.0
    for _ in range(200):
        xs = [rng.random() for _ in range(rng.randint(1, 60))]
        mean = math.fsum(xs) / len(xs)
        oracle = math.fsum((x - mean) ** 2 for x in xs) / len(xs)
        worst = max(worst, abs(load_imbalance(make_hosts(xs)) - oracle))
        checks.append(change_threshold(xs) == max(xs) - min(xs))
    ok = all(checks) and worst <= 1e-12
    record("8", ok, f"{sum(checks)}/{len(checks)} exact checks, worst variance error {worst:.1e} (tol 1e-12)")
    assert ok


def test_criterion_9_determinism():
    scenarios = [
        replace(default_scenario(), duration=40.0),
        failover_scenario(),
        Scenario(duration=30.0, algorithm="dwrs-linear", seed=17),
        Scenario(duration=30.0, algorithm="least-connections", seed=3),
    ]
    same = [run_scenario(s).to_json() == run_scenario(s).to_json() for s in scenarios]
    ok = all(same)
    record("9", ok, f"{sum(same)}/{len(same)} scenarios byte-identical across reruns")
    assert ok
