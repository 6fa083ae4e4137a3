"""Command line entry point.

    sdnlb validate SCENARIO
    sdnlb dump-default [--preset default|failover] [-o FILE]
    sdnlb run SCENARIO      [--seed N] [--repeats K] [--out-dir DIR] [--format FMT]
    sdnlb compare SCENARIO  [... --thresholds 0.01,0.005]
    sdnlb failover SCENARIO [...]
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from dataclasses import replace

from . import __version__
from .experiments import compare, failover_pair, run_many, seeded
from .report import (
    COMPARISON_COLUMNS,
    FAILOVER_COLUMNS,
    OUTPUT_SCHEMA,
    mean_summary,
    render,
    summary_of,
    write_json,
    write_series,
    write_table_csv,
)
from .scenario_file import (
    default_scenario,
    dump_scenario,
    failover_scenario,
    load_scenario,
    scenario_to_dict,
)
from .sim import ScenarioError

logger = logging.getLogger("sdnlb")

PRESETS = {"default": default_scenario, "failover": failover_scenario}
FORMATS = ("table", "csv", "json", "json-like")


def _thresholds(text: str) -> tuple:
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("need at least one threshold")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdnlb", description="SDN cluster load-balancing simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file and exit")
    p.add_argument("scenario")

    p = sub.add_parser("dump-default", help="print a scenario file with every default filled in")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")
    p.add_argument("-o", "--output", help="write to this file instead of stdout")

    for name, text in (
        ("run", "run one scenario"),
        ("compare", "round-robin, least-load, DWRS and hybrid at two thresholds"),
        ("failover", "hybrid with fast failover versus round-robin under the scenario's failures"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("scenario")
        p.add_argument("--seed", type=int, help="override the scenario seed (repeat k uses seed + k)")
        p.add_argument("--repeats", type=int, default=3, help="runs per configuration, averaged (default 3)")
        p.add_argument("--out-dir", default="out", help="directory for output files (default ./out)")
        p.add_argument("--format", choices=FORMATS, default="table", help="console output format")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        if name == "compare":
            p.add_argument("--thresholds", type=_thresholds, default=(0.01, 0.005),
                           help="comma-separated hybrid thresholds (default 0.01,0.005)")
    return parser


def _header(args, scn, seed) -> dict:
    return {
        "output_schema": OUTPUT_SCHEMA,
        "command": args.command,
        "seed": seed,
        "repeats": args.repeats,
        "scenario": scenario_to_dict(scn),
    }


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "-", label).strip("-")


def cmd_validate(args) -> int:
    load_scenario(args.scenario)
    print(f"{args.scenario}: ok")
    return 0


def cmd_dump_default(args) -> int:
    text = dump_scenario(PRESETS[args.preset]())
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(args, scn, seed) -> int:
    reports = run_many(seeded(scn, seed, args.repeats), args.jobs)
    write_series(args.out_dir, reports)
    doc = _header(args, scn, seed)
    doc["mean"] = mean_summary(reports)
    doc["runs"] = [dict(summary_of(r), seed=seed + k, per_host_requests=r.per_host_requests,
                        mode_timeline=[list(m) for m in r.mode_timeline])
                   for k, r in enumerate(reports)]
    write_json(os.path.join(args.out_dir, "summary.json"), doc)
    columns = ("metric", "mean")
    print(render(columns, [{"metric": k, "mean": v} for k, v in doc["mean"].items()], args.format))
    return 0


def cmd_compare(args, scn, seed) -> int:
    rows, by_label = compare(scn, seed, args.repeats, args.thresholds, args.jobs)
    table = [r.as_dict() for r in rows]
    os.makedirs(args.out_dir, exist_ok=True)
    write_table_csv(os.path.join(args.out_dir, "comparison.csv"), COMPARISON_COLUMNS, table)
    for label, reports in by_label.items():
        write_series(os.path.join(args.out_dir, "series"), reports, prefix=_slug(label) + "_")
    doc = _header(args, scn, seed)
    doc["methods"] = list(by_label)
    doc["comparison"] = table
    doc["runs"] = {label: [summary_of(r) for r in reps] for label, reps in by_label.items()}
    write_json(os.path.join(args.out_dir, "summary.json"), doc)
    print(render(COMPARISON_COLUMNS, table, args.format))
    return 0


def cmd_failover(args, scn, seed) -> int:
    outcomes, by_method = failover_pair(scn, seed, args.repeats, args.jobs)
    table = [o.as_dict() for o in outcomes]
    os.makedirs(args.out_dir, exist_ok=True)
    write_table_csv(os.path.join(args.out_dir, "failover.csv"), FAILOVER_COLUMNS, table)
    for method, reports in by_method.items():
        write_series(args.out_dir, reports, prefix=f"{method}_")
    doc = _header(args, scn, seed)
    doc["failover"] = table
    write_json(os.path.join(args.out_dir, "summary.json"), doc)
    print(render(FAILOVER_COLUMNS, table, args.format))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "dump-default":
            return cmd_dump_default(args)
        if args.repeats < 1:
            parser.error("--repeats must be at least 1")
        scn = load_scenario(args.scenario)
        seed = scn.seed if args.seed is None else args.seed
        scn = replace(scn, seed=seed)
        handler = {"run": cmd_run, "compare": cmd_compare, "failover": cmd_failover}[args.command]
        return handler(args, scn, seed)
    except ScenarioError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
