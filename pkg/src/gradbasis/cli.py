"""Command line entry point: ``gradbasis verify | suite | report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import GradBasisError
from .harness import ScenarioConfig, collect_reports, run_scenario, run_suite, summary_csv

log = logging.getLogger("gradbasis")


def _print_summary(reports: list[dict]) -> bool:
    ok = True
    for rep in reports:
        fails = [
            f"seed {s['seed']}: {r['check']}"
            for s in rep["seeds"]
            for r in s["reports"]
            if not r["passed"]
        ]
        status = "PASS" if rep["passed"] else "FAIL"
        print(f"{status}  {rep['id']}  ({len(rep['seeds'])} seeds, {rep['wall_clock_s']:.1f}s)")
        for f in fails:
            print(f"      failed {f}")
        ok &= rep["passed"]
    return ok


def cmd_verify(args) -> int:
    cfg = ScenarioConfig.load(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    rep = run_scenario(cfg, args.out)
    return 0 if _print_summary([rep]) else 1


def cmd_suite(args) -> int:
    reports = run_suite(args.dir, args.out)
    return 0 if _print_summary(reports) else 1


def cmd_report(args) -> int:
    reports = collect_reports(args.input)
    text = summary_csv(reports)
    if args.csv == "-":
        sys.stdout.write(text)
    else:
        Path(args.csv).write_text(text)
        print(f"wrote {sum(1 for _ in text.splitlines()) - 1} rows to {args.csv}")
    return 0 if all(r["passed"] for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradbasis", description="Verify critical-point optimality claims on small models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run one scenario config")
    v.add_argument("--config", required=True, help="scenario JSON file")
    v.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    v.add_argument("--seed", type=int, default=None, help="run only this seed")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("suite", help="run every *.json config in a directory")
    s.add_argument("--dir", required=True, help="directory of scenario configs")
    s.add_argument("--out", default="reports", help="output directory")
    s.set_defaults(func=cmd_suite)

    r = sub.add_parser("report", help="collect report.json files into one CSV")
    r.add_argument("--in", dest="input", required=True, help="directory searched for report.json")
    r.add_argument("--csv", required=True, help="output CSV path, or - for stdout")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GradBasisError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
