"""Command line entry point: ``kwsq <experiment> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from kwsq.experiments import KINDS, ConfigError, ExperimentError, emit, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwsq", description="Run a k-wise SQ experiment.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for kind in KINDS:
        cmd = sub.add_parser(kind, help=f"run the {kind} experiment")
        cmd.add_argument("--config", type=Path, help="JSON config; defaults apply to missing fields")
        cmd.add_argument("--seed", type=int, help="master seed (overrides the config)")
        cmd.add_argument("--out", type=Path, default=Path("."), help="output directory")
        cmd.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg: dict = {}
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as err:
            print(f"kwsq: cannot read config: {err}", file=sys.stderr)
            return 2
    if cfg.get("experiment", args.experiment) != args.experiment:
        print(f"kwsq: config is for {cfg['experiment']!r}, not {args.experiment!r}", file=sys.stderr)
        return 2
    cfg["experiment"] = args.experiment
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        report = run_experiment(cfg)
    except (ConfigError, ExperimentError) as err:
        print(f"kwsq: {err}", file=sys.stderr)
        return 2
    for path in emit(report, args.format, args.out):
        print(path)
    for name, ok in report.assertions.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
