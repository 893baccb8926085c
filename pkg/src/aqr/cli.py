"""Command-line entry point: ``aqr <experiment> [--config PATH] [--out DIR] [--seed N]``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from aqr.config import EXPERIMENTS, ConfigError, parse_config, parse_config_text
from aqr.experiments import ExperimentError, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aqr", description="Quantile recalibration experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="experiment")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="INI-style experiment configuration")
        p.add_argument("--out", type=Path, help="output directory (overrides [run] output_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides [run] master_seed)")
    return parser


def load(args):
    if args.config is None:
        cfg = parse_config_text(f"experiment = {args.command}\n", "<defaults>")
    else:
        cfg = parse_config(args.config)
        if cfg.experiment != args.command:
            raise ConfigError(f"{args.config}: config is for {cfg.experiment!r}, not {args.command!r}")
    changes = {}
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.seed is not None:
        changes["master_seed"] = args.seed
    return dataclasses.replace(cfg, **changes)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load(args)
    except ConfigError as exc:
        print(f"aqr: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        files = run_experiment(cfg)
    except ExperimentError as exc:
        print(f"aqr: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
