"""Command-line experiment runner.

Usage: ``hamcmc --config path/to/run.cfg --out results/ [--seed N] [--threads N]``

Exit codes: 0 on success, 2 for configuration errors (every violation is
printed), 3 for runtime failures such as an unrecoverable degenerate metric
or a non-finite value reaching the CSV writer.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, parse_config
from .data import DataError
from .experiments import ExperimentError, run_experiment
from .models import ModelError
from .samplers import ChainAbortError, SamplerError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hamcmc",
        description="Run a configured sampling experiment and write CSV results "
        "(and figure PNGs) to the output directory.",
    )
    parser.add_argument("--config", required=True, help="path to a key = value config file")
    parser.add_argument("--out", required=True, help="output directory for CSV/PNG results")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for replicate chains")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if args.seed < 0:
            print("config error: --seed must be nonnegative", file=sys.stderr)
            return 2
        cfg.seed = args.seed
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        paths = run_experiment(cfg, args.out, threads=args.threads)
    except (ChainAbortError, ExperimentError, DataError, ModelError, SamplerError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
