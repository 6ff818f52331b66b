"""Command-line entry point for the batch drivers.

Subcommands map one-to-one onto :mod:`dickemf.pipeline` drivers.  Exit
codes: 0 success, 2 configuration error, 3 convergence failure, 4 cache
corruption.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .cache import CacheCorruptionError
from .pipeline import (
    ConfigError,
    ConvergenceError,
    ExperimentConfig,
    run_bounds_check,
    run_convergence_sweep,
    run_poincare,
    run_spectrum,
    run_state_analysis,
    run_surface_scan,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_CACHE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dickemf",
        description="Multifractal analysis of coherent states: batch drivers.",
    )
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON experiment config (defaults apply if omitted)")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory for CSV files")
    parser.add_argument("--cache", type=Path, default=Path("cache"),
                        help="spectrum cache directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="override config parallelism degree")
    parser.add_argument("--seed", type=int, default=None,
                        help="override config random seed")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (
        ("spectrum", "diagonalize and cache certified spectra"),
        ("state-analyze", "tau curve, fits, anomalous exponents, PDoS per point"),
        ("surface-scan", "D1/D2 along the jz grid of each energy surface"),
        ("poincare", "surface sections from subsampled seeds"),
        ("bounds-check", "synthetic-oracle slopes and closed-form agreement"),
        ("convergence-sweep", "tau at two boson cutoffs per point"),
    ):
        sub.add_parser(name, help=descr)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig()
    overrides = {}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = dataclasses.replace(config, **overrides)
        config.validate()
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args)
        if args.command == "spectrum":
            paths = run_spectrum(config, args.cache, args.out)
        elif args.command == "state-analyze":
            paths = run_state_analysis(config, args.cache, args.out)
        elif args.command == "surface-scan":
            paths = run_surface_scan(config, args.cache, args.out)
        elif args.command == "poincare":
            paths = run_poincare(config, args.out)
        elif args.command == "bounds-check":
            paths = run_bounds_check(config, args.out)
        elif args.command == "convergence-sweep":
            paths = run_convergence_sweep(config, args.cache, args.out)
        else:  # pragma: no cover - argparse enforces choices
            raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except CacheCorruptionError as exc:
        print(f"cache corruption: {exc}", file=sys.stderr)
        return EXIT_CACHE
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
