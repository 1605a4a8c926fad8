"""Command-line entry point.

Exit status: 0 on success, 2 on a configuration error, 3 when a solver fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, InfeasibleError, SolverError
from . import experiments as ex

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("need at least one seed")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config (defaults apply when omitted)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--seeds", type=_seeds, help="comma-separated seeds, e.g. 0,1,2")
    common.add_argument("--scheme", choices=["ma", "uav", "both"])
    common.add_argument("--jobs", type=int, help="worker processes for independent runs")
    common.add_argument("--quiet", action="store_true", help="only print warnings and errors")

    p = argparse.ArgumentParser(prog="micromacro", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("converge", parents=[common], help="solve the base scenario and write iteration traces")
    sub.add_parser("sweep", parents=[common], help="run the configured sweep")
    sub.add_parser("gap", parents=[common], help="run the sweep for both schemes and report MA minus UAV")
    sub.add_parser("gain", parents=[common], help="solve the base scenario and write beam-gain grids")
    sub.add_parser("validate-config", parents=[common], help="check a config and list every problem")
    return p


def _load(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.parse_config({})
    changes = {}
    if args.out is not None:
        changes["out"] = str(args.out)
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.scheme is not None:
        changes["scheme"] = args.scheme
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    if changes:
        cfg = replace(cfg, **changes)
        problems = ex.config_errors(cfg)
        if problems:
            raise ConfigError(problems)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate-config":
        if not args.quiet:
            print(f"config OK ({cfg.hash()})")
        return EXIT_OK

    out = Path(cfg.out)
    try:
        if args.command == "converge":
            res, summaries = ex.run_convergence(cfg, out)
            if not args.quiet:
                for c in summaries:
                    print(f"{c.scheme} seed {c.seed}: ASR {c.final:.4f} (within 1% from iteration {c.first_within_1pct})")
        elif args.command in ("sweep", "gap"):
            res = (ex.run_gap if args.command == "gap" else ex.run_sweep)(cfg, out)
            if not args.quiet:
                for row in ex.summarize(res.records):
                    scheme, axis, value, n, mean, std, gmean, _ = row
                    gap = "" if gmean is None else f"  gap {gmean:+.4f}"
                    shown = "-" if value is None else f"{value:g}"
                    print(f"{scheme:>3} {axis}={shown}: ASR {mean if mean is not None else float('nan'):.4f} "
                          f"± {std if std is not None else float('nan'):.4f} (n={n}){gap}")
        else:
            calib = ex.calibrate_noise(cfg)
            for scheme in cfg.schemes:
                r = ex.run_gain_pattern(cfg, scheme=scheme, out=out, calibration=calib)
                if not args.quiet:
                    for n, pat in r["patterns"].items():
                        (cb, gb), (ce, ge) = pat["markers"]["bob"], pat["markers"]["eve"]
                        print(f"{scheme} slot {n}: Bob {gb:.2f} dB, Eve {ge:.2f} dB, gap {gb - ge:.2f} dB")
            return EXIT_OK
    except (SolverError, InfeasibleError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if res.failed:
        print("solver error: some runs failed; see results.csv", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK
