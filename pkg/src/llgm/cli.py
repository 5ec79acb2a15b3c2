"""Command line interface for the experiment pipeline.

Each pipeline stage is a subcommand that reads its inputs from (and writes
its outputs to) one output directory, so a run can be driven end to end::

    llgm experiment --mode ar1 --seeds 0,1,2 --out runs/demo

or stage by stage::

    llgm simulate --mode ar1 --seed 0 --out runs/demo
    llgm fit      --mode ar1 --seed 0 --out runs/demo
    llgm smooth   --mode ar1 --seed 0 --out runs/demo
    llgm refit    --mode ar1 --seed 0 --out runs/demo
    llgm score    --mode ar1 --seed 0 --out runs/demo

Every flag can also come from a TOML file via ``--config``; flags win over
file values.  Exit codes: 0 on success, 2 for configuration problems, 3
for numerical failures (the message names the stage and seed).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .exceptions import ConfigError, NumericalError
from .pipeline import (
    RunPaths,
    run_experiment,
    run_fit,
    run_refit,
    run_score,
    run_simulate,
    run_smooth,
)

__all__ = ["build_parser", "main"]

_STAGES = {
    "simulate": (run_simulate, "draw one data set and its ground truth"),
    "fit": (run_fit, "fit per-region hyperparameter grid posteriors"),
    "smooth": (run_smooth, "smooth region modes at every level"),
    "refit": (run_refit, "refit regions at the smoothed summaries"),
    "score": (run_score, "score every (level, variant) pair"),
}


def _levels_arg(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"levels must be comma-separated numbers, got {text!r}")


def _seeds_arg(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"seeds must be comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        metavar="FILE", help="TOML configuration file")
    common.add_argument("--mode", choices=("ar1", "spatial"), default=None,
                        help="model family (default: ar1)")
    common.add_argument("--out", dest="out_dir", default=None,
                        metavar="DIR", help="output directory")
    common.add_argument("--workers", type=int, default=None, metavar="N",
                        help="parallel workers (0 = all cores)")
    common.add_argument("--gh-order", dest="gh_order", type=int,
                        default=None, metavar="L",
                        help="Gauss-Hermite order for mixture refits")
    common.add_argument("--levels", type=_levels_arg, default=None,
                        metavar="V,V,...",
                        help="log smoothing precisions to sweep "
                             "(write --levels=-5,-1,3 for negatives)")

    parser = argparse.ArgumentParser(
        prog="llgm",
        description="Local latent Gaussian models: per-region fits, "
                    "cross-region smoothing, mixture refits, scoring.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _STAGES.items():
        stage = sub.add_parser(name, parents=[common], help=help_text)
        stage.add_argument("--seed", type=int, default=None,
                           help="seed of the run directory to operate on")
    exp = sub.add_parser("experiment", parents=[common],
                         help="run all stages over every seed")
    group = exp.add_mutually_exclusive_group()
    group.add_argument("--seed", type=int, default=None,
                       help="run a single seed")
    group.add_argument("--seeds", type=_seeds_arg, default=None,
                       metavar="S,S,...", help="run these seeds")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"mode": args.mode, "out_dir": args.out_dir,
                 "workers": args.workers, "gh_order": args.gh_order,
                 "levels": args.levels}
    if args.command == "experiment":
        overrides["seed"] = args.seed
        overrides["seeds"] = args.seeds
    try:
        cfg = load_config(args.config, **overrides)
    except ConfigError as exc:
        print(f"llgm: configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "experiment":
            rows = run_experiment(cfg)
            width = max(len(r["level"]) for r in rows)
            for row in rows:
                extras = "".join(
                    f"  {name}={row[name]:.6g}"
                    for name in ("emlkl", "mae") if row[name] != "")
                print(f"seed {row['seed']}  level {row['level']:>{width}}  "
                      f"{row['variant']:<7}  emlcpo={row['emlcpo']:.6g}"
                      + extras)
            print(f"wrote {cfg.out_dir / 'summary.csv'}")
        else:
            seed = args.seed if args.seed is not None else cfg.seeds[0]
            _STAGES[args.command][0](cfg, seed)
            print(f"stage '{args.command}' done for seed {seed} "
                  f"under {RunPaths(cfg.out_dir, seed).seed_dir}")
    except ConfigError as exc:
        print(f"llgm: configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"llgm: numerical failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"llgm: missing stage input: {exc} "
              f"(run the earlier stages first)", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
