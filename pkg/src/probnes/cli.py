"""Command line interface: ``probnes {run, sweep, list-functions, validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import PRIORS, SWEEP_AXES, ExperimentSpec, run_experiment, sweep
from .testfunctions import FUNCTIONS

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STALL = 3

# flag name -> spec field; defaults live on ExperimentSpec so a config file can fill gaps
SPEC_FLAGS = {
    "function": str,
    "dim": int,
    "algorithm": str,
    "budget": int,
    "eta": float,
    "batch": int,
    "init_points": int,
    "acq_mode": str,
    "candidates": int,
    "conf": float,
    "gradient_mode": str,
    "prior": str,
    "restarts": int,
    "population": int,
}


def _add_spec_flags(p: argparse.ArgumentParser, required: bool):
    p.add_argument("--config", help="JSON file with experiment spec fields; flags override it")
    p.add_argument("--seed", type=int, nargs="+", required=required, help="one or more seeds")
    p.add_argument("--out-dir", required=required, help="directory for the CSV and JSON outputs")
    p.add_argument("--workers", type=int, default=1, help="parallel seed workers")
    p.add_argument("--wall-time", action="store_true", help="record wall time (breaks byte-determinism)")
    p.add_argument("--box", type=float, nargs=2, metavar=("LO", "HI"), help="box for global_box mode")
    for flag, kind in SPEC_FLAGS.items():
        opts = {"type": kind, "default": None}
        if flag == "prior":
            opts["choices"] = sorted(PRIORS)
        p.add_argument("--" + flag.replace("_", "-"), **opts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probnes", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment over several seeds")
    _add_spec_flags(p_run, required=True)

    p_sweep = sub.add_parser("sweep", help="run one experiment per value of an ablation axis")
    _add_spec_flags(p_sweep, required=True)
    p_sweep.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p_sweep.add_argument("--values", nargs="+", required=True)

    sub.add_parser("list-functions", help="list benchmark functions and their optima")

    p_val = sub.add_parser("validate", help="run the numeric oracle suites")
    p_val.add_argument("--fast", action="store_true", help="fewer random instances")
    return parser


def spec_from_args(args) -> ExperimentSpec:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    for flag in SPEC_FLAGS:
        value = getattr(args, flag)
        if value is not None:
            data[flag] = value
    if args.seed is not None:
        data["seeds"] = args.seed
    if args.box is not None:
        data["box"] = args.box
    if args.wall_time:
        data["wall_time"] = True
    return ExperimentSpec.from_dict(data)


def _cmd_run(args) -> int:
    res = run_experiment(spec_from_args(args), args.out_dir, workers=args.workers)
    s = res.summary
    print(f"{res.csv_path}: median final regret {s['median']:.6g} (95% CI {s['ci95_low']:.6g} .. {s['ci95_high']:.6g})")
    return EXIT_STALL if res.stalled else EXIT_OK


def _cmd_sweep(args) -> int:
    results = sweep(spec_from_args(args), args.axis, args.values, args.out_dir, args.workers)
    for value, res in zip(args.values, results):
        print(f"{args.axis}={value}: median final regret {res.summary['median']:.6g} -> {res.csv_path}")
    return EXIT_STALL if any(r.stalled for r in results) else EXIT_OK


def _cmd_list() -> int:
    for name, fn in FUNCTIONS.items():
        dims = f"d={fn.fixed_dim}" if fn.fixed_dim else f"any d (default {fn.default_dim})"
        d = fn.default_dim
        print(f"{name:18s} {dims:22s} optimum {fn.optimum_value(d):.12g} at {fn.optimum_point(d).tolist()}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .validation import run_all

    results = run_all(fast=args.fast)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "list-functions":
            return _cmd_list()
        return _cmd_validate(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
