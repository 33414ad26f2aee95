"""Command line: ``run``, ``compare``, ``tolerance``.

Log level comes from ``CODEDMARL_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import coding
from .bench.compare import SchemaMismatch, compare
from .bench.config import ConfigError, load_config
from .bench.grid import run_grid


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config {args.config}:\n{exc}", file=sys.stderr)
        return 2
    if args.transport:
        cfg = cfg.model_copy(update={"transport": args.transport})
    summary = run_grid(cfg, args.out, jobs=args.jobs)
    print(summary)
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    try:
        report = compare(args.baseline, args.candidate, tol=args.tol, window=args.window)
    except SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return 2
    print("\n".join(report.lines()))
    return 0 if report.ok else 1


def _cmd_tolerance(args: argparse.Namespace) -> int:
    params = {"p_m": args.p_m, "seed": args.seed, "w": args.w}
    try:
        c = coding.build(args.scheme, args.n, args.m, **params)
        print(coding.worst_case_tolerance(c))
    except (coding.CodingError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="codedmarl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--transport", choices=["sim", "tcp"])
    run.add_argument("--out")
    run.add_argument("--jobs", type=int, default=1, help="grid cells to run in parallel")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="diff two metric CSVs; exit 1 above --tol")
    cmp_.add_argument("baseline")
    cmp_.add_argument("candidate")
    cmp_.add_argument("--tol", type=float, default=1e-5)
    cmp_.add_argument("--window", type=int, default=10)
    cmp_.set_defaults(func=_cmd_compare)

    tol = sub.add_parser("tolerance", help="worst-case straggler tolerance of a code")
    tol.add_argument("--scheme", required=True, choices=[s.value for s in coding.Scheme])
    tol.add_argument("--n", type=int, required=True)
    tol.add_argument("--m", type=int, required=True)
    tol.add_argument("--w", type=int)
    tol.add_argument("--p-m", type=float, default=0.8)
    tol.add_argument("--seed", type=int, default=0)
    tol.set_defaults(func=_cmd_tolerance)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("CODEDMARL_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
