"""Command line entry point.

    rangelab <subcommand> --config <file> [--seed N] [--workers K] [--out DIR]

Subcommands: mean, clt, mgf, rate, tail, blocks, report, validate.
All flags override keys of the JSON config; results land in the output
directory together with a resume manifest.
"""
from __future__ import annotations

import argparse
import sys

from .config import SUBCOMMANDS, ExperimentConfig, validate
from .errors import InvalidConfig, PartialFailure
from .runner import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rangelab", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS + ("validate",):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--workers", type=int, default=None, help="override worker count")
        p.add_argument("--out", default=None, help="override output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_json(args.config)
    except (OSError, ValueError, InvalidConfig) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config.master_seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.out is not None:
        config.out_dir = args.out

    if args.subcommand == "validate":
        diags = validate(config)
        for level, msg in diags:
            print(f"{level}: {msg}")
        if not diags:
            print("ok: no diagnostics")
        return 2 if any(level == "error" for level, _ in diags) else 0

    try:
        result = run(config, args.subcommand)
    except InvalidConfig as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except PartialFailure as exc:
        print(f"partial failure: {exc}", file=sys.stderr)
        return 1
    print(f"computed {result.computed} tasks, reused {result.cached}")
    for name in result.artifacts:
        print(f"artifact: {config.out_dir}/{name}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
