"""Command line entry point ``mbo``.

Exit status: 0 all checks passed, 1 a check failed, 2 invalid configuration,
3 an artifact could not be written or read.
"""
from __future__ import annotations

import argparse
import sys

from ..errors import MBOError, ParseError, ValidationError
from .config import EXPERIMENTS, load_config
from .experiments import IoError, run_experiment


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mbo", description="Multiphase thresholding experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--seed", type=_u64, default=None, help="64-bit seed (overrides the config)")
    p.add_argument("--allow-underresolved", action="store_true",
                   help="accept sqrt(h) < 3 dx")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, experiment=args.experiment, seed=args.seed, output=args.out,
                          allow_underresolved=args.allow_underresolved or None)
    except (ParseError, ValidationError) as exc:
        print(f"mbo: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mbo: cannot read configuration: {exc}", file=sys.stderr)
        return 3
    try:
        res = run_experiment(cfg)
    except ValidationError as exc:
        print(f"mbo: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (IoError, OSError) as exc:
        print(f"mbo: {exc}", file=sys.stderr)
        return 3
    except MBOError as exc:
        print(f"mbo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for c in res.checks:
        print(f"{c.name} = {'pass' if c.passed else 'fail'}")
    print(f"artifacts in {res.out_dir}")
    return res.status


if __name__ == "__main__":
    sys.exit(main())
