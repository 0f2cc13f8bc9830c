"""Command-line entry point.

    trn-ood gen-shifts --config exp.toml [--out DIR] [--seeds 0,1,2]
    trn-ood train      --config exp.toml [--out DIR] [--seeds 0,1,2]
    trn-ood eval       --config exp.toml [--out DIR] [--force]
    trn-ood selfcheck

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 selfcheck failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile


def _add_common(p: argparse.ArgumentParser, needs_config: bool = True):
    if needs_config:
        p.add_argument("--config", required=True, help="experiment TOML")
        p.add_argument("--out", default=None, help="output directory "
                       "(default: [output].dir from the config)")
        p.add_argument("--seeds", default=None,
                       help="comma-separated seed list overriding the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trn-ood",
        description="OOD-detection benchmark toolkit for text-rich networks")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("gen-shifts", help="generate OOD split directories"))
    _add_common(sub.add_parser("train", help="train detector backbones per seed"))
    evalp = sub.add_parser("eval", help="score splits and write metric tables")
    _add_common(evalp)
    evalp.add_argument("--force", action="store_true",
                       help="ignore config-hash mismatches")
    sub.add_parser("selfcheck", help="run built-in diagnostics")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)

    if args.command == "selfcheck":
        from .selfcheck import run_all

        with tempfile.TemporaryDirectory(prefix="trn-ood-selfcheck-") as tmp:
            ok, table = run_all(tmp)
        print(table, end="")
        return 0 if ok else 3

    from .harness import ConfigError, cmd_eval, cmd_gen_shifts, cmd_train, parse_config

    try:
        config = parse_config(args.config)
        if args.seeds:
            config.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            if not config.seeds:
                raise ConfigError("empty --seeds list")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "gen-shifts":
            return cmd_gen_shifts(config, args.out)
        if args.command == "train":
            return cmd_train(config, args.out)
        return cmd_eval(config, args.out, force=args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
