"""Command-line interface.

Subcommands:
  run       advance a scenario config, writing histories/snapshots/checkpoints
  scenario  emit a builtin scenario configuration file
  verify    run one of the built-in verification suites
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigurationError
from .scenario import builtin_scenario, load_config, run, save_config
from .verification import SUITES, run_suite


def _cmd_run(args):
    cfg = load_config(args.config)
    summary = run(cfg, args.out, max_steps=args.max_steps,
                  restart=args.restart)
    print(f"{cfg.name}: {summary['steps']} step(s) to t={summary['t']:.6g} "
          f"(max {summary['max_cycles']} cycle(s)/step); outputs in "
          f"{args.out}")
    return 0


def _cmd_scenario(args):
    cfg = builtin_scenario(args.name)
    save_config(cfg, args.emit)
    print(f"wrote {cfg.name} ({cfg.mode}) to {args.emit}")
    return 0


def _cmd_verify(args):
    results = run_suite(args.suite, fast=args.fast)
    worst = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {args.suite}.{r.name}: {r.detail}")
        if not r.passed:
            worst = 1
    return worst


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hybridfsi",
        description="Overlapping-mesh cut-cell fluid-structure simulator")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario configuration")
    p.add_argument("--config", required=True, help="scenario INI file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-steps", type=int, default=None,
                   help="stop after this many steps")
    p.add_argument("--restart", default=None,
                   help="checkpoint file to resume from")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("scenario", help="emit a builtin scenario config")
    p.add_argument("--name", required=True,
                   help="builtin name, e.g. compressing_ball or "
                        "moving_cylinder:desk")
    p.add_argument("--emit", required=True, help="output INI path")
    p.set_defaults(func=_cmd_scenario)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--fast", action="store_true",
                   help="reduced problem sizes for a quick smoke check")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # checkpointed by the run loop before raising
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
