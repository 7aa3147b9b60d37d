"""Command-line front end: batch runs, randomized verification suites,
and the teleoperation bridge.

Data goes to stdout and the output directory; diagnostics go to stderr.
The exit code is 0 exactly when the requested action succeeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import verify as verify_suites
from .scenario import ScenarioError, load_scenario, resolve_scenario
from .sim import run_scenario, write_run

LOG_ENV = "TELEACC_LOG"


def _configure_logging() -> None:
    name = os.environ.get(LOG_ENV, "warning").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args: argparse.Namespace) -> int:
    scn = load_scenario(resolve_scenario(args.scenario), overrides=args.set)
    log = run_scenario(scn)
    summary = write_run(log, scn, args.out, overrides=args.set)
    if summary["collision"]:
        outcome = "collision"
    elif summary["terminated"] == "standstill":
        outcome = "standstill"
    else:
        outcome = "completed"
    report = {
        "scenario": summary["scenario"],
        "outcome": outcome,
        "stop_x": summary["final_x"],
        "min_clearance": summary["min_obstacle_clearance"],
        "mean_compute_ms": summary["mean_compute_ms"],
        "log": summary["log"],
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    # load (and fail) before any socket is opened
    scn = load_scenario(resolve_scenario(args.scenario))
    from .server import serve

    serve(scn, port=args.port)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    report = verify_suites.run_suite(args.suite, seed=args.seed,
                                     count=args.count)
    for case in report.failures:
        print(f"FAIL {case.name}: {case.detail}", file=sys.stderr)
    n_pass = sum(1 for c in report.cases if c.passed)
    print(f"{report.suite}: {n_pass}/{len(report.cases)} passed "
          f"(seed {report.seed})")
    return 0 if n_pass == len(report.cases) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teleacc",
        description="Shared-control teleoperation simulator with a "
                    "steering-aware adaptive cruise controller.",
        epilog=f"Set {LOG_ENV}=debug|info|warning to adjust log verbosity.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario with the scripted operator")
    p.add_argument("scenario", help="bundled scenario name or YAML path")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("--set", action="append", default=[], metavar="K=V",
                   help="override a scenario field, e.g. controller.M=31")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="start the teleoperation bridge")
    p.add_argument("scenario", help="bundled scenario name or YAML path")
    p.add_argument("--port", type=int, default=8700)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("verify", help="run a randomized oracle suite")
    p.add_argument("suite", choices=sorted(verify_suites.SUITES))
    p.add_argument("--seed", type=int, default=None,
                   help=f"base seed (default: {verify_suites.DEFAULT_SEED})")
    p.add_argument("--count", type=int, default=None,
                   help="number of cases (default: per-suite)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
