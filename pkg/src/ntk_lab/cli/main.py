"""``ntk-lab <task> --config <path> [--out <path>] [--threads N] [--seed S]``

Exit codes: 0 on success, 1 on a configuration error, 2 on a runtime failure.
"""

import argparse
import logging
import sys

from ..errors import NtkLabError
from .config import TASKS, ConfigError, load_config
from .experiments import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser():
    parser = argparse.ArgumentParser(prog="ntk-lab", description="NTK regression experiments")
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", required=True, help="key = value configuration file")
    parser.add_argument("--out", help="CSV destination (overrides the config)")
    parser.add_argument("--threads", type=int, help="worker threads for the cell sweep")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; those are config errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {"out": args.out, "threads": args.threads, "seed": args.seed}
    try:
        config = load_config(args.config, task=args.task, overrides=overrides)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"config error: {issue}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_experiment(config)
    except (NtkLabError, OSError, ValueError, ArithmeticError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if config.out is None:
        print(",".join(report.columns))
        for row in report.rows:
            print(",".join("" if row.get(c) is None else str(row.get(c)) for c in report.columns))
        for line in report.footer:
            print(f"# {line}")
    else:
        failed = sum(1 for r in report.rows if r.get("error"))
        print(f"wrote {len(report.rows)} rows to {config.out} ({failed} failed cells)", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
