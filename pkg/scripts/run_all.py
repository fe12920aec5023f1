"""Run every bundled config through the CLI and collect the CSVs in results/."""

import argparse
import sys
from pathlib import Path

from ntk_lab.cli.main import main as cli_main

ROOT = Path(__file__).resolve().parent.parent
TASK_OF = {
    "simulate_f1": "simulate",
    "simulate_f2": "simulate",
    "rate_study": "rate-study",
    "eigendecay": "eigendecay",
    "stopping_curve": "stopping-curve",
    "mnist": "mnist",
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("names", nargs="*", default=["eigendecay", "stopping_curve", "rate_study"],
                        help=f"configs to run, from {', '.join(TASK_OF)}")
    parser.add_argument("--out-dir", default=str(ROOT / "results"))
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = 0
    for name in args.names:
        conf = ROOT / "configs" / f"{name}.conf"
        code = cli_main([TASK_OF[name], "--config", str(conf), "--out", str(out_dir / f"{name}.csv"),
                         "--threads", str(args.threads)])
        print(f"{name}: exit {code}")
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
