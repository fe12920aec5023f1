"""Mean error per (arm, sigma) from a simulate or mnist CSV, plus footer lines."""

import argparse
import csv
from collections import defaultdict

import numpy as np


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("csv_path")
    args = parser.parse_args()
    with open(args.csv_path) as fh:
        lines = fh.read().splitlines()
    body = [line for line in lines if not line.startswith("#")]
    rows = list(csv.DictReader(body))
    metric = "l2_error" if rows and "l2_error" in rows[0] else "misclassification_rate"
    groups = defaultdict(list)
    failed = 0
    for row in rows:
        if row.get("error"):
            failed += 1
            continue
        groups[(row["arm"], float(row["sigma"]))].append(float(row[metric]))
    print(f"{'arm':8s} {'sigma':>6s} {'mean ' + metric:>26s} {'sd':>8s} {'reps':>5s}")
    for (arm, sigma), vals in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        print(f"{arm:8s} {sigma:6.2f} {np.mean(vals):26.4f} {np.std(vals):8.4f} {len(vals):5d}")
    if failed:
        print(f"{failed} failed cells")
    for line in lines:
        if line.startswith("#"):
            print(line)


if __name__ == "__main__":
    main()
