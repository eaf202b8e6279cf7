"""Run the length, patch-set and scope ablations on synthetic data and write one CSV."""

import argparse
import csv
import sys

from hdformer.experiments import ablation_matrix, run
from hdformer.metrics import CSV_COLUMNS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--subjects", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--axis", choices=["length_s", "patch", "scope"], action="append")
    ap.add_argument("--output", help="CSV path (default stdout)")
    args = ap.parse_args()

    out = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["axis", "value", *CSV_COLUMNS, "seconds"])
    grid = ablation_matrix(**{"seed": args.seed, "signal.n_subjects": args.subjects, "train.epochs": args.epochs})
    for axis, value, cfg in grid:
        if args.axis and axis not in args.axis:
            continue
        s = run(cfg, axis, value)
        w.writerow([axis, value, *s.report.csv_row().split(","), f"{s.seconds:.1f}"])
        out.flush()
    if args.output:
        out.close()


if __name__ == "__main__":
    main()
