"""Train the default five-expert model on the synthetic cohort and report held-out metrics."""

import argparse

from hdformer.config import ExperimentConfig, apply_overrides
from hdformer.experiments import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    cfg = apply_overrides(ExperimentConfig(seed=args.seed), args.set).validate()
    summary = run(cfg)
    rep = summary.report
    print("epoch train_loss:", " ".join(f"{x:.4f}" for x in summary.train_losses))
    print(rep.csv_header())
    print(rep.csv_row())
    print(f"patient accuracy {rep.patient.accuracy:.3f}, {summary.seconds:.0f}s")


if __name__ == "__main__":
    main()
