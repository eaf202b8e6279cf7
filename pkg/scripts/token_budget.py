"""Print token and attention-pair counts per layout, with the reduction over 1D attention."""

import argparse

from hdformer.tsa import DEFAULT_T, TABLE_LENGTHS_S, cost_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fs", type=int, default=128)
    ap.add_argument("--T", type=int, default=DEFAULT_T)
    ap.add_argument("--k", type=int, nargs="+", default=[2, 3, 4, 5])
    args = ap.parse_args()

    rows = cost_table(TABLE_LENGTHS_S, args.fs, args.T, args.k)
    print(f"{'variant':<18}{'L':>8}{'k_or_b':>8}{'tokens':>10}{'pairs':>16}{'L/tokens':>10}")
    for r in rows:
        # a square larger than the grid leaves no tokens
        ratio = f"{r.L / r.token_count:.1f}" if r.token_count else "-"
        print(f"{r.variant:<18}{r.L:>8}{r.k_or_b:>8}{r.token_count:>10}{r.attention_pair_count:>16}{ratio:>10}")


if __name__ == "__main__":
    main()
