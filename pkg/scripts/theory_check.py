"""Print the convex least-squares bound sweep as a table.

    python3 scripts/theory_check.py [--etas 0.01 0.05 0.1] [--steps 1 5 20]
"""

import argparse

from i2iunlearn.unlearner import theory_check


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--etas", nargs="+", type=float, default=[0.01, 0.05, 0.1])
    ap.add_argument("--steps", nargs="+", type=int, default=[1, 5, 20])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'eta':>6} {'T':>3} {'|L_T-L_0|':>12} {'lambda_max':>12} {'L_T-L_0':>12} {'delta':>12}  ok")
    for c in theory_check(args.etas, args.steps, seed=args.seed):
        cert = c.certificate
        print(
            f"{c.eta:>6g} {c.T:>3d} {cert.observed_loss_gap:>12.6g} {cert.lambda_max:>12.6g} "
            f"{c.final_loss - c.initial_loss:>12.6g} {cert.delta:>12.6g}  {c.ok}"
        )


if __name__ == "__main__":
    main()
