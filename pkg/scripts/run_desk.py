"""Run the three desk scenarios (class-level, 20% and 75% of one class) end to end.

    python3 scripts/run_desk.py [--root runs] [--methods ours max-loss retrain ...]

Each scenario writes checkpoints, CSVs and PGM grids under <root>/<scenario>
and prints its summary table.
"""

import argparse
import logging

from i2iunlearn.config import from_dict
from i2iunlearn.experiment import METHODS, Experiment

SCENARIOS = {
    "class": {"split": {"mode": "class-level", "fraction": 1.0}},
    "frac20": {"split": {"mode": "sample-level", "fraction": 0.2}},
    "frac75": {"split": {"mode": "sample-level", "fraction": 0.75}},
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default="runs")
    ap.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    ap.add_argument("--scenarios", nargs="+", choices=list(SCENARIOS), default=list(SCENARIOS))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    for name in args.scenarios:
        exp = Experiment(from_dict({**SCENARIOS[name], "output_dir": f"{args.root}/{name}"}))
        exp.run_all(tuple(args.methods))
        print(f"== {name}")
        for row in exp.report():
            print("  " + "  ".join(f"{k}={v}" for k, v in row.items()))


if __name__ == "__main__":
    main()
