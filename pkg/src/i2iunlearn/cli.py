"""Command-line driver: ``python -m i2iunlearn <subcommand> --config run.json``.

Exit status is 0 on success, 1 on a config or runtime failure and 2 on a usage
error. Every subcommand reads models it needs from the output directory and
builds (and checkpoints) whatever is missing first.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .experiment import METHODS, Experiment


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="i2iunlearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON config (defaults used when omitted)")
        p.add_argument("--out", help="override output_dir")
        return p

    add("train", "train the original model")
    add("attack", "fine-tune the original model on '+'-poisoned forget targets")
    p = add("unlearn", "run one unlearning method from the attack model")
    p.add_argument("--method", required=True, choices=METHODS)
    p = add("audit", "residual '+' rate on forget-class test outputs")
    p.add_argument("--models", nargs="+", help="checkpoint names (default: all present)")
    p = add("eval", "FD/IS-proxy metrics against the reference model")
    p.add_argument("--models", nargs="+", help="checkpoint names (default: all present)")
    p = add("trace", "per-epoch distance trace from saved epoch checkpoints")
    p.add_argument("--method", default="ours", choices=[m for m in METHODS if m != "retrain"])
    p = add("theory-check", "ascent bound sweep on the convex least-squares problem")
    p.add_argument("--etas", type=_floats, default=(0.01, 0.05, 0.1))
    p.add_argument("--steps", type=_ints, default=(1, 5, 20))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    add("report", "join audit and metrics CSVs into summary.csv")
    p = add("run-all", "train, attack, unlearn, audit, eval, trace and report")
    p.add_argument("--methods", nargs="+", choices=METHODS, default=["ours", "max-loss", "retrain"])
    return parser


def _load(args) -> ExperimentConfig:
    if args.config is None:
        cfg = ExperimentConfig()
    else:
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {args.config}: {exc.strerror}") from exc
    if args.out:
        cfg.output_dir = args.out
    return cfg


def _dispatch(args, exp: Experiment) -> int:
    cmd = args.command
    if cmd == "train":
        exp.model("original")
    elif cmd == "attack":
        exp.model("attack")
    elif cmd == "unlearn":
        exp.unlearn(args.method)
    elif cmd == "audit":
        for name, rep in exp.audit(args.models).items():
            print(f"{name}\tresidual_rate={rep.residual_rate:.4f}")
    elif cmd == "eval":
        for name, rep in exp.evaluate(args.models).items():
            print(f"{name}\tfd_Df={rep.forget.fd:.4f}\tfd_Dr={rep.retain.fd:.4f}")
    elif cmd == "trace":
        rows = exp.trace(args.method)
        print(f"trace_{args.method}.csv: {len(rows)} rows")
    elif cmd == "theory-check":
        checks = exp.theory_check(args.etas, args.steps, seed=args.seed, tol=args.tol)
        failed = [c for c in checks if not c.ok]
        for c in checks:
            print(f"eta={c.eta:g}\tT={c.T}\t{'ok' if c.ok else 'FAIL'}")
        return 1 if failed else 0
    elif cmd == "report":
        for row in exp.report():
            print("\t".join(f"{k}={v}" for k, v in row.items()))
    elif cmd == "run-all":
        exp.run_all(tuple(args.methods))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        exp = Experiment(_load(args))
        return _dispatch(args, exp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
