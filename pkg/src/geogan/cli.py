"""Command line: ``train``, ``compare`` and ``verify-theory``."""

from __future__ import annotations

import argparse
import sys

from . import experiment as E
from .theory import theory_suite

# flag name -> config key
TRAIN_FLAGS = {
    "variant": "variant",
    "dataset": "dataset",
    "divergence": "divergence",
    "lr": "lr",
    "batch": "batch",
    "kd": "kd",
    "kg": "kg",
    "constraint": "constraint",
    "clip": "clip",
    "wdecay": "wdecay",
    "C": "C",
    "margin": "margin",
    "steps": "steps",
    "optimizer": "optimizer",
    "log-every": "log_every",
    "seed": "seeds",
    "out": "out",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geogan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one variant over the configured seeds")
    train.add_argument("--config", help="key=value config file")
    for flag in TRAIN_FLAGS:
        train.add_argument(f"--{flag}", dest=TRAIN_FLAGS[flag], metavar=flag.upper())

    compare = sub.add_parser("compare", help="summarize finished runs")
    compare.add_argument("dirs", nargs="+")
    compare.add_argument("--out", default="summary.csv")

    verify = sub.add_parser("verify-theory", help="check the closed-form results numerically")
    verify.add_argument("--seed", type=int, default=0)
    return parser


def _train(args) -> int:
    overrides = {key: getattr(args, key) for key in TRAIN_FLAGS.values()}
    try:
        config = E.parse_config(args.config, overrides)
    except (E.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return E.EXIT_CONFIG
    status, results = E.run_experiment(config)
    for r in results:
        if r.finished:
            print(f"{r.directory}: finished")
        else:
            a = r.history.abort
            print(f"{r.directory}: aborted at step {a.step} ({a.loss} = {a.value})", file=sys.stderr)
    return status


def _compare(args) -> int:
    try:
        rows = E.compare_runs(args.dirs, args.out)
    except (E.TraceError, E.ConfigError, OSError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return E.EXIT_CONFIG
    print(f"wrote {len(rows)} rows to {args.out}")
    return E.EXIT_OK


def _verify(args) -> int:
    ok = True
    for name, passed, detail in theory_suite(args.seed):
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return E.EXIT_OK if ok else E.EXIT_ABORT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"train": _train, "compare": _compare, "verify-theory": _verify}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
