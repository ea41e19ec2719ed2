"""Command line entry point: ``nilheat verify|simulate|refine <config>``."""

from __future__ import annotations

import argparse
import sys

from nilheat import harness
from nilheat.errors import NilheatError

OVERRIDES = {
    "model": "model",
    "n": "n",
    "grid": "grid",
    "order": "order",
    "t_final": "flow.t_final",
    "seed": "seed",
    "out": "out",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nilheat",
                                description="Heat-flow entropy verification on flat nilmanifolds.")
    p.add_argument("command", choices=("verify", "simulate", "refine"))
    p.add_argument("config", nargs="?", help="flat key = value configuration file")
    p.add_argument("--model", choices=("CR", "QC", "cr", "qc"))
    p.add_argument("--n", type=int)
    p.add_argument("--grid", help="resolution ladder, e.g. '32,64' or '32x32x64'")
    p.add_argument("--order", type=int, choices=(2, 4))
    p.add_argument("--t-final", dest="t_final", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory for CSV and JSON reports")
    return p


def _print_summary(summary: dict) -> None:
    for name, entry in summary.items():
        order = entry.get("order")
        order_txt = "" if order is None else f"  order {order:.3f}"
        print(f"{entry['status']:>9}  {name:<28} rel {entry['rel']:.3e}{order_txt}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, attr) for attr, key in OVERRIDES.items()}
    try:
        cfg = harness.load_config(args.config, overrides)
        if args.command == "verify":
            result = harness.verify(cfg)
            _print_summary(result.summary)
            return 0 if result.passed else 1
        if args.command == "simulate":
            result = harness.simulate(cfg)
            _print_summary(result.summary)
            return 0 if result.passed else 1
        table = harness.refine(cfg)
        for name, hc, hf, order in table:
            order_txt = "n/a" if order is None else f"{order:.3f}"
            print(f"{name:<28} h {hc:.5g} -> {hf:.5g}  order {order_txt}")
        return 0
    except (NilheatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
