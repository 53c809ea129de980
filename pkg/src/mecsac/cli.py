"""Command line entry point: ``mecsac {train,sweep,summarize,trace-correction,oracle}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from . import harness
from .baselines import exact_value_iteration
from .codec import MASKS, correct, format_trace, quantize
from .env import CacheState, SystemState
from .harness import ExperimentSpec


def _parse_sweep(text: str) -> tuple[str, tuple]:
    var, _, values = text.partition("=")
    if not values:
        raise argparse.ArgumentTypeError("expected <var>=<v1,v2,...>")
    return var.strip(), tuple(float(v) for v in values.split(","))


def _parse_bits(text: str, n: int) -> tuple[int, ...]:
    bits = tuple(int(c) for c in text.replace(",", ""))
    if len(bits) != n or any(b not in (0, 1) for b in bits):
        raise SystemExit(f"expected {n} bits, got {text!r}")
    return bits


def _spec(args) -> ExperimentSpec:
    spec = harness.load_spec(args.config) if args.config else ExperimentSpec()
    changes = {}
    if getattr(args, "algo", None):
        changes["algo"] = args.algo
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = tuple(args.seed)
    if getattr(args, "out", None):
        changes["out"] = args.out
    if getattr(args, "sweep", None):
        changes["sweep_var"], changes["sweep_values"] = args.sweep
    return dataclasses.replace(spec, **changes)


def cmd_run(args) -> int:
    spec = _spec(args)
    if args.command == "sweep" and not spec.sweep_var:
        raise SystemExit("sweep needs --sweep <var>=<values> or a sweep section in the config")
    if args.command == "sweep" and args.algos:
        algos = args.algos.split(",")
    else:
        algos = [spec.algo]
    out = spec.out or "metrics.csv"
    open(out, "w").close()
    for algo in algos:
        sub = dataclasses.replace(spec, algo=algo, out=None)
        rows = harness.run_experiment(sub)
        harness.append_rows(out, rows)
    print(f"wrote {out}")
    return 0


def cmd_summarize(args) -> int:
    summary = harness.summarize(args.files, args.window)
    print(harness.format_summary(summary))
    return 0


def cmd_trace(args) -> int:
    spec = _spec(args)
    config = spec.system
    F = config.num_tasks
    state = SystemState(
        args.request,
        CacheState(_parse_bits(args.inputs or "0" * F, F), _parse_bits(args.outputs or "0" * F, F)),
    )
    raw = np.array([float(v) for v in args.raw.split(",")])
    if len(raw) != 1 + 3 * F:
        raise SystemExit(f"raw action needs {1 + 3 * F} components")
    trace: list = []
    correct(state, quantize(raw, config), raw, config, MASKS[args.mask], trace=trace)
    print(format_trace(trace, state))
    return 0


def cmd_oracle(args) -> int:
    spec = _spec(args)
    chain = harness.replica_chain(spec, spec.seeds[0])
    result = exact_value_iteration(spec.system, chain, MASKS[args.mask], max_size=args.max_size)
    text = result.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"optimal discounted cost {result.discounted_cost:.6g} (reward units); wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mecsac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sweep=False):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--algo", choices=harness.ALGORITHMS)
        p.add_argument("--seed", type=int, action="append", help="repeatable")
        p.add_argument("--out")
        if sweep:
            p.add_argument("--sweep", type=_parse_sweep, help="<var>=<v1,v2,...>")

    p = sub.add_parser("train", help="train or play one algorithm")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep cache_bits or slot_seconds")
    common(p, sweep=True)
    p.add_argument("--algos", help="comma-separated algorithms to run in turn")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("summarize", help="aggregate metrics CSV files")
    p.add_argument("files", nargs="+")
    p.add_argument("--window", type=int, default=harness.CONVERGED_WINDOW,
                   help="final evaluation blocks averaged per seed")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("trace-correction", help="show the rule-by-rule correction of a raw action")
    p.add_argument("--config")
    p.add_argument("--request", type=int, required=True, help="0-based task index")
    p.add_argument("--inputs", help="input cache bits, e.g. 0100")
    p.add_argument("--outputs", help="output cache bits, e.g. 0000")
    p.add_argument("--raw", required=True, help="comma-separated raw action in [-1, 1]")
    p.add_argument("--mask", choices=sorted(MASKS), default="ptdfc")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("oracle", help="solve a small instance exactly")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, action="append")
    p.add_argument("--out")
    p.add_argument("--mask", choices=sorted(MASKS), default="ptdfc")
    p.add_argument("--max-size", type=float, default=1e8)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
