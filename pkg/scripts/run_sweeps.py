"""Run the default comparison and both parameter sweeps into results/.

Each finished replica is appended to ``results/<name>.partial.csv``; rerunning
the script skips replicas already present, and the partial file is renamed to
``<name>.csv`` once every replica is done.

    python3 scripts/run_sweeps.py [--config configs/experiment.yaml] [--only defaults]
"""

import argparse
import dataclasses
import logging
import time
from pathlib import Path

from mecsac import harness

ROOT = Path(__file__).resolve().parents[1]
ALGOS = ("ptdfc", "dfc", "dfnc", "mru-lru", "mfu-lfu")
SWEEPS = {
    "defaults": (None, ()),
    "slot_seconds": ("slot_seconds", harness.DEADLINE_GRID),
    "cache_bits": ("cache_bits", harness.CACHE_GRID),
}


def run_sweep(base: harness.ExperimentSpec, name: str, results: Path, seeds=None) -> Path:
    sweep_var, values = SWEEPS[name]
    if seeds and sweep_var:
        base = dataclasses.replace(base, seeds=tuple(seeds))
    final = results / f"{name}.csv"
    if final.exists():
        return final
    partial = results / f"{name}.partial.csv"
    done = {(r.algo, r.sweep_value, r.seed) for r in harness.read_rows(partial)} if partial.exists() else set()
    for algo in ALGOS:
        spec = dataclasses.replace(base, algo=algo, sweep_var=sweep_var, sweep_values=values, out=None)
        for value in spec.points():
            for seed in spec.seeds:
                key = (algo, float(value) if value is not None else 0.0, seed)
                if key in done:
                    continue
                start = time.perf_counter()
                rows = harness.run_replica(spec, value, seed)
                harness.append_rows(partial, rows)
                logging.info("%s %s=%s seed=%d: %.0fs", algo, sweep_var or "-", value, seed,
                             time.perf_counter() - start)
    partial.rename(final)
    return final


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=ROOT / "configs" / "experiment.yaml", type=Path)
    parser.add_argument("--results", default=ROOT / "results", type=Path)
    parser.add_argument("--only", choices=sorted(SWEEPS), action="append")
    parser.add_argument("--sweep-seeds", default="0,1,2",
                        help="seeds for the two parameter sweeps; the default comparison keeps the config's seeds")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = harness.load_spec(args.config)
    args.results.mkdir(parents=True, exist_ok=True)
    for name in args.only or list(SWEEPS):
        seeds = [int(x) for x in args.sweep_seeds.split(",")] if args.sweep_seeds else None
        path = run_sweep(base, name, args.results, seeds)
        print(harness.format_summary(harness.summarize([path])), flush=True)


if __name__ == "__main__":
    main()
