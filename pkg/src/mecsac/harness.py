"""Experiment orchestration: configs, replicas, sweeps, metrics CSV and summaries."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .baselines import HeuristicPolicy, exact_value_iteration
from .codec import MASKS, ActionMask
from .env import CacheState, ConfigError, SystemConfig, TaskSpec, all_outputs_cached
from .requests import TransitionMatrix, build_chain
from .rollout import EpochStats, eval_rng, evaluate
from .sac import SacConfig, TrainingDivergence, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ALGORITHMS = ("ptdfc", "dfc", "dfnc", "mru-lru", "mfu-lfu", "oracle")
SWEEP_VARS = ("cache_bits", "slot_seconds")
CACHE_GRID = (10000, 20000, 30000, 40000, 50000)
DEADLINE_GRID = (0.015, 0.02, 0.03, 0.04)

COLUMNS = (
    "epoch", "test_epoch", "test_reward", "transmission_cost", "computation_cost",
    "weighted_cost", "seed", "sweep_value", "algo", "sweep_var", "status", "schema",
)


@dataclass
class ExperimentSpec:
    algo: str = "ptdfc"
    system: SystemConfig = field(default_factory=SystemConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    p_max: float = 0.7
    chain: TransitionMatrix | None = None
    sweep_var: str | None = None
    sweep_values: tuple = ()
    seeds: tuple[int, ...] = (0,)
    initial_cache: str = "empty"
    freeze_cache: bool = False
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.sweep_values = tuple(self.sweep_values)
        self.validate()

    def validate(self) -> None:
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; expected one of {ALGORITHMS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.sweep_var is not None:
            if self.sweep_var not in SWEEP_VARS:
                raise ConfigError(f"cannot sweep {self.sweep_var!r}; expected one of {SWEEP_VARS}")
            if not self.sweep_values or any(v <= 0 for v in self.sweep_values):
                raise ConfigError("sweep values must be positive")
        if self.initial_cache not in ("empty", "outputs"):
            raise ConfigError("initial_cache must be 'empty' or 'outputs'")

    def points(self) -> list:
        return list(self.sweep_values) if self.sweep_var else [None]

    def system_at(self, value) -> SystemConfig:
        if self.sweep_var is None:
            return self.system
        if self.sweep_var == "cache_bits":
            value = int(value)
        return self.system.with_overrides(**{self.sweep_var: value})

    def mask(self) -> ActionMask:
        mask = MASKS.get(self.algo, MASKS["ptdfc"])
        if self.freeze_cache:
            mask = mask.restrict(allow_push=False, allow_cache=False)
        return mask


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    test_epoch: int
    test_reward: float
    transmission_cost: float
    computation_cost: float
    weighted_cost: float
    seed: int
    sweep_value: float
    algo: str
    sweep_var: str
    status: str = "ok"
    schema: int = SCHEMA_VERSION


# configuration files


def _tasks_from(data) -> tuple[TaskSpec, ...]:
    return tuple(TaskSpec(int(t["input_bits"]), int(t["output_bits"]), int(t["cycles_per_bit"])) for t in data)


def system_from_dict(data: dict) -> SystemConfig:
    data = dict(data or {})
    if "tasks" in data:
        data["tasks"] = _tasks_from(data["tasks"])
        data.setdefault("num_tasks", len(data["tasks"]))
    unknown = set(data) - {f.name for f in dataclasses.fields(SystemConfig)}
    if unknown:
        raise ConfigError(f"unknown system keys: {sorted(unknown)}")
    return SystemConfig(**data)


def system_to_dict(config: SystemConfig) -> dict:
    data = dataclasses.asdict(config)
    data["tasks"] = [dataclasses.asdict(t) for t in config.tasks]
    return data


def sac_from_dict(data: dict) -> SacConfig:
    data = dict(data or {})
    unknown = set(data) - {f.name for f in dataclasses.fields(SacConfig)}
    if unknown:
        raise ConfigError(f"unknown sac keys: {sorted(unknown)}")
    return SacConfig(**data)


def spec_from_dict(data: dict) -> ExperimentSpec:
    exp = dict(data.get("experiment") or {})
    chain_data = data.get("chain") or {}
    sweep = exp.pop("sweep", None) or {}
    chain = None
    if "probs" in chain_data:
        chain = TransitionMatrix.from_dict(chain_data)
    return ExperimentSpec(
        system=system_from_dict(data.get("system")),
        sac=sac_from_dict(data.get("sac")),
        p_max=float(chain_data.get("p_max", 0.7)),
        chain=chain,
        sweep_var=sweep.get("var"),
        sweep_values=tuple(sweep.get("values", ())),
        **exp,
    )


def load_spec(path) -> ExperimentSpec:
    with open(path) as fh:
        return spec_from_dict(yaml.safe_load(fh) or {})


def spec_to_dict(spec: ExperimentSpec) -> dict:
    exp = {
        "algo": spec.algo,
        "seeds": list(spec.seeds),
        "initial_cache": spec.initial_cache,
        "freeze_cache": spec.freeze_cache,
        "workers": spec.workers,
    }
    if spec.out:
        exp["out"] = spec.out
    if spec.sweep_var:
        exp["sweep"] = {"var": spec.sweep_var, "values": list(spec.sweep_values)}
    sac = dataclasses.asdict(spec.sac)
    sac["hidden"] = list(spec.sac.hidden)
    chain = {"p_max": spec.p_max}
    if spec.chain is not None:
        chain.update(spec.chain.to_dict())
    return {"system": system_to_dict(spec.system), "chain": chain, "sac": sac, "experiment": exp}


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False)


# replicas


def replica_chain(spec: ExperimentSpec, seed: int) -> TransitionMatrix:
    if spec.chain is not None:
        return spec.chain
    rng = np.random.default_rng(np.random.SeedSequence([seed, 104729]))
    return build_chain(spec.system.num_tasks, spec.p_max, rng)


def _initial_cache(spec: ExperimentSpec, config: SystemConfig) -> CacheState | None:
    return all_outputs_cached(config) if spec.initial_cache == "outputs" else None


def _rows(spec: ExperimentSpec, value, seed: int, stats: Iterable[EpochStats]) -> list[MetricsRow]:
    return [
        MetricsRow(
            s.train_epoch, s.test_epoch, s.reward, s.transmission, s.computation, s.weighted,
            seed, float(value) if value is not None else 0.0, spec.algo,
            spec.sweep_var or "", "ok",
        )
        for s in stats
    ]


def run_replica(spec: ExperimentSpec, value, seed: int) -> list[MetricsRow]:
    """Train (or play) one algorithm at one sweep point for one seed."""
    config = spec.system_at(value)
    chain = replica_chain(spec, seed)
    initial = _initial_cache(spec, config)
    mask = spec.mask()
    sac = spec.sac
    if spec.algo in HeuristicPolicy.RULES:
        policy = HeuristicPolicy(spec.algo, config, mask)
        stats = evaluate(policy, config, chain, eval_rng(seed, 0), sac.eval_epochs,
                         sac.epoch_steps, 0, initial)
    elif spec.algo == "oracle":
        result = exact_value_iteration(config, chain, mask, initial_cache=initial)
        lookup = dict(zip(result.states, result.policy))
        stats = evaluate(lookup.__getitem__, config, chain, eval_rng(seed, 0),
                         sac.eval_epochs, sac.epoch_steps, 0, initial)
    else:
        try:
            stats = train(config, chain, sac, seed, mask, initial).curve
        except TrainingDivergence as exc:
            log.warning("replica seed=%s value=%s diverged: %s", seed, value, exc)
            nan = math.nan
            return [MetricsRow(0, 0, nan, nan, nan, nan, seed,
                               float(value) if value is not None else 0.0, spec.algo,
                               spec.sweep_var or "", f"failed: {exc}")]
    return _rows(spec, value, seed, stats)


def _run_job(job):
    spec, value, seed = job
    return run_replica(spec, value, seed)


def run_experiment(spec: ExperimentSpec, out=None) -> list[MetricsRow]:
    """Run every (sweep value, seed) replica and write rows in a fixed order."""
    out = out or spec.out
    jobs = [(spec, value, seed) for value in spec.points() for seed in spec.seeds]
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        open(out, "w").close()
    rows: list[MetricsRow] = []
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            results = pool.map(_run_job, jobs)
            for block in results:
                rows.extend(block)
                if out:
                    append_rows(out, block)
    else:
        for job in jobs:
            block = _run_job(job)
            rows.extend(block)
            if out:
                append_rows(out, block)
    return rows


# metrics CSV


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def append_rows(path, rows: Sequence[MetricsRow]) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c)) for c in COLUMNS])


def emit_rows(rows: Sequence[MetricsRow]) -> str:
    lines = [",".join(COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(getattr(row, c)) for c in COLUMNS))
    return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in dataclasses.fields(MetricsRow)}


def _parse_row(record: dict) -> MetricsRow:
    values = {}
    for name in COLUMNS:
        raw = record[name]
        kind = _TYPES[name]
        if kind in ("int", int):
            values[name] = int(raw)
        elif kind in ("float", float):
            values[name] = float(raw)
        else:
            values[name] = raw
    if values["schema"] != SCHEMA_VERSION:
        raise ValueError(f"unsupported metrics schema {values['schema']}")
    return MetricsRow(**values)


def parse_rows(text: str) -> list[MetricsRow]:
    reader = csv.DictReader(text.splitlines())
    if tuple(reader.fieldnames or ()) != COLUMNS:
        raise ValueError(f"unexpected metrics header {reader.fieldnames}")
    return [_parse_row(r) for r in reader]


def read_rows(path) -> list[MetricsRow]:
    with open(path) as fh:
        return parse_rows(fh.read())


# summaries


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    n: int
    per_seed: tuple = ()  # (seed, value) pairs behind the estimate


def estimate(values: Sequence[float], seeds: Sequence[int] = ()) -> Estimate:
    x = np.asarray(values, dtype=np.float64)
    se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    return Estimate(float(x.mean()), se, len(x), tuple(zip(seeds, map(float, x))))


CONVERGED_WINDOW = 3


def converged_rows(rows: Sequence[MetricsRow], window: int = CONVERGED_WINDOW) -> dict:
    """Per (algo, sweep value, seed): the rows of the last ``window`` evaluation blocks."""
    groups: dict = {}
    for r in rows:
        if r.status != "ok":
            continue
        groups.setdefault((r.algo, r.sweep_value, r.seed), []).append(r)
    out = {}
    for key, rs in groups.items():
        keep = sorted({r.epoch for r in rs})[-window:]
        out[key] = [r for r in rs if r.epoch in keep]
    return out


@dataclass
class Summary:
    sweep_var: str
    cells: dict  # (algo, sweep_value) -> {metric: Estimate}

    def get(self, algo: str, value, metric: str = "weighted_cost") -> Estimate:
        return self.cells[(algo, value)][metric]

    def algos(self) -> list[str]:
        return sorted({a for a, _ in self.cells}, key=lambda a: ALGORITHMS.index(a) if a in ALGORITHMS else 99)

    def values(self) -> list:
        return sorted({v for _, v in self.cells}, key=lambda v: (math.isnan(v), v))


METRICS = ("transmission_cost", "computation_cost", "weighted_cost", "test_reward")


def summarize_rows(rows: Sequence[MetricsRow], window: int = CONVERGED_WINDOW) -> Summary:
    sweep_vars = {r.sweep_var for r in rows}
    if len(sweep_vars) > 1:
        raise ValueError(f"metrics mix sweep variables {sorted(sweep_vars)}")
    per_seed: dict = {}
    for (algo, value, seed), rs in sorted(converged_rows(rows, window).items()):
        cell = per_seed.setdefault((algo, value), {})
        for metric in METRICS:
            cell.setdefault(metric, []).append((seed, float(np.mean([getattr(r, metric) for r in rs]))))
    cells = {
        key: {
            metric: estimate([v for _, v in pairs], [s for s, _ in pairs])
            for metric, pairs in metrics.items()
        }
        for key, metrics in per_seed.items()
    }
    return Summary(sweep_vars.pop() if sweep_vars else "", cells)


def summarize(paths: Sequence, window: int = CONVERGED_WINDOW) -> Summary:
    rows = []
    for p in paths:
        rows.extend(read_rows(p))
    return summarize_rows(rows, window)


EXPECTED_ORDER = (
    ("ptdfc", "dfc"),
    ("dfc", "dfnc"),
    ("ptdfc", "mru-lru"),
    ("ptdfc", "mfu-lfu"),
)


@dataclass(frozen=True)
class Verdict:
    better: str
    worse: str
    sweep_value: float
    gap: float
    se: float

    @property
    def holds(self) -> bool:
        return self.gap >= 0

    @property
    def significant(self) -> bool:
        return self.gap > self.se


def gap_se(a: Estimate, b: Estimate) -> float:
    """Standard error of mean(b) - mean(a).

    Seeds share the request chain and evaluation streams across algorithms,
    so when both estimates cover the same seeds the per-seed differences are
    used; otherwise the larger of the two standard errors.
    """
    da, db = dict(a.per_seed), dict(b.per_seed)
    if len(da) > 1 and da.keys() == db.keys():
        diffs = np.array([db[k] - da[k] for k in sorted(da)])
        return float(diffs.std(ddof=1) / np.sqrt(len(diffs)))
    return max(a.se, b.se)


def ordering_verdicts(summary: Summary, metric: str = "weighted_cost") -> list[Verdict]:
    verdicts = []
    for value in summary.values():
        for better, worse in EXPECTED_ORDER:
            if (better, value) in summary.cells and (worse, value) in summary.cells:
                a = summary.get(better, value, metric)
                b = summary.get(worse, value, metric)
                verdicts.append(Verdict(better, worse, value, b.mean - a.mean, gap_se(a, b)))
    return verdicts


def non_increasing(summary: Summary, algo: str, metric: str) -> list[tuple]:
    """Consecutive sweep steps where the cost rises by more than one standard error."""
    values = [v for v in summary.values() if (algo, v) in summary.cells]
    bad = []
    for lo, hi in zip(values[:-1], values[1:]):
        a, b = summary.get(algo, lo, metric), summary.get(algo, hi, metric)
        se = gap_se(a, b)
        if b.mean - a.mean > se:
            bad.append((lo, hi, a.mean, b.mean, se))
    return bad


def format_summary(summary: Summary) -> str:
    head = f"{'algo':<8} {summary.sweep_var or 'point':>12} {'n':>3} " \
           f"{'B mean':>12} {'B se':>10} {'E mean':>12} {'E se':>10} {'B+lE':>12} {'se':>10}"
    lines = [head, "-" * len(head)]
    for value in summary.values():
        for algo in summary.algos():
            if (algo, value) not in summary.cells:
                continue
            c = summary.cells[(algo, value)]
            b, e, w = c["transmission_cost"], c["computation_cost"], c["weighted_cost"]
            lines.append(
                f"{algo:<8} {value:>12.6g} {w.n:>3} {b.mean:>12.5g} {b.se:>10.3g} "
                f"{e.mean:>12.5g} {e.se:>10.3g} {w.mean:>12.5g} {w.se:>10.3g}"
            )
    verdicts = ordering_verdicts(summary)
    if verdicts:
        lines.append("")
        for v in verdicts:
            mark = "ok" if v.holds and v.significant else ("weak" if v.holds else "VIOLATED")
            lines.append(
                f"{v.better} <= {v.worse} at {v.sweep_value:g}: gap {v.gap:.4g} (se {v.se:.3g}) {mark}"
            )
    return "\n".join(lines)
