"""System model of a single-user single-server MEC network.

Tasks are indexed from 0 internally. Bits and cores are exact integers and
costs are float64.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised for an infeasible or malformed system configuration."""


class InvalidActionError(ValueError):
    """Raised when an action outside the valid action space reaches the cost model."""


# ratios within this relative distance of an integer count as exact
_INTEGER_RTOL = 1e-12


@dataclass(frozen=True)
class TaskSpec:
    input_bits: int
    output_bits: int
    cycles_per_bit: int

    @property
    def workload(self) -> int:
        """Cycles needed to compute the task."""
        return self.input_bits * self.cycles_per_bit


@dataclass(frozen=True)
class SystemConfig:
    num_tasks: int = 4
    num_cores: int = 8
    core_freq: float = 1.7e8
    switched_capacitance: float = 1e-19
    cache_bits: int = 40000
    slot_seconds: float = 0.02
    energy_weight: float = 1.0
    discount: float = 0.99
    reward_scale: float = 1e-6
    tasks: tuple[TaskSpec, ...] = field(default=())

    def __post_init__(self):
        if not self.tasks:
            object.__setattr__(
                self, "tasks", tuple(TaskSpec(16000, 30000, 800) for _ in range(self.num_tasks))
            )
        else:
            object.__setattr__(self, "tasks", tuple(self.tasks))
        self.validate()

    def validate(self) -> None:
        if self.num_tasks < 1 or len(self.tasks) != self.num_tasks:
            raise ConfigError(f"expected {self.num_tasks} tasks, got {len(self.tasks)}")
        if self.num_cores < 1:
            raise ConfigError("num_cores must be positive")
        for name in ("core_freq", "switched_capacitance", "slot_seconds", "reward_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.cache_bits < 0 or self.energy_weight < 0:
            raise ConfigError("cache_bits and energy_weight must be non-negative")
        if not 0 <= self.discount < 1:
            raise ConfigError("discount must lie in [0, 1)")
        for f, task in enumerate(self.tasks):
            if min(task.input_bits, task.output_bits, task.cycles_per_bit) <= 0:
                raise ConfigError(f"task {f} has a non-positive field")
            # downloading needs strictly more cores than the pure compute ratio
            if min_cores(task, self, download=True) > self.num_cores:
                raise ConfigError(
                    f"task {f} cannot meet the {self.slot_seconds}s deadline "
                    f"with {self.num_cores} cores"
                )

    def with_overrides(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class CacheState:
    input_cached: tuple[int, ...]
    output_cached: tuple[int, ...]

    @classmethod
    def empty(cls, num_tasks: int) -> "CacheState":
        return cls((0,) * num_tasks, (0,) * num_tasks)

    def used_bits(self, config: SystemConfig) -> int:
        return sum(
            t.input_bits * si + t.output_bits * so
            for t, si, so in zip(config.tasks, self.input_cached, self.output_cached)
        )


@dataclass(frozen=True)
class SystemState:
    request: int
    cache: CacheState


@dataclass(frozen=True)
class SystemAction:
    reactive_cores: int
    push: tuple[int, ...]
    delta_input: tuple[int, ...]
    delta_output: tuple[int, ...]

    @classmethod
    def zero(cls, num_tasks: int) -> "SystemAction":
        z = (0,) * num_tasks
        return cls(0, z, z, z)


@dataclass(frozen=True)
class CostBreakdown:
    reactive_bandwidth: float
    proactive_bandwidth: float
    energy: float
    weighted: float

    @property
    def bandwidth(self) -> float:
        return self.reactive_bandwidth + self.proactive_bandwidth


def compute_ratio(task: TaskSpec, config: SystemConfig) -> float:
    """Cores needed to finish the computation exactly at the deadline."""
    return task.workload / (config.slot_seconds * config.core_freq)


def min_cores(task: TaskSpec, config: SystemConfig, download: bool = False) -> int:
    """Smallest core count meeting the slot deadline.

    With ``download=True`` the input also has to be transmitted inside the
    slot, so a ratio that is an exact integer needs one more core to leave a
    positive transmission window.
    """
    ratio = compute_ratio(task, config)
    nearest = round(ratio)
    if nearest >= 1 and abs(ratio - nearest) <= _INTEGER_RTOL * nearest:
        return nearest + 1 if download else nearest
    return max(1, math.ceil(ratio))


def reactive_cost(state: SystemState, cores: int, config: SystemConfig) -> tuple[float, float]:
    """Reactive bandwidth and computation energy for serving ``state.request``."""
    f = state.request
    cache = state.cache
    if cache.output_cached[f]:
        return 0.0, 0.0
    task = config.tasks[f]
    download = not cache.input_cached[f]
    if cores < min_cores(task, config, download=download) or cores > config.num_cores:
        raise InvalidActionError(f"{cores} cores cannot serve task {f} within the slot")
    energy = config.switched_capacitance * cores**2 * config.core_freq**2 * task.workload
    if not download:
        return 0.0, energy
    window = config.slot_seconds - task.workload / (cores * config.core_freq)
    if window <= 0:
        raise InvalidActionError(f"no transmission window left with {cores} cores")
    return task.input_bits / window, energy


def proactive_cost(push: Sequence[int], config: SystemConfig) -> float:
    bits = sum(t.input_bits * b for t, b in zip(config.tasks, push))
    return bits / config.slot_seconds


def delta_bounds(state: SystemState, push: Sequence[int], cores: int) -> tuple[list, list]:
    """Per-task (lower, upper) bounds on the input and output cache deltas."""
    cache = state.cache
    computed = [int(f == state.request and cores > 0) for f in range(len(push))]
    inp = [
        (-si, min(b + c, 1 - si)) for si, b, c in zip(cache.input_cached, push, computed)
    ]
    out = [(-so, min(c, 1 - so)) for so, c in zip(cache.output_cached, computed)]
    return inp, out


def validate_action(
    state: SystemState, action: SystemAction, config: SystemConfig
) -> tuple[bool, list[str]]:
    """Check membership in the valid action space; never raises."""
    F = config.num_tasks
    violations: list[str] = []
    vectors = (action.push, action.delta_input, action.delta_output)
    if any(len(v) != F for v in vectors):
        return False, ["shape: action vectors must have one entry per task"]
    if not 0 <= action.reactive_cores <= config.num_cores:
        violations.append(f"range: reactive_cores={action.reactive_cores} outside 0..{config.num_cores}")
    if any(b not in (0, 1) for b in action.push):
        violations.append("range: push entries must be 0 or 1")
    if any(d not in (-1, 0, 1) for d in action.delta_input + action.delta_output):
        violations.append("range: cache deltas must be -1, 0 or 1")
    if violations:
        return False, violations

    f = state.request
    cache = state.cache
    cores = action.reactive_cores
    if cache.output_cached[f]:
        if cores != 0:
            violations.append("eq2: cores must be 0 when the requested output is cached")
    else:
        need = min_cores(config.tasks[f], config, download=not cache.input_cached[f])
        if cores < need:
            violations.append(f"latency: {cores} cores < {need} needed for task {f}")

    inp, out = delta_bounds(state, action.push, cores)
    for g, (d, (lo, hi)) in enumerate(zip(action.delta_input, inp)):
        if not lo <= d <= hi:
            violations.append(f"eq8: delta_input[{g}]={d} outside [{lo}, {hi}]")
    for g, (d, (lo, hi)) in enumerate(zip(action.delta_output, out)):
        if not lo <= d <= hi:
            violations.append(f"eq9: delta_output[{g}]={d} outside [{lo}, {hi}]")

    used = sum(
        t.input_bits * (si + di) + t.output_bits * (so + do)
        for t, si, di, so, do in zip(
            config.tasks,
            cache.input_cached,
            action.delta_input,
            cache.output_cached,
            action.delta_output,
        )
    )
    if used > config.cache_bits:
        violations.append(f"eq10: updated cache uses {used} > {config.cache_bits} bits")
    return not violations, violations


def apply_cache_update(cache: CacheState, action: SystemAction) -> CacheState:
    inp = tuple(s + d for s, d in zip(cache.input_cached, action.delta_input))
    out = tuple(s + d for s, d in zip(cache.output_cached, action.delta_output))
    if any(b not in (0, 1) for b in inp + out):
        raise InvalidActionError("cache update leaves a bit outside {0, 1}")
    return CacheState(inp, out)


def action_cost(state: SystemState, action: SystemAction, config: SystemConfig) -> CostBreakdown:
    b_r, e_r = reactive_cost(state, action.reactive_cores, config)
    b_p = proactive_cost(action.push, config)
    return CostBreakdown(b_r, b_p, e_r, b_r + b_p + config.energy_weight * e_r)


def step(
    state: SystemState, action: SystemAction, next_request: int, config: SystemConfig
) -> tuple[SystemState, CostBreakdown, float]:
    """Advance one slot. Returns the next state, the slot cost and the reward."""
    ok, violations = validate_action(state, action, config)
    if not ok:
        raise InvalidActionError("; ".join(violations))
    cost = action_cost(state, action, config)
    next_state = SystemState(next_request, apply_cache_update(state.cache, action))
    return next_state, cost, -config.reward_scale * cost.weighted


def cache_states(config: SystemConfig) -> list[CacheState]:
    """All cache states satisfying the capacity constraint, in a fixed order."""
    F = config.num_tasks
    states = []
    for bits in itertools.product((0, 1), repeat=2 * F):
        cache = CacheState(bits[:F], bits[F:])
        if cache.used_bits(config) <= config.cache_bits:
            states.append(cache)
    return states


def all_outputs_cached(config: SystemConfig) -> CacheState:
    cache = CacheState((0,) * config.num_tasks, (1,) * config.num_tasks)
    if cache.used_bits(config) > config.cache_bits:
        raise ConfigError("cache too small to hold every output")
    return cache


class MecEnv:
    """Stateful wrapper that samples requests from a chain and steps the model."""

    def __init__(self, config: SystemConfig, chain, rng: np.random.Generator, initial_cache=None):
        self.config = config
        self.chain = chain
        self.rng = rng
        self.initial_cache = initial_cache or CacheState.empty(config.num_tasks)
        self.state: SystemState | None = None

    def reset(self) -> SystemState:
        first = self.chain.sample_initial(self.rng)
        self.state = SystemState(first, self.initial_cache)
        return self.state

    def step(self, action: SystemAction) -> tuple[SystemState, CostBreakdown, float]:
        nxt = self.chain.sample_next(self.state.request, self.rng)
        self.state, cost, reward = step(self.state, action, nxt, self.config)
        return self.state, cost, reward
