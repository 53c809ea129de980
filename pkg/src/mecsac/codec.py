"""Translation between the continuous SAC space and valid discrete actions.

Raw action layout (length 1 + 3F, every entry in [-1, 1])::

    [cores, push_0..push_{F-1}, d_in_0..d_in_{F-1}, d_out_0..d_out_{F-1}]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .env import (
    SystemAction,
    SystemConfig,
    SystemState,
    CacheState,
    delta_bounds,
    min_cores,
    validate_action,
)


class CorrectionError(RuntimeError):
    """The corrected action is still invalid. Indicates a bug, never user error."""


@dataclass(frozen=True)
class ActionMask:
    allow_push: bool = True
    allow_cache: bool = True
    allow_core_choice: bool = True

    def restrict(self, **kwargs) -> "ActionMask":
        return ActionMask(**{**self.__dict__, **kwargs})


PTDFC = ActionMask(True, True, True)
DFC = ActionMask(False, True, True)
DFNC = ActionMask(False, False, True)
MASKS = {"ptdfc": PTDFC, "dfc": DFC, "dfnc": DFNC}


def state_dim(num_tasks: int) -> int:
    return 3 * num_tasks


def action_dim(num_tasks: int) -> int:
    return 1 + 3 * num_tasks


def encode_state(state: SystemState) -> np.ndarray:
    F = len(state.cache.input_cached)
    x = -np.ones(3 * F)
    x[state.request] = 1.0
    x[F : 2 * F] = 2.0 * np.array(state.cache.input_cached) - 1.0
    x[2 * F :] = 2.0 * np.array(state.cache.output_cached) - 1.0
    return x


def decode_state(x: np.ndarray) -> SystemState:
    F = len(x) // 3
    bits = tuple(int(v > 0) for v in x)
    if sum(bits[:F]) != 1:
        raise ValueError("request block must hold exactly one +1")
    return SystemState(bits[:F].index(1), CacheState(bits[F : 2 * F], bits[2 * F :]))


def quantize_level(value: float, lo: int, hi: int) -> int:
    """Uniform thresholding of ``value`` in [lo, hi] onto the integers lo..hi."""
    width = hi - lo
    step = width / (width + 1)
    level = lo + math.floor((value - lo) / step)
    return min(max(level, lo), hi)


def _to_range(raw: float, lo: float, hi: float) -> float:
    return lo + (raw + 1.0) * 0.5 * (hi - lo)


def _from_range(value: float, lo: float, hi: float) -> float:
    return 2.0 * (value - lo) / (hi - lo) - 1.0


def quantize(raw: np.ndarray, config: SystemConfig) -> SystemAction:
    F, M = config.num_tasks, config.num_cores
    raw = [float(v) for v in raw]
    cores = quantize_level(_to_range(raw[0], 0, M), 0, M)
    push = tuple(quantize_level(_to_range(v, 0, 1), 0, 1) for v in raw[1 : 1 + F])
    d_in = tuple(quantize_level(v, -1, 1) for v in raw[1 + F : 1 + 2 * F])
    d_out = tuple(quantize_level(v, -1, 1) for v in raw[1 + 2 * F :])
    return SystemAction(cores, push, d_in, d_out)


def dequantize(action: SystemAction, config: SystemConfig) -> np.ndarray:
    """A raw action that quantizes back to ``action``."""
    M = config.num_cores
    return np.array(
        [_from_range(action.reactive_cores, 0, M)]
        + [_from_range(b, 0, 1) for b in action.push]
        + [float(d) for d in action.delta_input]
        + [float(d) for d in action.delta_output]
    )


class _Draft:
    """Mutable working copy of an action while the rules run."""

    def __init__(self, action: SystemAction):
        self.cores = action.reactive_cores
        self.push = list(action.push)
        self.d_in = list(action.delta_input)
        self.d_out = list(action.delta_output)

    def freeze(self) -> SystemAction:
        return SystemAction(self.cores, tuple(self.push), tuple(self.d_in), tuple(self.d_out))

    def used_bits(self, state: SystemState, config: SystemConfig) -> int:
        c = state.cache
        return sum(
            t.input_bits * (c.input_cached[f] + self.d_in[f])
            + t.output_bits * (c.output_cached[f] + self.d_out[f])
            for f, t in enumerate(config.tasks)
        )


def _clip(d: _Draft, state: SystemState) -> None:
    inp, out = delta_bounds(state, d.push, d.cores)
    d.d_in = [min(max(v, lo), hi) for v, (lo, hi) in zip(d.d_in, inp)]
    d.d_out = [min(max(v, lo), hi) for v, (lo, hi) in zip(d.d_out, out)]


def correct(
    state: SystemState,
    quantized: SystemAction,
    raw: np.ndarray,
    config: SystemConfig,
    mask: ActionMask = PTDFC,
    trace: list | None = None,
) -> SystemAction:
    """Repair a quantized action into the valid action space.

    Rules run in the order clip, cores, push-if-cached, single push, clip,
    cache pushed input, opportunistic reactive caching, eviction, clip. When
    ``trace`` is a list, ``(rule, action_after)`` pairs are appended to it.
    """
    F = config.num_tasks
    raw = np.asarray(raw, dtype=np.float64)
    raw_push = raw[1 : 1 + F]
    raw_in = raw[1 + F : 1 + 2 * F]
    raw_out = raw[1 + 2 * F :]
    f = state.request
    cache = state.cache
    d = _Draft(quantized)

    def log(rule: str) -> None:
        if trace is not None:
            trace.append((rule, d.freeze()))

    log("quantized")
    if not mask.allow_push:
        d.push = [0] * F
    if not mask.allow_cache:
        d.push = [0] * F
        d.d_in = [0] * F
        d.d_out = [0] * F
    if not mask.allow_core_choice:
        d.cores = 0
    log("mask")

    _clip(d, state)
    log("rule7")

    # rule 1: latency-feasible cores, none when the output is already local
    if cache.output_cached[f]:
        d.cores = 0
    else:
        need = min_cores(config.tasks[f], config, download=not cache.input_cached[f])
        d.cores = min(max(d.cores, need), config.num_cores)
    log("rule1")

    # rule 2: nothing to push for a task with data already cached
    for g in range(F):
        if cache.input_cached[g] + cache.output_cached[g] >= 1:
            d.push[g] = 0
    log("rule2")

    # rule 3: keep the single push with the largest raw score
    pushed = [g for g in range(F) if d.push[g]]
    if len(pushed) > 1:
        keep = max(pushed, key=lambda g: (raw_push[g], -g))
        d.push = [int(g == keep) for g in range(F)]
    log("rule3")

    _clip(d, state)
    log("rule7")

    # rule 4: a pushed input has to be cached
    for g in range(F):
        if d.push[g]:
            d.d_in[g] = 1
    log("rule4")

    # rule 6: add the requested task's reactive data while it still fits
    if mask.allow_cache and d.cores > 0:
        candidates = [(raw_in[f], 0, "in"), (raw_out[f], 1, "out")]
        for _, _, kind in sorted(candidates, key=lambda c: (-c[0], c[1])):
            used = d.used_bits(state, config)
            if kind == "in" and not cache.input_cached[f] and d.d_in[f] == 0:
                if used + config.tasks[f].input_bits <= config.cache_bits:
                    d.d_in[f] = 1
            elif kind == "out" and not cache.output_cached[f] and d.d_out[f] == 0:
                if used + config.tasks[f].output_bits <= config.cache_bits:
                    d.d_out[f] = 1
    log("rule6")

    # rule 5: evict by ascending raw score until the capacity constraint holds
    while d.used_bits(state, config) > config.cache_bits:
        candidates = []
        for g in range(F):
            if cache.input_cached[g] + d.d_in[g] == 1 and not d.push[g]:
                candidates.append((raw_in[g], g, 0))
            if cache.output_cached[g] + d.d_out[g] == 1:
                candidates.append((raw_out[g], g, 1))
        if not candidates:
            # the pushed input alone overflows the cache: drop the push
            g = d.push.index(1)
            d.push[g] = 0
            d.d_in[g] = 0
            continue
        _, g, is_out = min(candidates)
        if is_out:
            d.d_out[g] -= 1
        else:
            d.d_in[g] -= 1
    log("rule5")

    _clip(d, state)
    log("rule7")

    action = d.freeze()
    ok, violations = validate_action(state, action, config)
    if not ok:
        raise CorrectionError(f"corrected action still invalid: {violations}")
    return action


def decode_action(
    raw: np.ndarray, state: SystemState, config: SystemConfig, mask: ActionMask = PTDFC
) -> SystemAction:
    """Quantize then correct: the action actually executed for ``raw``."""
    return correct(state, quantize(raw, config), raw, config, mask)


def format_trace(trace: list, state: SystemState) -> str:
    lines = [f"state: request={state.request} input={state.cache.input_cached} "
             f"output={state.cache.output_cached}"]
    previous = None
    for rule, action in trace:
        marker = "" if previous is None or action != previous else "  (unchanged)"
        lines.append(
            f"{rule:>9}: cores={action.reactive_cores} push={action.push} "
            f"d_in={action.delta_input} d_out={action.delta_output}{marker}"
        )
        previous = action
    return "\n".join(lines)

