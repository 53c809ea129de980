"""Heuristic caching baselines and an exact dynamic-programming oracle."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .codec import DFC, DFNC, MASKS, PTDFC, ActionMask
from .env import (
    CacheState,
    SystemAction,
    SystemConfig,
    SystemState,
    action_cost,
    cache_states,
    min_cores,
    validate_action,
)
from .requests import TransitionMatrix, limiting_distribution

__all__ = [
    "ActionMask", "PTDFC", "DFC", "DFNC", "MASKS",
    "RecencyFrequencyBook", "HeuristicPolicy", "mru_lru_policy", "mfu_lfu_policy",
    "OracleTooLarge", "OracleResult", "exact_value_iteration", "evaluate_policy_exact",
]


@dataclass
class RecencyFrequencyBook:
    num_tasks: int
    last_used: list[int] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    slot: int = 0

    def __post_init__(self):
        if not self.last_used:
            self.last_used = [-1] * self.num_tasks
        if not self.counts:
            self.counts = [0] * self.num_tasks

    def record(self, task: int) -> None:
        self.last_used[task] = self.slot
        self.counts[task] += 1
        self.slot += 1


def _fixed_cores(state: SystemState, config: SystemConfig) -> int:
    f = state.request
    if state.cache.output_cached[f]:
        return 0
    fixed = round(0.75 * config.num_cores)
    need = min_cores(config.tasks[f], config, download=not state.cache.input_cached[f])
    return min(max(fixed, need), config.num_cores)


def _heuristic_action(
    state: SystemState,
    config: SystemConfig,
    push_rank: list[float],
    keep_rank: list[float],
    mask: ActionMask,
) -> SystemAction:
    """Shared body of the recency and frequency heuristics.

    ``push_rank[g]`` orders push candidates (highest wins, ``-inf`` excluded);
    ``keep_rank[g]`` orders eviction (lowest evicted first).
    """
    F = config.num_tasks
    cache = state.cache
    f = state.request
    cores = _fixed_cores(state, config)
    push = [0] * F
    d_in = [0] * F
    d_out = [0] * F
    sizes_in = [t.input_bits for t in config.tasks]

    def used() -> int:
        return sum(
            sizes_in[g] * (cache.input_cached[g] + d_in[g])
            + config.tasks[g].output_bits * (cache.output_cached[g] + d_out[g])
            for g in range(F)
        )

    if mask.allow_push and mask.allow_cache:
        ranked = sorted(
            (g for g in range(F) if push_rank[g] > -math.inf),
            key=lambda g: (-push_rank[g], g),
        )
        if ranked:
            g = ranked[0]
            if cache.input_cached[g] + cache.output_cached[g] == 0 and sizes_in[g] <= config.cache_bits:
                push[g] = 1
                d_in[g] = 1
                victims = sorted(
                    [(keep_rank[h], h, 0) for h in range(F) if cache.input_cached[h] and h != g]
                    + [(keep_rank[h], h, 1) for h in range(F) if cache.output_cached[h]]
                )
                while used() > config.cache_bits:
                    _, h, is_out = victims.pop(0)
                    if is_out:
                        d_out[h] = -1
                    else:
                        d_in[h] = -1

    # the reactively downloaded input is kept only when it fits for free
    if mask.allow_cache and cores > 0 and not cache.input_cached[f] and d_in[f] == 0:
        if used() + sizes_in[f] <= config.cache_bits:
            d_in[f] = 1

    action = SystemAction(cores, tuple(push), tuple(d_in), tuple(d_out))
    ok, violations = validate_action(state, action, config)
    if not ok:
        raise AssertionError(f"heuristic produced an invalid action: {violations}")
    return action


def mru_lru_policy(
    state: SystemState, book: RecencyFrequencyBook, config: SystemConfig, mask: ActionMask = PTDFC
) -> SystemAction:
    """Push the most recently used other task; evict the least recently used."""
    f = state.request
    recency = [float(t) if t >= 0 else -math.inf for t in book.last_used]
    push_rank = [-math.inf if g == f else recency[g] for g in range(config.num_tasks)]
    keep_rank = list(recency)
    keep_rank[f] = math.inf
    return _heuristic_action(state, config, push_rank, keep_rank, mask)


def mfu_lfu_policy(
    state: SystemState, book: RecencyFrequencyBook, config: SystemConfig, mask: ActionMask = PTDFC
) -> SystemAction:
    """Push the most frequently used other task; evict the least frequently used."""
    f = state.request
    counts = list(book.counts)
    counts[f] += 1
    push_rank = [
        -math.inf if g == f or counts[g] == 0 else float(counts[g]) for g in range(config.num_tasks)
    ]
    keep_rank = [float(c) for c in counts]
    return _heuristic_action(state, config, push_rank, keep_rank, mask)


class HeuristicPolicy:
    """Stateful wrapper: decides, then records the request in its book."""

    RULES = {"mru-lru": mru_lru_policy, "mfu-lfu": mfu_lfu_policy}

    def __init__(self, name: str, config: SystemConfig, mask: ActionMask = PTDFC):
        self.rule = self.RULES[name]
        self.config = config
        self.mask = mask
        self.book = RecencyFrequencyBook(config.num_tasks)

    def __call__(self, state: SystemState) -> SystemAction:
        action = self.rule(state, self.book, self.config, self.mask)
        self.book.record(state.request)
        return action


class OracleTooLarge(ValueError):
    pass


@dataclass
class OracleResult:
    states: list[SystemState]
    values: np.ndarray
    policy: list[SystemAction]
    discounted_cost: float
    sweeps: int
    residual: float

    def value_of(self, state: SystemState) -> float:
        return float(self.values[self.states.index(state)])

    def to_json(self) -> str:
        rows = [
            {
                "request": s.request,
                "input_cached": list(s.cache.input_cached),
                "output_cached": list(s.cache.output_cached),
                "value": float(v),
                "action": {
                    "reactive_cores": a.reactive_cores,
                    "push": list(a.push),
                    "delta_input": list(a.delta_input),
                    "delta_output": list(a.delta_output),
                },
            }
            for s, v, a in zip(self.states, self.values, self.policy)
        ]
        return json.dumps(
            {
                "discounted_cost": self.discounted_cost,
                "sweeps": self.sweeps,
                "residual": self.residual,
                "table": rows,
            },
            indent=1,
        )


def _best_cores(state: SystemState, config: SystemConfig, mask: ActionMask) -> int:
    f = state.request
    if state.cache.output_cached[f]:
        return 0
    need = min_cores(config.tasks[f], config, download=not state.cache.input_cached[f])
    if not mask.allow_core_choice:
        return need
    probe = SystemAction.zero(config.num_tasks)
    best = None
    for c in range(need, config.num_cores + 1):
        cost = action_cost(state, SystemAction(c, probe.push, probe.delta_input, probe.delta_output), config)
        if best is None or cost.weighted < best[0]:
            best = (cost.weighted, c)
    return best[1]


def _reachable(cache: CacheState, allowed_in, allowed_out, config: SystemConfig, caches_index):
    """Next cache states reachable under per-bit add permissions."""
    options_in = [(0, 1) if s or a else (0,) for s, a in zip(cache.input_cached, allowed_in)]
    options_out = [(0, 1) if s or a else (0,) for s, a in zip(cache.output_cached, allowed_out)]
    for bits_in in itertools.product(*options_in):
        for bits_out in itertools.product(*options_out):
            nxt = CacheState(bits_in, bits_out)
            if nxt in caches_index:
                yield nxt


def _enumerate_options(config: SystemConfig, mask: ActionMask, initial: CacheState | None):
    """Per state: list of (scaled cost, next cache index, action)."""
    F = config.num_tasks
    caches = cache_states(config)
    if initial is not None and initial not in caches:
        raise ValueError("initial cache violates the capacity constraint")
    index = {c: i for i, c in enumerate(caches)}
    states = [SystemState(f, c) for f in range(F) for c in caches]
    pushes = list(itertools.product((0, 1), repeat=F)) if mask.allow_push and mask.allow_cache else [(0,) * F]
    options = []
    for state in states:
        f, cache = state.request, state.cache
        cores = _best_cores(state, config, mask)
        computed = [int(g == f and cores > 0) for g in range(F)]
        opts = []
        for push in pushes:
            base = SystemAction(cores, push, (0,) * F, (0,) * F)
            cost = action_cost(state, base, config).weighted * config.reward_scale
            if not mask.allow_cache:
                nexts = [cache]
            else:
                allowed_in = [min(b + c, 1) for b, c in zip(push, computed)]
                nexts = _reachable(cache, allowed_in, computed, config, index)
            for nxt in nexts:
                action = SystemAction(
                    cores,
                    push,
                    tuple(n - s for n, s in zip(nxt.input_cached, cache.input_cached)),
                    tuple(n - s for n, s in zip(nxt.output_cached, cache.output_cached)),
                )
                opts.append((cost, index[nxt], action))
        options.append(opts)
    return states, caches, options


def oracle_size_estimate(config: SystemConfig) -> int:
    """States times the full product action space that a naive sweep would touch."""
    F, M = config.num_tasks, config.num_cores
    return F * len(cache_states(config)) * (M + 1) * 2**F * 3 ** (2 * F)


def exact_value_iteration(
    config: SystemConfig,
    chain: TransitionMatrix,
    mask: ActionMask = PTDFC,
    tol: float = 1e-9,
    max_sweeps: int = 100_000,
    initial_cache: CacheState | None = None,
    max_size: float = 1e8,
    history: list | None = None,
) -> OracleResult:
    """Optimal discounted cost by synchronous value iteration from V = 0.

    Values are in reward units (cost times ``reward_scale``). The reported
    discounted cost starts from the stationary request distribution and
    ``initial_cache`` (empty by default).
    """
    size = oracle_size_estimate(config)
    if size > max_size:
        raise OracleTooLarge(f"action-state space of about {size:.3g} entries exceeds {max_size:.3g}")
    states, caches, options = _enumerate_options(config, mask, initial_cache)
    nC = len(caches)
    gamma = config.discount
    opt_state = np.concatenate([np.full(len(o), i) for i, o in enumerate(options)])
    opt_cost = np.array([c for o in options for c, _, _ in o])
    opt_next = np.array([n for o in options for _, n, _ in o])
    opt_req = np.array([states[i].request for i in opt_state])
    starts = np.concatenate([[0], np.cumsum([len(o) for o in options])[:-1]])
    q = chain.probs

    values = np.zeros(len(states))
    residual = math.inf
    sweeps = 0
    while residual >= tol and sweeps < max_sweeps:
        expected = q @ values.reshape(config.num_tasks, nC)
        new = np.minimum.reduceat(opt_cost + gamma * expected[opt_req, opt_next], starts)
        residual = float(np.max(np.abs(new - values)))
        values = new
        sweeps += 1
        if history is not None:
            history.append(values.copy())

    expected = q @ values.reshape(config.num_tasks, nC)
    totals = opt_cost + gamma * expected[opt_req, opt_next]
    policy = []
    for i, opts in enumerate(options):
        seg = totals[starts[i] : starts[i] + len(opts)]
        policy.append(opts[int(np.argmin(seg))][2])

    start = initial_cache or CacheState.empty(config.num_tasks)
    p = limiting_distribution(chain)
    table = values.reshape(config.num_tasks, nC)
    phi = float(p @ table[:, caches.index(start)])
    return OracleResult(states, values, policy, phi, sweeps, residual)


def evaluate_policy_exact(
    policy,
    config: SystemConfig,
    chain: TransitionMatrix,
    initial_cache: CacheState | None = None,
) -> float:
    """Discounted cost (reward units) of a deterministic stationary policy.

    Solves the linear policy-evaluation equations over every state.
    """
    caches = cache_states(config)
    index = {c: i for i, c in enumerate(caches)}
    F, nC = config.num_tasks, len(caches)
    n = F * nC
    P = np.zeros((n, n))
    cost = np.zeros(n)
    for f in range(F):
        for ci, cache in enumerate(caches):
            state = SystemState(f, cache)
            action = policy(state)
            ok, violations = validate_action(state, action, config)
            if not ok:
                raise ValueError(f"policy action invalid at {state}: {violations}")
            i = f * nC + ci
            cost[i] = action_cost(state, action, config).weighted * config.reward_scale
            nxt = index[CacheState(
                tuple(s + d for s, d in zip(cache.input_cached, action.delta_input)),
                tuple(s + d for s, d in zip(cache.output_cached, action.delta_output)),
            )]
            for g in range(F):
                P[i, g * nC + nxt] += chain.probs[f, g]
    values = np.linalg.solve(np.eye(n) - config.discount * P, cost)
    start = initial_cache or CacheState.empty(F)
    p = limiting_distribution(chain)
    return float(sum(p[f] * values[f * nC + index[start]] for f in range(F)))
