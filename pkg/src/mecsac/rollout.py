"""Policy rollouts and per-epoch cost statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .env import CacheState, MecEnv, SystemAction, SystemConfig, SystemState

Policy = Callable[[SystemState], SystemAction]


@dataclass(frozen=True)
class EpochStats:
    train_epoch: int
    test_epoch: int
    reward: float
    transmission: float
    computation: float
    weighted: float


def eval_rng(seed: int, block: int) -> np.random.Generator:
    """Request stream for evaluation block ``block``; shared by every algorithm."""
    return np.random.default_rng(np.random.SeedSequence([seed, 7919, block]))


def evaluate(
    policy: Policy,
    config: SystemConfig,
    chain,
    rng: np.random.Generator,
    epochs: int,
    epoch_steps: int,
    train_epoch: int = 0,
    initial_cache: CacheState | None = None,
) -> list[EpochStats]:
    """Run ``epochs`` consecutive test epochs from a fresh start."""
    env = MecEnv(config, chain, rng, initial_cache)
    state = env.reset()
    stats = []
    for e in range(epochs):
        b = np.empty(epoch_steps)
        en = np.empty(epoch_steps)
        r = np.empty(epoch_steps)
        for t in range(epoch_steps):
            state, cost, reward = env.step(policy(state))
            b[t] = cost.bandwidth
            en[t] = cost.energy
            r[t] = reward
        B, E = float(b.mean()), float(en.mean())
        stats.append(EpochStats(train_epoch, e, float(r.mean()), B, E, B + config.energy_weight * E))
    return stats


def has_converged(block_means: Sequence[float], tol: float, windows: int) -> bool:
    """True once ``windows`` consecutive block-to-block relative changes fall below ``tol``."""
    if len(block_means) < windows + 1:
        return False
    recent = block_means[-(windows + 1) :]
    for prev, cur in zip(recent[:-1], recent[1:]):
        scale = max(abs(prev), 1e-12)
        if abs(cur - prev) / scale >= tol:
            return False
    return True
