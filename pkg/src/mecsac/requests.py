"""First-order request Markov chain over the task set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ConfigError


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TransitionMatrix:
    probs: np.ndarray
    favored: tuple[int, ...]

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "favored", tuple(int(j) for j in self.favored))
        object.__setattr__(self, "_cdf", np.cumsum(probs, axis=1))

    @property
    def num_tasks(self) -> int:
        return self.probs.shape[0]

    def check(self) -> None:
        p = self.probs
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ConfigError("transition matrix must be square")
        if np.any(p < 0) or np.any(p > 1):
            raise ConfigError("transition probabilities must lie in [0, 1]")
        if np.max(np.abs(p.sum(axis=1) - 1)) > 1e-12:
            raise ConfigError("rows must sum to 1")
        if not is_irreducible(p):
            raise ConfigError("request chain is not irreducible")

    def sample_next(self, current: int, rng: np.random.Generator) -> int:
        return sample_next(self, current, rng)

    def sample_initial(self, rng: np.random.Generator) -> int:
        p = limiting_distribution(self)
        return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist(), "favored": list(self.favored)}

    @classmethod
    def from_dict(cls, data: dict) -> "TransitionMatrix":
        probs = np.array(data["probs"], dtype=np.float64)
        favored = data.get("favored") or [int(np.argmax(row)) for row in probs]
        chain = cls(probs, tuple(favored))
        chain.check()
        return chain


def is_irreducible(probs: np.ndarray) -> bool:
    reach = (np.asarray(probs) > 0).astype(np.int64)
    n = reach.shape[0]
    closure = np.eye(n, dtype=np.int64) | reach
    for _ in range(n):
        closure = ((closure @ closure) > 0).astype(np.int64)
    return bool(closure.all())


def build_chain(num_tasks: int, p_max: float, rng: np.random.Generator) -> TransitionMatrix:
    """Random chain where each task has one favored successor taken with ``p_max``.

    The leftover mass goes to the other tasks in proportion to uniform draws.
    """
    if num_tasks < 2:
        raise ConfigError("a request chain needs at least two tasks")
    if not 0 < p_max < 1:
        raise ConfigError("p_max must lie in (0, 1)")
    F = num_tasks
    probs = np.zeros((F, F))
    favored = []
    for i in range(F):
        j = int(rng.choice([k for k in range(F) if k != i]))
        others = [k for k in range(F) if k != j]
        weights = np.abs(rng.random(len(others)))
        while weights.sum() == 0:
            weights = np.abs(rng.random(len(others)))
        probs[i, others] = (1 - p_max) * weights / weights.sum()
        probs[i, j] = p_max
        favored.append(j)
    chain = TransitionMatrix(probs, tuple(favored))
    chain.check()
    return chain


def sample_next(chain: TransitionMatrix, current: int, rng: np.random.Generator) -> int:
    cdf = chain._cdf[current]
    j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(j, chain.num_tasks - 1)


def limiting_distribution(
    chain: TransitionMatrix, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray:
    """Stationary distribution by power iteration on the lazy chain.

    The lazy chain (I + Q) / 2 shares the stationary vector and cannot
    oscillate on periodic chains.
    """
    q = chain.probs
    lazy = 0.5 * (q + np.eye(q.shape[0]))
    p = np.full(q.shape[0], 1.0 / q.shape[0])
    for _ in range(max_iter):
        nxt = p @ lazy
        nxt /= nxt.sum()
        if np.abs(nxt @ q - nxt).sum() < tol:
            return nxt
        p = nxt
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")
