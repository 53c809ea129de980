from functools import lru_cache

import numpy as np
import pytest

from mecsac.env import CacheState, SystemConfig, SystemState, TaskSpec, cache_states
from mecsac.requests import TransitionMatrix


@pytest.fixture
def config():
    return SystemConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_task_config(**overrides):
    return SystemConfig(num_tasks=2, **overrides)


def uniform_chain(num_tasks):
    probs = np.full((num_tasks, num_tasks), 1.0 / num_tasks)
    return TransitionMatrix(probs, tuple((i + 1) % num_tasks for i in range(num_tasks)))


@lru_cache(maxsize=None)
def _caches(config):
    return cache_states(config)


def random_state(config, rng):
    caches = _caches(config)
    cache = caches[rng.integers(len(caches))]
    return SystemState(int(rng.integers(config.num_tasks)), cache)


def hetero_config():
    tasks = (
        TaskSpec(16000, 30000, 800),
        TaskSpec(12000, 20000, 900),
        TaskSpec(9000, 25000, 1000),
        TaskSpec(14000, 18000, 700),
    )
    return SystemConfig(tasks=tasks, cache_bits=45000)


def cache(inputs, outputs):
    return CacheState(tuple(inputs), tuple(outputs))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    report = getattr(module, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for criterion in sorted(report):
            terminalreporter.write_line(report[criterion])
