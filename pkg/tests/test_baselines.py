import numpy as np
import pytest

from conftest import cache, random_state, uniform_chain
from mecsac.baselines import (
    HeuristicPolicy,
    OracleTooLarge,
    RecencyFrequencyBook,
    evaluate_policy_exact,
    exact_value_iteration,
    mfu_lfu_policy,
    mru_lru_policy,
)
from mecsac.codec import DFC, DFNC, PTDFC
from mecsac.env import (
    CacheState,
    SystemConfig,
    SystemState,
    TaskSpec,
    all_outputs_cached,
    min_cores,
    reactive_cost,
    validate_action,
)
from mecsac.requests import TransitionMatrix, build_chain


def book_after(history, num_tasks=4):
    book = RecencyFrequencyBook(num_tasks)
    for task in history:
        book.record(task)
    return book


class TestMruLru:
    def test_first_slot(self, config):
        action = mru_lru_policy(SystemState(0, CacheState.empty(4)), book_after([]), config)
        assert action.reactive_cores == 6
        assert action.push == (0, 0, 0, 0)

    def test_pushes_most_recent(self, config):
        state = SystemState(0, CacheState.empty(4))
        action = mru_lru_policy(state, book_after([3, 1]), config)
        assert action.push == (0, 1, 0, 0)
        assert action.delta_input[1] == 1

    def test_evicts_least_recent(self, config):
        state = SystemState(3, cache([1, 1, 0, 0], [0] * 4))
        action = mru_lru_policy(state, book_after([0, 1, 2]), config)
        assert action.push == (0, 0, 1, 0)
        assert action.delta_input == (-1, 0, 1, 0)

    def test_no_push_when_candidate_cached(self, config):
        state = SystemState(0, cache([0, 1, 0, 0], [0] * 4))
        action = mru_lru_policy(state, book_after([1]), config)
        assert action.push == (0, 0, 0, 0)

    def test_cached_output_needs_no_cores(self, config):
        state = SystemState(0, cache([0] * 4, [1, 0, 0, 0]))
        assert mru_lru_policy(state, book_after([0, 2]), config).reactive_cores == 0

    def test_fixed_cores_raised_to_minimum(self):
        config = SystemConfig(slot_seconds=0.01, num_cores=12)
        action = mru_lru_policy(SystemState(0, CacheState.empty(4)), book_after([]), config)
        assert action.reactive_cores == max(9, min_cores(config.tasks[0], config, download=True))


class TestMfuLfu:
    def test_uniform_counts_tie_break(self, config):
        state = SystemState(0, CacheState.empty(4))
        action = mfu_lfu_policy(state, book_after([1, 2, 3]), config)
        assert action.push == (0, 1, 0, 0)

    def test_counts_order(self, config):
        # counts (5, 1, 1, 1) with task 3 requested now
        state = SystemState(3, cache([0, 1, 1, 0], [0] * 4))
        action = mfu_lfu_policy(state, book_after([0] * 5 + [1, 2, 3]), config)
        assert action.push == (1, 0, 0, 0)
        # tasks 1 and 2 tie on count; the lower index is evicted
        assert action.delta_input == (1, -1, 0, 0)


@pytest.mark.parametrize("name", ["mru-lru", "mfu-lfu"])
def test_heuristics_always_valid(name):
    rng = np.random.default_rng(7)
    for config in (SystemConfig(), SystemConfig(cache_bits=10000), SystemConfig(cache_bits=100000)):
        policy = HeuristicPolicy(name, config)
        for _ in range(35000):
            state = random_state(config, rng)
            action = policy(state)
            assert validate_action(state, action, config)[0]


def test_book_invariants():
    book = RecencyFrequencyBook(3)
    history = [0, 2, 2, 1, 0]
    for t in history:
        before = list(book.counts)
        book.record(t)
        assert all(a >= b for a, b in zip(book.counts, before))
        assert max(book.last_used) < book.slot


class TestOracle:
    def test_zero_cost_configuration(self):
        config = SystemConfig(num_tasks=2, cache_bits=92000)
        chain = build_chain(2, 0.7, np.random.default_rng(0))
        result = exact_value_iteration(config, chain, DFNC, initial_cache=all_outputs_cached(config))
        assert result.discounted_cost == 0.0

    def test_single_task_closed_form(self):
        config = SystemConfig(num_tasks=1, cache_bits=0)
        chain = TransitionMatrix(np.array([[1.0]]), (0,))
        result = exact_value_iteration(config, chain, DFNC)
        state = SystemState(0, CacheState.empty(1))
        per_slot = min(
            sum(reactive_cost(state, c, config)) for c in range(min_cores(config.tasks[0], config, True), 9)
        )
        expected = config.reward_scale * per_slot / (1 - config.discount)
        assert result.discounted_cost == pytest.approx(expected, rel=1e-8)
        assert result.residual < 1e-9

    def test_mask_ordering(self):
        config = SystemConfig(num_tasks=2)
        chain = build_chain(2, 0.7, np.random.default_rng(0))
        costs = [exact_value_iteration(config, chain, m).discounted_cost for m in (PTDFC, DFC, DFNC)]
        assert costs[0] <= costs[1] <= costs[2]

    @pytest.mark.parametrize("seed", range(5))
    def test_mask_ordering_three_tasks(self, seed):
        config = SystemConfig(num_tasks=3, tasks=(TaskSpec(16000, 30000, 800),) * 3)
        chain = build_chain(3, 0.7, np.random.default_rng(seed))
        costs = [exact_value_iteration(config, chain, m).discounted_cost for m in (PTDFC, DFC, DFNC)]
        assert costs[0] <= costs[1] + 1e-12 and costs[1] <= costs[2] + 1e-12

    def test_sweeps_are_monotone(self):
        config = SystemConfig(num_tasks=2)
        history = []
        exact_value_iteration(config, build_chain(2, 0.7, np.random.default_rng(1)), history=history)
        for prev, cur in zip(history, history[1:]):
            assert np.all(cur >= prev - 1e-12)

    def test_greedy_policy_is_fixed_point(self):
        config = SystemConfig(num_tasks=2)
        chain = build_chain(2, 0.7, np.random.default_rng(2))
        result = exact_value_iteration(config, chain)
        policy = dict(zip(result.states, result.policy))
        exact = evaluate_policy_exact(policy.__getitem__, config, chain)
        assert exact == pytest.approx(result.discounted_cost, rel=1e-8)
        for state, action in policy.items():
            assert validate_action(state, action, config)[0]

    def test_optimum_beats_heuristic(self):
        config = SystemConfig(num_tasks=2)
        chain = build_chain(2, 0.7, np.random.default_rng(3))
        result = exact_value_iteration(config, chain)
        # a memoryless policy: always serve with six cores and cache nothing
        from mecsac.env import SystemAction

        def six(state):
            if state.cache.output_cached[state.request]:
                return SystemAction.zero(2)
            return SystemAction(6, (0, 0), (0, 0), (0, 0))

        assert evaluate_policy_exact(six, config, chain) >= result.discounted_cost

    def test_dfnc_matches_closed_form(self):
        config = SystemConfig()
        result = exact_value_iteration(config, uniform_chain(4), DFNC)
        assert result.discounted_cost == pytest.approx(3.4791e6 * 1e-6 / 0.01, rel=1e-4)

    def test_refuses_large_instances(self):
        with pytest.raises(OracleTooLarge):
            exact_value_iteration(SystemConfig(num_tasks=6, cache_bits=40000), uniform_chain(6))

    def test_json_artifact(self):
        import json

        result = exact_value_iteration(SystemConfig(num_tasks=2), uniform_chain(2))
        data = json.loads(result.to_json())
        assert data["discounted_cost"] == result.discounted_cost
        assert len(data["table"]) == len(result.states)
