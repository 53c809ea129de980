import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cache, hetero_config, random_state
from mecsac.codec import (
    DFC,
    DFNC,
    PTDFC,
    action_dim,
    correct,
    decode_action,
    decode_state,
    dequantize,
    encode_state,
    format_trace,
    quantize,
    quantize_level,
    state_dim,
)
from mecsac.env import (
    CacheState,
    SystemAction,
    SystemConfig,
    SystemState,
    apply_cache_update,
    cache_states,
    validate_action,
)


def natural_to_raw(value, lo, hi):
    return 2.0 * (value - lo) / (hi - lo) - 1.0


class TestStateCoding:
    def test_dims(self):
        assert state_dim(4) == 12 and action_dim(4) == 13

    def test_first_request_empty_cache(self):
        x = encode_state(SystemState(0, CacheState.empty(4)))
        assert list(x) == [1, -1, -1, -1] + [-1] * 8

    def test_third_request_second_input(self):
        x = encode_state(SystemState(2, cache([0, 1, 0, 0], [0] * 4)))
        assert set(np.flatnonzero(x > 0)) == {2, 4 + 1}

    def test_round_trip_exhaustive(self, config):
        for cs in cache_states(config):
            for f in range(4):
                state = SystemState(f, cs)
                x = encode_state(state)
                assert np.all(np.abs(x) == 1)
                assert decode_state(x) == state

    def test_decode_rejects_two_requests(self):
        x = -np.ones(12)
        x[:2] = 1
        with pytest.raises(ValueError):
            decode_state(x)


class TestQuantize:
    def test_push_threshold(self):
        assert quantize_level(0.3, 0, 1) == 0
        assert quantize_level(0.7, 0, 1) == 1

    def test_delta(self):
        assert quantize_level(-0.2, -1, 1) == 0

    def test_cores(self):
        assert quantize_level(4.2, 0, 8) == 4

    def test_endpoints_clamped(self):
        assert quantize_level(8.0, 0, 8) == 8
        assert quantize_level(1.0, -1, 1) == 1
        assert quantize_level(0.0, 0, 1) == 0

    def test_full_vector(self, config):
        raw = np.array(
            [natural_to_raw(4.2, 0, 8)]
            + [natural_to_raw(v, 0, 1) for v in (0.3, 0.7, 0.0, 1.0)]
            + [-0.2, -1.0, 0.5, 1.0]
            + [0.0, -0.4, 0.34, -0.9]
        )
        q = quantize(raw, config)
        assert q == SystemAction(4, (0, 1, 0, 1), (0, -1, 1, 1), (0, -1, 1, -1))

    @given(st.integers(0, 8), st.tuples(*[st.integers(0, 1)] * 4),
           st.tuples(*[st.integers(-1, 1)] * 4), st.tuples(*[st.integers(-1, 1)] * 4))
    def test_grid_points_are_fixed(self, cores, push, d_in, d_out):
        config = SystemConfig()
        action = SystemAction(cores, push, d_in, d_out)
        assert quantize(dequantize(action, config), config) == action

    @given(st.lists(st.floats(-1, 1), min_size=13, max_size=13))
    def test_requantize_is_idempotent(self, raw):
        config = SystemConfig()
        q = quantize(np.array(raw), config)
        assert quantize(dequantize(q, config), config) == q


def raw_action(cores=0.0, push=(-1,) * 4, d_in=(0,) * 4, d_out=(0,) * 4):
    return np.array([cores, *push, *d_in, *d_out], dtype=float)


class TestCorrect:
    def test_cached_output_forces_zero_cores(self, config):
        state = SystemState(1, cache([0] * 4, [0, 1, 0, 0]))
        rng = np.random.default_rng(0)
        for _ in range(200):
            raw = rng.uniform(-1, 1, 13)
            action = decode_action(raw, state, config)
            assert action.reactive_cores == 0

    def test_raises_cores_to_minimum(self, config):
        state = SystemState(0, CacheState.empty(4))
        action = decode_action(raw_action(cores=-1.0), state, config)
        assert action.reactive_cores == 4

    def test_keeps_single_strongest_push(self, config):
        raw = raw_action(cores=0.5, push=(natural_to_raw(0.8, 0, 1), natural_to_raw(0.9, 0, 1), -1, -1))
        state = SystemState(3, cache([0] * 4, [0, 0, 0, 1]))
        action = decode_action(raw, state, config)
        assert action.push == (0, 1, 0, 0)
        assert action.delta_input == (0, 1, 0, 0)

    def test_no_push_for_cached_task(self, config):
        raw = raw_action(push=(1, -1, -1, -1))
        state = SystemState(1, cache([1, 0, 0, 0], [0] * 4))
        assert decode_action(raw, state, config).push == (0, 0, 0, 0)

    def test_push_evicts_lowest_score(self, config):
        state = SystemState(0, cache([0, 1, 1, 0], [0] * 4))
        raw = raw_action(cores=0.0, push=(-1, -1, -1, 1), d_in=(0, 0.2, -0.3, 0))
        trace = []
        action = correct(state, quantize(raw, config), raw, config, trace=trace)
        assert action.push == (0, 0, 0, 1)
        assert action.delta_input == (0, 0, -1, 1)
        assert apply_cache_update(state.cache, action).used_bits(config) == 32000
        rules = [r for r, _ in trace]
        assert rules.index("rule4") < rules.index("rule6") < rules.index("rule5")

    def test_opportunistic_caching_order(self, config):
        state = SystemState(0, CacheState.empty(4))
        raw = raw_action(cores=0.5, d_in=(0.1, 0, 0, 0), d_out=(0.6, 0, 0, 0))
        action = decode_action(raw, state, config)
        # output first (higher score), then the input no longer fits
        assert action.delta_output == (1, 0, 0, 0)
        assert action.delta_input == (0, 0, 0, 0)

    def test_both_reactive_items_when_room(self):
        config = SystemConfig(cache_bits=50000)
        state = SystemState(0, CacheState.empty(4))
        action = decode_action(raw_action(cores=0.5), state, config)
        assert action.delta_input[0] == 1 and action.delta_output[0] == 1

    def test_oversized_push_cancelled(self):
        config = SystemConfig(cache_bits=10000)
        state = SystemState(0, CacheState.empty(4))
        action = decode_action(raw_action(cores=0.5, push=(-1, 1, -1, -1)), state, config)
        assert action.push == (0, 0, 0, 0)

    def test_masks(self, config):
        rng = np.random.default_rng(1)
        for _ in range(300):
            state = random_state(config, rng)
            raw = rng.uniform(-1, 1, 13)
            dfc = decode_action(raw, state, config, DFC)
            assert not any(dfc.push)
            dfnc = decode_action(raw, state, config, DFNC)
            assert not any(dfnc.push) and not any(dfnc.delta_input) and not any(dfnc.delta_output)

    def test_minimal_on_valid_actions(self, config):
        rng = np.random.default_rng(2)
        checked = 0
        while checked < 300:
            state = random_state(config, rng)
            push = [0] * 4
            if rng.random() < 0.5:
                push[rng.integers(4)] = 1
            q = SystemAction(
                int(rng.integers(9)), tuple(push),
                tuple(int(v) for v in rng.choice([-1, 0, 0, 1], 4)),
                tuple(int(v) for v in rng.choice([-1, 0, 0, 1], 4)),
            )
            c = state.cache
            if any(b and c.input_cached[g] + c.output_cached[g] for g, b in enumerate(push)):
                continue  # pushing already-cached data is always dropped
            if not validate_action(state, q, config)[0]:
                continue
            checked += 1
            out = correct(state, q, dequantize(q, config), config)
            assert out.reactive_cores == q.reactive_cores
            assert out.push == q.push

    def test_deterministic(self, config):
        rng = np.random.default_rng(3)
        state = random_state(config, rng)
        raw = rng.uniform(-1, 1, 13)
        assert decode_action(raw, state, config) == decode_action(raw.copy(), state, config)

    def test_trace_format(self, config):
        state = SystemState(0, CacheState.empty(4))
        trace = []
        raw = raw_action()
        correct(state, quantize(raw, config), raw, config, trace=trace)
        text = format_trace(trace, state)
        assert "rule1" in text and "cores=4" in text


def test_correction_always_valid():
    """Random raw actions over many random states always correct to valid actions."""
    rng = np.random.default_rng(2024)
    configs = [SystemConfig(), hetero_config(), SystemConfig(cache_bits=10000), SystemConfig(slot_seconds=0.015)]
    masks = [PTDFC, DFC, DFNC]
    for k in range(20000):
        config = configs[k % len(configs)]
        state = random_state(config, rng)
        raw = rng.uniform(-1, 1, action_dim(config.num_tasks))
        action = decode_action(raw, state, config, masks[k % 3])
        assert validate_action(state, action, config)[0]


@settings(max_examples=300)
@given(st.data(), st.lists(st.floats(-1, 1), min_size=13, max_size=13))
def test_correction_valid_on_boundary_values(data, raw):
    config = hetero_config()
    state = SystemState(data.draw(st.integers(0, 3)), data.draw(st.sampled_from(cache_states(config))))
    action = decode_action(np.array(raw), state, config)
    assert validate_action(state, action, config)[0]
