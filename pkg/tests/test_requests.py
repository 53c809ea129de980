import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mecsac.env import ConfigError
from mecsac.requests import (
    ConvergenceError,
    TransitionMatrix,
    build_chain,
    is_irreducible,
    limiting_distribution,
    sample_next,
)


def test_two_task_chain():
    chain = build_chain(2, 0.7, np.random.default_rng(0))
    np.testing.assert_allclose(chain.probs, [[0.3, 0.7], [0.7, 0.3]], atol=1e-15)
    assert chain.favored == (1, 0)


def test_rejects_single_task():
    with pytest.raises(ConfigError):
        build_chain(1, 0.7, np.random.default_rng(0))


def test_build_is_deterministic():
    a = build_chain(6, 0.7, np.random.default_rng(42))
    b = build_chain(6, 0.7, np.random.default_rng(42))
    assert np.array_equal(a.probs, b.probs) and a.favored == b.favored


@pytest.mark.parametrize("F", [2, 3, 4, 7])
def test_invariants_over_many_seeds(F):
    for seed in range(1000 if F == 4 else 200):
        chain = build_chain(F, 0.7, np.random.default_rng(seed))
        p = chain.probs
        assert np.all((p >= 0) & (p <= 1))
        assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-12
        assert is_irreducible(p)
        for i, j in enumerate(chain.favored):
            assert j != i and p[i, j] == 0.7


def test_favored_successor_is_uniform():
    counts = np.zeros(4)
    for seed in range(3000):
        counts[build_chain(4, 0.7, np.random.default_rng(seed)).favored[0]] += 1
    assert counts[0] == 0
    # chi-square with 2 degrees of freedom, 0.1% critical value 13.8
    expected = 1000
    assert ((counts[1:] - expected) ** 2 / expected).sum() < 13.8


def test_degenerate_row():
    chain = TransitionMatrix(np.array([[1.0, 0.0], [1.0, 0.0]]), (0, 0))
    rng = np.random.default_rng(0)
    assert {sample_next(chain, 1, rng) for _ in range(1000)} == {0}


def test_sampling_matches_row():
    chain = build_chain(4, 0.7, np.random.default_rng(3))
    rng = np.random.default_rng(9)
    n = 10**6
    draws = np.fromiter((sample_next(chain, 2, rng) for _ in range(n)), dtype=np.int64, count=n)
    freq = np.bincount(draws, minlength=4) / n
    assert 0.5 * np.abs(freq - chain.probs[2]).sum() < 0.005


def test_sampling_is_deterministic():
    chain = build_chain(4, 0.7, np.random.default_rng(3))
    seq = [[sample_next(chain, 1, np.random.default_rng(5)) for _ in range(3)] for _ in range(2)]
    assert seq[0] == seq[1]
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    assert [chain.sample_next(0, r1) for _ in range(50)] == [chain.sample_next(0, r2) for _ in range(50)]


def test_doubly_stochastic_gives_uniform():
    q = np.array([[0.1, 0.6, 0.3], [0.3, 0.1, 0.6], [0.6, 0.3, 0.1]])
    p = limiting_distribution(TransitionMatrix(q, (1, 2, 0)))
    np.testing.assert_allclose(p, np.full(3, 1 / 3), atol=1e-12)


def test_two_state_balance():
    chain = build_chain(2, 0.7, np.random.default_rng(0))
    np.testing.assert_allclose(limiting_distribution(chain), [0.5, 0.5], atol=1e-12)


def test_periodic_chain_converges():
    q = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(limiting_distribution(TransitionMatrix(q, (1, 0))), [0.5, 0.5])


def test_non_convergence_raises():
    chain = build_chain(5, 0.7, np.random.default_rng(0))
    with pytest.raises(ConvergenceError):
        limiting_distribution(chain, max_iter=1)


@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_stationarity(seed, F):
    chain = build_chain(F, 0.7, np.random.default_rng(seed))
    p = limiting_distribution(chain)
    assert abs(p.sum() - 1) < 1e-12
    assert np.abs(p @ chain.probs - p).sum() < 1e-10
    # agrees with a direct eigenvector solve
    w, v = np.linalg.eig(chain.probs.T)
    ref = np.real(v[:, np.argmin(np.abs(w - 1))])
    np.testing.assert_allclose(p, ref / ref.sum(), atol=1e-9)


def test_serialization_round_trip():
    chain = build_chain(4, 0.7, np.random.default_rng(1))
    back = TransitionMatrix.from_dict(chain.to_dict())
    assert np.array_equal(back.probs, chain.probs) and back.favored == chain.favored


def test_reducible_chain_rejected():
    with pytest.raises(ConfigError):
        TransitionMatrix.from_dict({"probs": [[1.0, 0.0], [0.5, 0.5]]})
