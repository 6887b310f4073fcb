import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsgp.priors import factorize, init_dictionary, objective, sparse_codes, update_dictionary


def test_repeated_column_rank_one():
    rng = np.random.default_rng(0)
    v = rng.random(6)
    v /= np.linalg.norm(v)
    Y = np.tile(0.005 * v[:, None], (1, 12))
    fit = factorize(Y, 1, delta=0.01, seed=1)
    np.testing.assert_allclose(fit.D[:, 0], v, atol=1e-12)
    assert np.linalg.norm(Y - fit.D @ fit.A) <= 1e-10
    np.testing.assert_allclose(fit.A, 0.005, rtol=1e-9)


def test_zero_budget():
    rng = np.random.default_rng(1)
    Y = rng.random((4, 9))
    fit = factorize(Y, 3, delta=0.0, seed=0)
    assert np.all(fit.A == 0)
    assert objective(Y, fit.D, fit.A) == pytest.approx(float((Y ** 2).sum()), rel=1e-14)


def test_updates_beat_fixed_initial_dictionary():
    rng = np.random.default_rng(2)
    Y = rng.random((5, 20))
    fit = factorize(Y, 8, delta=0.5, seed=3)
    D0 = init_dictionary(Y, 8, np.random.default_rng(3))
    baseline = objective(Y, D0, sparse_codes(Y, D0, 0.5))
    assert fit.objective_trace[0] == pytest.approx(baseline, rel=1e-12)
    assert objective(Y, fit.D, fit.A) <= baseline


def test_deterministic():
    rng = np.random.default_rng(4)
    Y = rng.random((6, 30))
    a = factorize(Y, 4, 0.05, seed=9)
    b = factorize(Y, 4, 0.05, seed=9)
    np.testing.assert_array_equal(a.D, b.D)
    np.testing.assert_array_equal(a.A, b.A)


def test_overcomplete_warns(caplog):
    Y = np.random.default_rng(5).random((3, 4))
    with caplog.at_level(logging.WARNING):
        fit = factorize(Y, 6, 0.1, seed=0, epochs=2)
    assert fit.D.shape == (3, 6)
    assert any("over-complete" in r.message for r in caplog.records)


def test_rejects_negative_data_and_no_atoms():
    with pytest.raises(ValueError):
        factorize(-np.ones((2, 3)), 1)
    with pytest.raises(ValueError):
        factorize(np.ones((2, 3)), 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), L=st.integers(2, 6), N=st.integers(1, 25),
       K=st.integers(1, 6), delta=st.sampled_from([0.01, 0.1, 1.0]))
def test_factorization_invariants(seed, L, N, K, delta):
    Y = np.random.default_rng(seed).random((L, N))
    fit = factorize(Y, K, delta, seed=seed, epochs=4)
    assert np.all(fit.D >= 0) and np.all(fit.A >= 0)
    assert np.all(fit.A.sum(axis=0) <= delta + 1e-9)
    assert np.all(np.linalg.norm(fit.D, axis=0) <= 1 + 1e-12)
    trace = fit.objective_trace
    assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(trace, trace[1:]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_atom_update_is_optimal_under_perturbation(seed):
    # each atom update is the exact minimizer with the other atoms fixed, so no
    # feasible single-atom perturbation of a one-atom dictionary may improve it
    rng = np.random.default_rng(seed)
    Y = rng.random((4, 10))
    D = rng.random((4, 1))
    D /= np.linalg.norm(D)
    A = rng.random((1, 10)) * 0.1
    new = update_dictionary(Y, D, A)
    best = objective(Y, new, A)
    for _ in range(50):
        trial = np.maximum(new + 0.05 * rng.standard_normal(new.shape), 0.0)
        n = np.linalg.norm(trial)
        if n > 1:
            trial /= n
        assert objective(Y, trial, A) >= best - 1e-12
