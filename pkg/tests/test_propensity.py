import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from mnarmf.core import InteractionSet
from mnarmf.propensity import (FLOOR, CapacityError, OneBitMCConfig, bernoulli_loglik,
                               bernoulli_loglik_grad, fit_one_bit, item_propensity,
                               naive_bayes_propensity, one_bit_mc, project_nuclear_ball,
                               project_simplex_ball, rating_histogram,
                               true_propensity_naive_bayes, user_item_propensity,
                               user_propensity)
from conftest import central_difference, relative_error


def triples_with_counts(user_counts=None, item_counts=None):
    users, items = [], []
    if user_counts is not None:
        for u, c in enumerate(user_counts):
            users += [u] * c
            items += list(range(c))
        n = max(user_counts)
        return InteractionSet(len(user_counts), n, users, items, np.full(len(users), 3.0))
    for i, c in enumerate(item_counts):
        items += [i] * c
        users += list(range(c))
    return InteractionSet(max(item_counts), len(item_counts), users, items, np.full(len(users), 3.0))


def test_user_propensity_hand_example():
    prop = user_propensity(triples_with_counts(user_counts=[4, 2, 1]))
    assert np.allclose(prop.to_dense()[:, 0], [1.0, 0.5, 0.25])


def test_item_propensity_hand_example():
    prop = item_propensity(triples_with_counts(item_counts=[3, 3, 1]))
    assert np.allclose(prop.to_dense()[0], [1.0, 1.0, 1 / 3])


def test_equal_counts_and_single_entity():
    assert np.all(user_propensity(triples_with_counts(user_counts=[2, 2, 2])).to_dense() == 1.0)
    assert np.all(item_propensity(triples_with_counts(item_counts=[5])).to_dense() == 1.0)
    assert np.all(user_propensity(triples_with_counts(user_counts=[3])).to_dense() == 1.0)


def test_user_item_product():
    data = InteractionSet(2, 2, [0, 0, 1], [0, 1, 0], [1, 2, 3])
    dense = user_item_propensity(data).to_dense()
    assert dense[1, 1] == 0.25
    assert np.array_equal(dense, user_propensity(data).to_dense() * item_propensity(data).to_dense())
    uniform = InteractionSet.from_dense(np.full((3, 3), 2.0), np.ones((3, 3), dtype=bool))
    assert np.all(user_item_propensity(uniform).to_dense() == 1.0)


def test_zero_count_floor():
    data = InteractionSet(3, 2, [0], [0], [4])
    dense = user_item_propensity(data).to_dense()
    assert dense.min() == FLOOR * FLOOR and dense.max() == 1.0


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=30, unique=True))
def test_count_propensities_in_unit_interval(pairs):
    users, items = zip(*pairs)
    data = InteractionSet(6, 6, users, items, np.full(len(pairs), 3.0))
    for est in (user_propensity, item_propensity, user_item_propensity):
        dense = est(data).to_dense()
        assert np.all(dense > 0) and np.all(dense <= 1)


def test_loglik_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        shape = tuple(rng.integers(1, 6, 2))
        gamma = rng.normal(0, 2, shape)
        observed = (rng.random(shape) < 0.4).astype(float)
        numeric = central_difference(lambda: bernoulli_loglik(gamma, observed), [gamma])
        worst = max(worst, relative_error([bernoulli_loglik_grad(gamma, observed)], numeric))
    assert worst < 1e-4


def test_simplex_projection_known_case():
    assert np.allclose(project_simplex_ball(np.array([3.0, 1.0]), 2.0), [2.0, 0.0])
    assert np.allclose(project_simplex_ball(np.array([0.5, 0.5]), 2.0), [0.5, 0.5])


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 20))
@settings(max_examples=40, deadline=None)
def test_nuclear_projection_feasible_and_idempotent(seed, radius):
    rng = np.random.default_rng(seed)
    M = rng.normal(0, 2, (5, 4))
    P = project_nuclear_ball(M, radius)
    assert np.linalg.norm(P, "nuc") <= radius + 1e-6
    assert np.allclose(project_nuclear_ball(P, radius + 1e-6), P)


def test_one_bit_saturates_on_full_observation():
    data = InteractionSet.from_dense(np.full((6, 5), 3.0), np.ones((6, 5), dtype=bool))
    prop = one_bit_mc(data, OneBitMCConfig(entry_cap=6.0, nuclear_cap_scale=20.0))
    assert np.all(np.abs(prop.to_dense() - 1.0) < 1e-2)


def test_one_bit_tiny_nuclear_cap_gives_half():
    rng = np.random.default_rng(0)
    data = InteractionSet.from_dense(np.full((5, 5), 3.0), rng.random((5, 5)) < 0.3)
    prop = one_bit_mc(data, OneBitMCConfig(nuclear_cap_scale=1e-12))
    assert np.allclose(prop.to_dense(), 0.5, atol=1e-9)


def test_one_bit_rank_one_recovery_and_monotone_likelihood():
    rng = np.random.default_rng(0)
    truth = expit(np.outer(rng.uniform(-1.5, 1.5, 30), rng.uniform(-1.5, 1.5, 30)))
    errors = []
    for s in range(20):
        observed = (np.random.default_rng(s).random((30, 30)) < truth).astype(float)
        gamma, history = fit_one_bit(observed)
        assert np.all(np.diff(history) >= -1e-8)
        errors.append(np.abs(expit(gamma) - truth).mean())
    assert np.mean(errors) < 0.15


def test_one_bit_warns_when_budget_runs_out():
    observed = (np.random.default_rng(1).random((8, 8)) < 0.3).astype(float)
    with pytest.warns(RuntimeWarning):
        fit_one_bit(observed, OneBitMCConfig(iterations=1, tol=0.0))


def test_one_bit_capacity_guard():
    data = InteractionSet(3000, 2000, [0], [0], [3])
    with pytest.raises(CapacityError):
        one_bit_mc(data)


def test_naive_bayes_formula_hand_example():
    assert naive_bayes_propensity(0.4, 0.05, 0.1) == pytest.approx(0.2)


def test_naive_bayes_identical_histograms_give_marginal_rate():
    R = np.tile(np.arange(1.0, 6.0), (4, 2))
    full = InteractionSet.from_dense(R, np.ones_like(R, dtype=bool))
    mask = np.zeros_like(R, dtype=bool)
    mask[:, :5] = True
    train = InteractionSet.from_dense(R, mask)
    prop = true_propensity_naive_bayes(train, full)
    assert np.allclose(prop.to_dense(), len(train) / R.size)


def test_naive_bayes_missing_level_stays_positive():
    train = InteractionSet(2, 2, [0, 1], [0, 1], [5, 5])
    mcar = InteractionSet(2, 2, [0, 1], [1, 0], [1, 2])
    dense = true_propensity_naive_bayes(train, mcar).to_dense()
    assert np.all(dense > 0) and np.all(dense <= 1)


def test_histogram_rounds_fractional_ratings():
    data = InteractionSet(1, 3, [0, 0, 0], [0, 1, 2], [1.2, 4.6, 5.0])
    hist = rating_histogram(data, np.arange(1, 6))
    assert np.allclose(hist, np.array([2, 1, 1, 1, 3]) / 8)
