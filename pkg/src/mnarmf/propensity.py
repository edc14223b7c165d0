"""Propensity estimators: count-based user/item scores, 1-bit matrix
completion, and the naive-Bayes estimator that peeks at an MCAR sample."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .core import EmptyDataError, InteractionSet, PropensityMap

FLOOR = 1e-6
MAX_CELLS = 4_000_000


class CapacityError(ValueError):
    pass


def _count_ratio(counts: np.ndarray) -> np.ndarray:
    return np.maximum(counts / counts.max(), FLOOR)


def user_propensity(data: InteractionSet) -> PropensityMap:
    counts = np.bincount(data.users, minlength=data.num_users).astype(np.float64)
    return PropensityMap.factorized(_count_ratio(counts), np.ones(data.num_items))


def item_propensity(data: InteractionSet) -> PropensityMap:
    counts = np.bincount(data.items, minlength=data.num_items).astype(np.float64)
    return PropensityMap.factorized(np.ones(data.num_users), _count_ratio(counts))


def user_item_propensity(data: InteractionSet) -> PropensityMap:
    return PropensityMap.factorized(user_propensity(data).user_vector,
                                    item_propensity(data).item_vector)


@dataclass(frozen=True)
class OneBitMCConfig:
    """``nuclear_cap_scale`` is tau in ``||G||_* <= tau sqrt(mn)``;
    ``entry_cap`` is gamma in ``max |G| <= gamma``."""

    nuclear_cap_scale: float = 1.0
    entry_cap: float = 5.0
    step_size: float = 2.0
    iterations: int = 500
    tol: float = 1e-7

    def __post_init__(self):
        for name in ("nuclear_cap_scale", "entry_cap", "step_size", "iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def bernoulli_loglik(gamma: np.ndarray, observed: np.ndarray) -> float:
    """Sum of ``O log s(G) + (1 - O) log(1 - s(G))`` over the grid."""
    return float(np.sum(np.where(observed, log_expit(gamma), log_expit(-gamma))))


def bernoulli_loglik_grad(gamma: np.ndarray, observed: np.ndarray) -> np.ndarray:
    return observed - expit(gamma)


def project_simplex_ball(s: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of a nonnegative vector onto ``{x >= 0, sum x <= radius}``."""
    if s.sum() <= radius:
        return s.copy()
    u = np.sort(s)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, len(u) + 1)
    rho = np.nonzero(u - (css - radius) / k > 0)[0][-1]
    theta = (css[rho] - radius) / (rho + 1)
    return np.maximum(s - theta, 0.0)


def project_nuclear_ball(matrix: np.ndarray, radius: float) -> np.ndarray:
    """Nearest matrix (Frobenius) with nuclear norm at most ``radius``."""
    if radius <= 0:
        return np.zeros_like(matrix)
    U, s, Vt = np.linalg.svd(matrix, full_matrices=False)
    if s.sum() <= radius:
        return matrix.copy()
    return (U * project_simplex_ball(s, radius)) @ Vt


def one_bit_mc(data: InteractionSet, config: OneBitMCConfig = OneBitMCConfig()) -> PropensityMap:
    """Maximum-likelihood propensities from the observation pattern alone.

    Projected gradient ascent on the Bernoulli log-likelihood of ``O`` under
    ``P = sigmoid(G)``; each proposal is clamped entrywise to the max-norm cap
    and then projected onto the nuclear-norm ball. A proposal is accepted only
    if the likelihood does not drop, otherwise the step is halved.
    """
    m, n = data.shape
    if m * n > MAX_CELLS:
        raise CapacityError(f"{m}x{n} grid exceeds the dense 1BitMC limit of {MAX_CELLS} cells")
    gamma, _ = fit_one_bit(data.mask().astype(np.float64), config)
    return PropensityMap.from_dense(np.maximum(expit(gamma), FLOOR))


def fit_one_bit(observed: np.ndarray, config: OneBitMCConfig = OneBitMCConfig()):
    """Run the 1BitMC solver on a 0/1 matrix; returns ``(Gamma, loglik_history)``."""
    m, n = observed.shape
    radius = config.nuclear_cap_scale * np.sqrt(m * n)

    def project(g):
        return project_nuclear_ball(np.clip(g, -config.entry_cap, config.entry_cap), radius)

    gamma = project(np.zeros((m, n)))
    ll = bernoulli_loglik(gamma, observed)
    history = [ll]
    step = config.step_size
    converged = False
    for _ in range(config.iterations):
        grad = bernoulli_loglik_grad(gamma, observed)
        while step > 1e-10:
            trial = project(gamma + step * grad)
            trial_ll = bernoulli_loglik(trial, observed)
            if trial_ll >= ll:
                break
            step *= 0.5
        else:
            converged = True
            break
        gain = trial_ll - ll
        gamma, ll = trial, trial_ll
        history.append(ll)
        if gain <= config.tol * max(1.0, abs(ll)):
            converged = True
            break
    if not converged:
        warnings.warn("1BitMC hit its iteration budget before the likelihood settled",
                      RuntimeWarning, stacklevel=3)
    return gamma, history


def naive_bayes_propensity(p_rating_given_observed, p_observed, p_rating):
    """``P(R=r | O=1) P(O=1) / P(R=r)``, clamped into (0, 1]."""
    value = np.asarray(p_rating_given_observed) * p_observed / np.asarray(p_rating)
    return np.clip(value, FLOOR, 1.0)


def rating_histogram(data: InteractionSet, levels: np.ndarray) -> np.ndarray:
    """Laplace-smoothed distribution of ratings rounded to ``levels``."""
    idx = np.clip(np.rint(data.ratings).astype(np.int64) - levels[0], 0, len(levels) - 1)
    counts = np.bincount(idx, minlength=len(levels)).astype(np.float64) + 1.0
    return counts / counts.sum()


def true_propensity_naive_bayes(train: InteractionSet, mcar_sample: InteractionSet) -> PropensityMap:
    """Dense map whose observed entries follow the naive-Bayes formula.

    Unobserved entries have no rating to look up and get the marginal
    observation rate ``M / mn``.
    """
    if mcar_sample is None or len(mcar_sample) == 0:
        raise EmptyDataError("naive-Bayes propensity needs a nonempty MCAR sample")
    levels = train.scale.levels
    p_r_obs = rating_histogram(train, levels)
    p_r = rating_histogram(mcar_sample, levels)
    m, n = train.shape
    p_obs = len(train) / (m * n)
    per_level = naive_bayes_propensity(p_r_obs, p_obs, p_r)
    dense = np.full((m, n), min(max(p_obs, FLOOR), 1.0))
    idx = np.clip(np.rint(train.ratings).astype(np.int64) - levels[0], 0, len(levels) - 1)
    dense[train.users, train.items] = per_level[idx]
    return PropensityMap.from_dense(dense)


ESTIMATORS = {
    "user": user_propensity,
    "item": item_propensity,
    "user-item": user_item_propensity,
    "1bitmc": one_bit_mc,
}
