"""Adam, mini-batch samplers and analytic gradients of every training objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EmptyDataError, FactorModel, InteractionSet, LossBatch, ShapeError


@dataclass
class AdamState:
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam descent step, updating ``params`` in place.

    Returns ``(params, state)``. Pass negated gradients to ascend.
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def sample_observed_batch(data: InteractionSet, T: int, rng: np.random.Generator) -> LossBatch:
    """T observed triples, uniformly with replacement."""
    if T < 1:
        raise ValueError("batch size must be positive")
    if len(data) == 0:
        raise EmptyDataError("cannot sample from empty data")
    idx = rng.integers(0, len(data), size=T)
    return LossBatch(data.users[idx], data.items[idx], data.ratings[idx])


def sample_uniform_pairs(m: int, n: int, T: int, rng: np.random.Generator) -> LossBatch:
    """T unlabeled pairs drawn uniformly with replacement from the full grid."""
    if T < 1:
        raise ValueError("batch size must be positive")
    flat = rng.integers(0, m * n, size=T)
    return LossBatch(flat // n, flat % n)


def pair_gradients(model: FactorModel, users, items, coef):
    """Chain rule through ``R_hat[u, i] = U[u] @ V[i]``.

    ``coef[j]`` is d(objective)/d(R_hat) at the j-th pair.
    """
    U, V = model.user_factors, model.item_factors
    coef = np.asarray(coef)[:, None]
    gU = np.zeros_like(U)
    gV = np.zeros_like(V)
    np.add.at(gU, users, coef * V[items])
    np.add.at(gV, items, coef * U[users])
    return gU, gV


def weighted_mf_objective(model: FactorModel, batch: LossBatch, weights, l2: float) -> float:
    resid = batch.ratings - model.predict_pairs(batch.users, batch.items)
    data_term = np.sum(np.asarray(weights) * resid ** 2) / len(batch)
    reg = l2 * (np.sum(model.user_factors ** 2) + np.sum(model.item_factors ** 2))
    return float(data_term + reg)


def grad_weighted_mf(model: FactorModel, batch: LossBatch, weights, l2: float):
    """Gradient of ``sum w (r - U_u.V_i)^2 / |batch| + l2 (|U|_F^2 + |V|_F^2)``.

    The L2 term covers every row, touched by the batch or not.
    """
    if batch.ratings is None:
        raise ValueError("weighted MF gradient needs a labelled batch")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(batch),):
        raise ShapeError("weights must align with the batch")
    if len(batch) == 0:
        raise EmptyDataError("empty batch")
    resid = batch.ratings - model.predict_pairs(batch.users, batch.items)
    gU, gV = pair_gradients(model, batch.users, batch.items, -2.0 * weights * resid / len(batch))
    if l2:
        gU += 2.0 * l2 * model.user_factors
        gV += 2.0 * l2 * model.item_factors
    return gU, gV


def grad_discrepancy(model: FactorModel, adversary: FactorModel, mcar_batch: LossBatch,
                     mnar_batch: LossBatch, target: str = "model"):
    """Gradient of the discrepancy gap with respect to one side's factors.

    The gap is ``mean_mcar (R - R')^2 - mean_mnar (R - R')^2`` with ``R`` from
    ``model`` and ``R'`` from ``adversary``; the other side is held fixed.
    """
    if len(mcar_batch) == 0 or len(mnar_batch) == 0:
        raise EmptyDataError("discrepancy needs two nonempty batches")
    if target not in ("model", "adversary"):
        raise ValueError("target must be 'model' or 'adversary'")
    # d gap / d R = +2 (R - R') on MCAR, -2 (R - R') on MNAR; d/d R' flips sign
    sign = 1.0 if target == "model" else -1.0
    side = model if target == "model" else adversary
    users = np.concatenate([mcar_batch.users, mnar_batch.users])
    items = np.concatenate([mcar_batch.items, mnar_batch.items])
    diff = model.predict_pairs(users, items) - adversary.predict_pairs(users, items)
    scale = np.concatenate([np.full(len(mcar_batch), 2.0 / len(mcar_batch)),
                            np.full(len(mnar_batch), -2.0 / len(mnar_batch))])
    return pair_gradients(side, users, items, sign * scale * diff)


def project_max_norm(model: FactorModel, bound: float) -> FactorModel:
    """Rescale rows in place so every row norm is at most ``sqrt(bound)``.

    Afterwards ``|U[u] @ V[i]| <= bound`` for every pair.
    """
    radius = np.sqrt(bound)
    for F in (model.user_factors, model.item_factors):
        norms = np.linalg.norm(F, axis=1)
        over = norms > radius
        F[over] *= (radius / norms[over])[:, None]
    return model
