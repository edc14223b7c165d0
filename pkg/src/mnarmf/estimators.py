"""Loss estimators for MNAR feedback and the propensity-free generalization bound.

All losses are squared loss. The ideal loss averages over the full grid; the
naive, IPS and DR estimators approximate it from observed entries only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (EmptyDataError, FactorModel, InteractionSet, LossBatch,
                   PropensityError, PropensityMap, RatingScale, ShapeError,
                   TrainConfig, init_factors)
from .optim import grad_discrepancy, project_max_norm

__all__ = [
    "LossBatch", "BoundComponents", "point_loss", "ideal_loss", "naive_loss",
    "ips_loss", "dr_loss", "pmd_gap", "pmd_empirical", "complexity_surrogate",
    "complexity_term", "confidence_term", "bound_value",
]


def point_loss(r, r_hat):
    return (np.asarray(r) - np.asarray(r_hat)) ** 2


def _predictions(model: FactorModel, users, items, scale: Optional[RatingScale]):
    pred = model.predict_pairs(users, items)
    return pred if scale is None else scale.clip(pred)


def ideal_loss(true_ratings: np.ndarray, model: FactorModel,
               scale: Optional[RatingScale] = None) -> float:
    """Mean loss over every cell of the true rating matrix.

    With ``scale`` the predictions are clipped into the rating range first.
    """
    true_ratings = np.asarray(true_ratings)
    if true_ratings.shape != model.shape:
        raise ShapeError(f"ratings {true_ratings.shape} vs model {model.shape}")
    pred = model.full_matrix()
    if scale is not None:
        pred = scale.clip(pred)
    return float(np.mean(point_loss(true_ratings, pred)))


def naive_loss(data, model: FactorModel, scale: Optional[RatingScale] = None) -> float:
    if len(data) == 0:
        raise EmptyDataError("naive loss needs at least one observed pair")
    if data.ratings is None:
        raise ValueError("naive loss needs ratings")
    pred = _predictions(model, data.users, data.items, scale)
    return float(np.mean(point_loss(data.ratings, pred)))


def _observed_propensity(data: InteractionSet, propensity: PropensityMap) -> np.ndarray:
    if propensity.shape != data.shape:
        raise PropensityError(f"propensity {propensity.shape} vs data {data.shape}")
    p = propensity.at(data.users, data.items)
    if not np.all(p > 0):
        raise PropensityError("zero propensity on an observed pair")
    return p


def ips_loss(data: InteractionSet, model: FactorModel, propensity: PropensityMap) -> float:
    p = _observed_propensity(data, propensity)
    losses = point_loss(data.ratings, model.predict_pairs(data.users, data.items))
    m, n = data.shape
    return float(np.sum(losses / p) / (m * n))


def dr_loss(data: InteractionSet, model: FactorModel, propensity: PropensityMap,
            imputation: np.ndarray) -> float:
    """Doubly robust estimate from a dense matrix of imputed losses."""
    imputation = np.asarray(imputation, dtype=np.float64)
    if imputation.shape != data.shape:
        raise ShapeError("imputation must be an m x n matrix")
    if not np.all(np.isfinite(imputation)):
        raise ValueError("imputation must be finite")
    p = _observed_propensity(data, propensity)
    losses = point_loss(data.ratings, model.predict_pairs(data.users, data.items))
    imputed = imputation[data.users, data.items]
    m, n = data.shape
    return float((np.sum(imputation) + np.sum((losses - imputed) / p)) / (m * n))


def pmd_gap(model: FactorModel, adversary: FactorModel, mcar_batch: LossBatch,
            mnar_batch: LossBatch, scale: Optional[RatingScale] = None) -> float:
    """Disagreement between ``model`` and ``adversary`` on MCAR minus on MNAR pairs.

    Each side is averaged over its own batch. Ratings are not used.
    """
    if len(mcar_batch) == 0 or len(mnar_batch) == 0:
        raise EmptyDataError("discrepancy needs two nonempty batches")

    def disagreement(batch):
        a = _predictions(model, batch.users, batch.items, scale)
        b = _predictions(adversary, batch.users, batch.items, scale)
        return np.mean(point_loss(a, b))

    return float(disagreement(mcar_batch) - disagreement(mnar_batch))


def pmd_empirical(model: FactorModel, mcar_batch: LossBatch, mnar_batch: LossBatch,
                  config: TrainConfig, *, steps: int = 200, bound: Optional[float] = None,
                  init: Optional[FactorModel] = None,
                  candidates: Optional[Sequence[FactorModel]] = None):
    """Approximate the divergence sup over adversaries for fixed batches.

    Runs projected gradient ascent with backtracking, so the gap never
    decreases between accepted iterates. ``bound`` restricts adversaries to
    ``|R' - offset| <= bound``; without it the sup can be unbounded and only
    finite trial gaps are accepted. With ``candidates`` the sup is taken over that finite
    set instead. Returns ``(max(gap, 0), adversary)``.
    """
    if len(mcar_batch) == 0 or len(mnar_batch) == 0:
        raise EmptyDataError("discrepancy needs two nonempty batches")

    if candidates is not None:
        gaps = [pmd_gap(model, c, mcar_batch, mnar_batch) for c in candidates]
        best = int(np.argmax(gaps))
        return max(gaps[best], 0.0), candidates[best]

    m, n = model.shape
    adversary = init.copy() if init is not None else init_factors(m, n, config.dim, config.seed)
    if bound is not None:
        project_max_norm(adversary, bound)
    gap = pmd_gap(model, adversary, mcar_batch, mnar_batch)
    step = 1.0
    for _ in range(steps):
        gU, gV = grad_discrepancy(model, adversary, mcar_batch, mnar_batch, target="adversary")
        if not (np.any(gU) or np.any(gV)):
            break
        while step > 1e-12:
            trial = FactorModel(adversary.user_factors + step * gU,
                                adversary.item_factors + step * gV, adversary.offset)
            if bound is not None:
                project_max_norm(trial, bound)
            with np.errstate(over="ignore", invalid="ignore"):
                trial_gap = pmd_gap(model, trial, mcar_batch, mnar_batch)
            if np.isfinite(trial_gap) and trial_gap >= gap:
                adversary, gap = trial, trial_gap
                step *= 2.0
                break
            step *= 0.5
        else:
            break
    return max(gap, 0.0), adversary


def complexity_surrogate(A: float, m: int, n: int, M: int) -> float:
    """Max-norm class capacity ``sqrt(A^2 (m + n) / M)``."""
    if M <= 0:
        raise ZeroDivisionError("sample size M must be positive")
    if A < 0 or m <= 0 or n <= 0:
        raise ValueError("A must be nonnegative and m, n positive")
    return math.sqrt(A * A * (m + n) / M)


def complexity_term(lipschitz: float, rad_mnar: float, rad_mcar: float) -> float:
    return 2.0 * lipschitz * (3.0 * rad_mnar + 2.0 * rad_mcar)


def confidence_term(loss_bound: float, delta: float, M: int) -> float:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return 3.0 * loss_bound * math.sqrt(math.log(6.0 / delta) / (2.0 * M))


@dataclass(frozen=True)
class BoundComponents:
    naive: float
    pmd: float
    complexity: float
    confidence: float

    @property
    def total(self) -> float:
        return self.naive + self.pmd + self.complexity + self.confidence


def bound_value(naive: float, pmd: float, complexity_terms: float,
                confidence_term: float) -> BoundComponents:
    values = (naive, pmd, complexity_terms, confidence_term)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("bound components must be finite")
    if pmd < 0:
        raise ValueError("the divergence component must be nonnegative")
    return BoundComponents(*map(float, values))
