"""Synthetic MNAR worlds with known true ratings and propensities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import FIVE_STAR, InteractionSet, PropensityMap, RatingScale, ShapeError

PROPENSITY_FLOOR = 0.01


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic world.

    Observation probability is ``base_rate * exp(selection_strength * (R - mid))``
    clamped to [0.01, 1]. ``zero_block = (u0, u1, i0, i1)`` forces P = 0 on
    users ``u0:u1`` x items ``i0:i1``.
    """

    num_users: int = 200
    num_items: int = 100
    latent_dim: int = 3
    noise: float = 0.5
    selection_strength: float = 1.0
    base_rate: float = 0.05
    seed: int = 0
    rating_spread: float = 1.0
    zero_block: Optional[tuple] = None
    scale: RatingScale = FIVE_STAR

    def __post_init__(self):
        if self.num_users < 1 or self.num_items < 1 or self.latent_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if not 0 < self.base_rate <= 1:
            raise ValueError("base_rate must lie in (0, 1]")


def gen_true_world(spec: SynthSpec):
    """Return ``(true_ratings, propensity)`` for ``spec``.

    Ratings are ``mid + spread * Z / std(Z)`` clamped into the scale, where
    ``Z`` is a rank-``latent_dim`` Gaussian factor product plus noise.
    """
    rng = np.random.default_rng(spec.seed)
    m, n, k = spec.num_users, spec.num_items, spec.latent_dim
    z = rng.standard_normal((m, k)) @ rng.standard_normal((n, k)).T
    if spec.noise > 0:
        z = z + spec.noise * np.sqrt(k) * rng.standard_normal((m, n))
    scale = spec.scale
    std = z.std()
    z = z / std if std > 0 else z
    ratings = scale.clip(scale.midpoint + spec.rating_spread * z)

    prop = spec.base_rate * np.exp(spec.selection_strength * (ratings - scale.midpoint))
    prop = np.clip(prop, PROPENSITY_FLOOR, 1.0)
    allow_zero = spec.zero_block is not None
    if allow_zero:
        u0, u1, i0, i1 = spec.zero_block
        prop[u0:u1, i0:i1] = 0.0
    return ratings, PropensityMap.from_dense(prop, allow_zero=allow_zero)


def sample_observation(true_ratings: np.ndarray, propensity: PropensityMap, seed,
                       scale: RatingScale = FIVE_STAR) -> InteractionSet:
    """Independent Bernoulli(P) draw per cell; observed cells keep their true rating."""
    true_ratings = np.asarray(true_ratings)
    if true_ratings.shape != propensity.shape:
        raise ShapeError("ratings and propensity shapes differ")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = rng.random(true_ratings.shape) < propensity.to_dense()
    return InteractionSet.from_dense(true_ratings, mask, scale)


def sample_mcar_test(true_ratings: np.ndarray, items_per_user: int, seed,
                     scale: RatingScale = FIVE_STAR) -> InteractionSet:
    """Uniformly chosen ``items_per_user`` items for every user, without replacement."""
    rng = np.random.default_rng(seed)
    m, n = true_ratings.shape
    k = min(items_per_user, n)
    mask = np.zeros((m, n), dtype=bool)
    for u in range(m):
        mask[u, rng.choice(n, size=k, replace=False)] = True
    return InteractionSet.from_dense(true_ratings, mask, scale)
