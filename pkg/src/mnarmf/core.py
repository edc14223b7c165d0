"""Domain types shared by every module: ratings, observations, propensities,
factor models and training configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class EmptyDataError(ValueError):
    pass


class PropensityError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class DuplicatePairError(ValueError):
    pass


@dataclass(frozen=True)
class RatingScale:
    r_min: float = 1.0
    r_max: float = 5.0

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ValueError(f"r_min ({self.r_min}) must be below r_max ({self.r_max})")

    @property
    def loss_bound(self) -> float:
        """Largest squared loss between two values inside the scale."""
        return (self.r_max - self.r_min) ** 2

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.r_min + self.r_max)

    @property
    def levels(self) -> np.ndarray:
        """Integer rating levels covered by the scale (e.g. 1..5)."""
        return np.arange(int(np.ceil(self.r_min)), int(np.floor(self.r_max)) + 1)

    def clip(self, x):
        return np.clip(x, self.r_min, self.r_max)


FIVE_STAR = RatingScale(1.0, 5.0)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class InteractionSet:
    """Observed (user, item, rating) triples on an ``m x n`` grid.

    Indices are 0-based. A pair is present iff its rating was observed.
    """

    def __init__(self, num_users: int, num_items: int, users, items, ratings,
                 scale: RatingScale = FIVE_STAR):
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        ratings = np.asarray(ratings, dtype=np.float64).ravel()
        if num_users < 1 or num_items < 1:
            raise ValueError("num_users and num_items must be positive")
        if not (len(users) == len(items) == len(ratings)):
            raise ShapeError("users, items and ratings must have equal length")
        if len(users) == 0:
            raise EmptyDataError("an InteractionSet needs at least one triple")
        if users.min() < 0 or users.max() >= num_users:
            raise IndexError("user index out of range")
        if items.min() < 0 or items.max() >= num_items:
            raise IndexError("item index out of range")
        if not np.all(np.isfinite(ratings)):
            raise ValueError("ratings must be finite")
        if ratings.min() < scale.r_min or ratings.max() > scale.r_max:
            raise ValueError(f"rating outside scale [{scale.r_min}, {scale.r_max}]")
        keys = users * num_items + items
        if len(np.unique(keys)) != len(keys):
            raise DuplicatePairError("duplicate (user, item) pair")

        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.users = _readonly(users)
        self.items = _readonly(items)
        self.ratings = _readonly(ratings)
        self.scale = scale

    @classmethod
    def from_triples(cls, triples, num_users=None, num_items=None, scale=FIVE_STAR):
        arr = np.asarray(list(triples), dtype=np.float64).reshape(-1, 3)
        users = arr[:, 0].astype(np.int64)
        items = arr[:, 1].astype(np.int64)
        if num_users is None:
            num_users = int(users.max()) + 1 if len(users) else 0
        if num_items is None:
            num_items = int(items.max()) + 1 if len(items) else 0
        return cls(num_users, num_items, users, items, arr[:, 2], scale)

    @classmethod
    def from_dense(cls, ratings: np.ndarray, mask: np.ndarray, scale=FIVE_STAR):
        users, items = np.nonzero(mask)
        return cls(ratings.shape[0], ratings.shape[1], users, items,
                   ratings[users, items], scale)

    def __len__(self) -> int:
        return len(self.users)

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_users, self.num_items

    @property
    def num_observed(self) -> int:
        return len(self.users)

    def triples(self) -> list[tuple[int, int, float]]:
        return [(int(u), int(i), float(r))
                for u, i, r in zip(self.users, self.items, self.ratings)]

    def mask(self) -> np.ndarray:
        """Dense boolean observation matrix ``O``."""
        out = np.zeros(self.shape, dtype=bool)
        out[self.users, self.items] = True
        return out

    def subset(self, index) -> "InteractionSet":
        index = np.asarray(index)
        return InteractionSet(self.num_users, self.num_items, self.users[index],
                              self.items[index], self.ratings[index], self.scale)

    def with_shape(self, num_users: int, num_items: int) -> "InteractionSet":
        return InteractionSet(num_users, num_items, self.users, self.items,
                              self.ratings, self.scale)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionSet):
            return NotImplemented
        return (self.shape == other.shape and self.scale == other.scale
                and np.array_equal(self.users, other.users)
                and np.array_equal(self.items, other.items)
                and np.array_equal(self.ratings, other.ratings))

    def __repr__(self) -> str:
        return (f"InteractionSet(num_users={self.num_users}, "
                f"num_items={self.num_items}, M={len(self)})")


class PropensityMap:
    """Observation probabilities over the ``m x n`` grid.

    Stored densely, as an outer product of a user and an item vector, or as
    a single scalar. Entries must lie in (0, 1]; ``allow_zero`` relaxes the
    lower end for synthetic worlds that contain never-observed blocks.
    """

    def __init__(self, kind: str, shape: tuple[int, int], *, dense=None,
                 user_vector=None, item_vector=None, value=None,
                 allow_zero: bool = False):
        self.kind = kind
        self.shape = (int(shape[0]), int(shape[1]))
        self.dense = dense
        self.user_vector = user_vector
        self.item_vector = item_vector
        self.value = value
        self.allow_zero = allow_zero
        for arr in self._stored():
            lo_ok = np.all(arr >= 0) if allow_zero else np.all(arr > 0)
            if not (np.all(np.isfinite(arr)) and lo_ok and np.all(arr <= 1)):
                raise PropensityError("propensities must lie in (0, 1]")

    def _stored(self):
        if self.kind == "dense":
            return [self.dense]
        if self.kind == "factorized":
            return [self.user_vector, self.item_vector]
        return [np.asarray(self.value, dtype=np.float64)]

    @classmethod
    def from_dense(cls, matrix, allow_zero=False) -> "PropensityMap":
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeError("dense propensity must be a 2-D matrix")
        return cls("dense", matrix.shape, dense=_readonly(matrix), allow_zero=allow_zero)

    @classmethod
    def factorized(cls, user_vector, item_vector) -> "PropensityMap":
        uv = _readonly(np.array(user_vector, dtype=np.float64).ravel())
        iv = _readonly(np.array(item_vector, dtype=np.float64).ravel())
        return cls("factorized", (len(uv), len(iv)), user_vector=uv, item_vector=iv)

    @classmethod
    def uniform(cls, value: float, num_users: int, num_items: int) -> "PropensityMap":
        return cls("uniform", (num_users, num_items), value=float(value))

    def at(self, users, items) -> np.ndarray:
        users = np.asarray(users)
        items = np.asarray(items)
        if self.kind == "dense":
            return self.dense[users, items]
        if self.kind == "factorized":
            return self.user_vector[users] * self.item_vector[items]
        return np.full(np.broadcast(users, items).shape, self.value)

    def to_dense(self) -> np.ndarray:
        if self.kind == "dense":
            return np.array(self.dense)
        if self.kind == "factorized":
            return np.outer(self.user_vector, self.item_vector)
        return np.full(self.shape, self.value)


@dataclass
class FactorModel:
    """Bilinear rating model: the prediction for (u, i) is ``offset + U[u] @ V[i]``.

    Trained predictors keep ``offset = 0``; the DAMF adversary is centred on
    the rating midpoint.
    """

    user_factors: np.ndarray
    item_factors: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.user_factors = np.asarray(self.user_factors, dtype=np.float64)
        self.item_factors = np.asarray(self.item_factors, dtype=np.float64)
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise ShapeError("factor matrices must be 2-D")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise ShapeError("user and item factors must share the latent dimension")
        if not (np.all(np.isfinite(self.user_factors))
                and np.all(np.isfinite(self.item_factors))):
            raise ValueError("factor entries must be finite")

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.user_factors.shape[0], self.item_factors.shape[0]

    def predict_pairs(self, users, items) -> np.ndarray:
        dots = np.einsum("ij,ij->i", self.user_factors[users], self.item_factors[items])
        return dots + self.offset if self.offset else dots

    def full_matrix(self) -> np.ndarray:
        full = self.user_factors @ self.item_factors.T
        return full + self.offset if self.offset else full

    def copy(self) -> "FactorModel":
        return FactorModel(self.user_factors.copy(), self.item_factors.copy(), self.offset)


def predict(model: FactorModel, user: int, item: int) -> float:
    m, n = model.shape
    if not (0 <= user < m and 0 <= item < n):
        raise IndexError(f"pair ({user}, {item}) outside a {m}x{n} model")
    return float(model.offset + model.user_factors[user] @ model.item_factors[item])


def predict_clipped(model: FactorModel, user: int, item: int, scale: RatingScale) -> float:
    return float(scale.clip(predict(model, user, item)))


def init_factors(m: int, n: int, d: int, seed) -> FactorModel:
    """Draw U and V i.i.d. uniform on [-1/sqrt(d), 1/sqrt(d)].

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if m < 1 or n < 1 or d < 1:
        raise ValueError("m, n and d must all be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    half = 1.0 / np.sqrt(d)
    return FactorModel(rng.uniform(-half, half, size=(m, d)),
                       rng.uniform(-half, half, size=(n, d)))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by all trainers (squared loss throughout).

    The DAMF adversary predicts ``midpoint + U'[u] @ V'[i]`` with
    ``|U'[u] @ V'[i]| <= adversary_bound``; None means half the rating range,
    which keeps adversary predictions inside the scale.
    ``adversary_learning_rate`` None means ``learning_rate``.
    """

    dim: int = 20
    l2: float = 1e-4
    tradeoff: float = 0.1
    batch_size: int = 256
    inner_steps: int = 1
    learning_rate: float = 0.01
    max_iterations: int = 2500
    seed: int = 0
    log_every: int = 50
    patience: int = 10
    resample_inner: bool = False
    adversary_bound: Optional[float] = None
    adversary_learning_rate: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.l2 < 0 or self.tradeoff < 0:
            raise ValueError("l2 and tradeoff must be nonnegative")
        if self.batch_size < 1 or self.inner_steps < 1:
            raise ValueError("batch_size and inner_steps must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.log_every < 1 or self.patience < 1:
            raise ValueError("log_every and patience must be positive")
        if self.adversary_bound is not None and self.adversary_bound <= 0:
            raise ValueError("adversary_bound must be positive")
        if self.adversary_learning_rate is not None and self.adversary_learning_rate <= 0:
            raise ValueError("adversary_learning_rate must be positive")


@dataclass(frozen=True)
class BoundConfig:
    """Constants for the generalization-bound trace.

    ``max_norm_bound`` None means: use the largest absolute clipped
    prediction of the traced model. ``lipschitz`` None means ``2 (r_max - r_min)``.
    ``refine_steps`` ascent steps push the supplied adversary toward the
    divergence sup before it is scored; 0 scores it as given.
    """

    max_norm_bound: Optional[float] = None
    confidence: float = 0.05
    lipschitz: Optional[float] = None
    refine_steps: int = 50

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie strictly inside (0, 1)")
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be nonnegative")
        if self.max_norm_bound is not None and self.max_norm_bound <= 0:
            raise ValueError("max_norm_bound must be positive")
        if self.lipschitz is not None and self.lipschitz <= 0:
            raise ValueError("lipschitz must be positive")


@dataclass
class Streams:
    """Independent random streams for one training run.

    Keeping each consumer on its own stream makes trainers that share a
    prefix of work (e.g. DAMF with zero tradeoff vs. plain MF) consume
    identical randomness for that prefix.
    """

    init: np.random.Generator
    mnar: np.random.Generator
    mcar: np.random.Generator
    adversary: np.random.Generator
    auxiliary: np.random.Generator
    trace: np.random.Generator = field(repr=False, default=None)

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        children = np.random.SeedSequence(seed).spawn(6)
        return cls(*(np.random.default_rng(c) for c in children))


@dataclass(frozen=True)
class LossBatch:
    """A mini-batch of (user, item) pairs, with ratings when labelled.

    Uniformly sampled MCAR batches carry no ratings.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.users) != len(self.items):
            raise ShapeError("users and items must align")
        if self.ratings is not None and len(self.ratings) != len(self.users):
            raise ShapeError("ratings must align 1:1 with pairs")

    def __len__(self) -> int:
        return len(self.users)

    @classmethod
    def from_interactions(cls, data: InteractionSet) -> "LossBatch":
        return cls(data.users, data.items, data.ratings)
