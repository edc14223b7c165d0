"""Rating-prediction and ranking metrics over an MCAR test set."""

from __future__ import annotations

import numpy as np

from .core import EmptyDataError, FactorModel, InteractionSet


def mse(test: InteractionSet, model: FactorModel) -> float:
    """Mean squared error of clipped predictions."""
    if len(test) == 0:
        raise EmptyDataError("empty test set")
    pred = test.scale.clip(model.predict_pairs(test.users, test.items))
    return float(np.mean((test.ratings - pred) ** 2))


def rank_positions(scores: np.ndarray, items: np.ndarray) -> np.ndarray:
    """1-based rank of each entry: higher score first, ties by ascending item index."""
    order = np.lexsort((items, -scores))
    ranks = np.empty(len(scores), dtype=np.int64)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def _catalog_ranks(model: FactorModel, user: int, items: np.ndarray) -> np.ndarray:
    """Rank of each given item among every item in the catalog for ``user``."""
    catalog = np.arange(model.shape[1])
    scores = model.predict_pairs(np.full(len(catalog), user), catalog)
    return rank_positions(scores, catalog)[items]


def _per_user(test: InteractionSet, model: FactorModel, catalog: bool = False):
    """Yield (ratings, ranks) for each user with at least one test item."""
    order = np.argsort(test.users, kind="stable")
    users = test.users[order]
    bounds = np.flatnonzero(np.diff(users)) + 1
    scores = model.predict_pairs(test.users, test.items)[order]
    for idx in np.split(np.arange(len(users)), bounds):
        items = test.items[order][idx]
        if catalog:
            ranks = _catalog_ranks(model, users[idx[0]], items)
        else:
            ranks = rank_positions(scores[idx], items)
        yield test.ratings[order][idx], ranks


def gain(ratings, conventional: bool = False):
    """``2^(R - 1)``, or ``2^R - 1`` when ``conventional``."""
    ratings = np.asarray(ratings, dtype=np.float64)
    return np.exp2(ratings) - 1.0 if conventional else np.exp2(ratings - 1.0)


def _dcg(ratings, ranks, K, conventional):
    hit = ranks <= K
    return float(np.sum(gain(ratings[hit], conventional) / np.log2(ranks[hit] + 1.0)))


def ndcg_at_k(test: InteractionSet, model: FactorModel, K: int = 5,
              conventional_gain: bool = False, catalog: bool = False) -> float:
    """Per-user DCG@K / IDCG@K averaged over users with test items.

    Ranks are taken over each user's test items, or over the whole item
    catalog when ``catalog`` is set (untested items then carry no gain).
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    values = []
    for ratings, ranks in _per_user(test, model, catalog):
        ideal_ranks = np.empty(len(ratings), dtype=np.int64)
        ideal_ranks[np.argsort(-ratings, kind="stable")] = np.arange(1, len(ratings) + 1)
        idcg = _dcg(ratings, ideal_ranks, K, conventional_gain)
        if idcg > 0:
            values.append(_dcg(ratings, ranks, K, conventional_gain) / idcg)
    return float(np.mean(values)) if values else 0.0


def recall_at_k(test: InteractionSet, model: FactorModel, K: int = 5,
                catalog: bool = False) -> float:
    """Rating-weighted recall: share of a user's rating mass inside the top K.

    Users whose test ratings sum to zero are left out of the average.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    values = []
    for ratings, ranks in _per_user(test, model, catalog):
        total = ratings.sum()
        if total > 0:
            values.append(ratings[ranks <= K].sum() / total)
    return float(np.mean(values)) if values else 0.0
