"""Dataset loading, splitting, statistics and every on-disk format.

Formats
-------
triples
    whitespace-separated ``user item rating`` per line, 1-indexed.
dense ratings
    one row per user, one column per item, ``0`` marks an unobserved pair.
dense matrix (propensities, true ratings)
    one row per user, space-separated values.
model
    header ``m n d [offset]`` then ``m`` rows of U and ``n`` rows of V.
trace
    CSV with one column per bound component.
config
    flat ``key = value`` lines; ``#`` starts a comment.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .core import (FIVE_STAR, DuplicatePairError, FactorModel, InteractionSet,
                   PropensityMap, RatingScale, TrainConfig)
from .propensity import rating_histogram
from .trainers import TRACE_COLUMNS, TraceRecord, TrainTrace


class ParseError(ValueError):
    pass


class RatingRangeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def resolve_path(path) -> Path:
    """Relative paths that do not exist locally are looked up under ``$DATA_DIR``."""
    p = Path(path)
    root = os.environ.get("DATA_DIR")
    if not p.is_absolute() and not p.exists() and root:
        return Path(root) / p
    return p


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def load_triples(path, num_users=None, num_items=None,
                 scale: RatingScale = FIVE_STAR) -> InteractionSet:
    users, items, ratings = [], [], []
    seen = {}
    with open(resolve_path(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ParseError(f"line {lineno}: expected 'user item rating', got {line.strip()!r}")
            try:
                u, i, r = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError(f"line {lineno}: cannot parse {line.strip()!r}") from None
            if u < 1 or i < 1:
                raise ParseError(f"line {lineno}: indices are 1-based")
            if not scale.r_min <= r <= scale.r_max:
                raise RatingRangeError(
                    f"line {lineno}: rating {parts[2]} outside [{scale.r_min:g}, {scale.r_max:g}]")
            if (u, i) in seen:
                raise DuplicatePairError(f"line {lineno}: pair ({u}, {i}) repeats line {seen[u, i]}")
            seen[u, i] = lineno
            users.append(u - 1)
            items.append(i - 1)
            ratings.append(r)
    if not users:
        raise ParseError(f"{path}: no triples")
    m = num_users if num_users is not None else max(users) + 1
    n = num_items if num_items is not None else max(items) + 1
    return InteractionSet(m, n, users, items, ratings, scale)


def load_dense_ratings(path, scale: RatingScale = FIVE_STAR) -> InteractionSet:
    """Rating matrix with zeros for unobserved pairs, as shipped with Coat."""
    try:
        matrix = np.loadtxt(resolve_path(path), ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    observed = matrix != 0
    values = matrix[observed]
    if values.size == 0:
        raise ParseError(f"{path}: no observed ratings")
    if values.min() < scale.r_min or values.max() > scale.r_max:
        row = int(np.argwhere(observed & ((matrix < scale.r_min) | (matrix > scale.r_max)))[0, 0])
        raise RatingRangeError(f"line {row + 1}: rating outside [{scale.r_min:g}, {scale.r_max:g}]")
    return InteractionSet.from_dense(matrix, observed, scale)


def write_triples(data: InteractionSet, path):
    with open(path, "w") as fh:
        for u, i, r in zip(data.users, data.items, data.ratings):
            fh.write(f"{u + 1} {i + 1} {_fmt(r)}\n")


def split_train_val(data: InteractionSet, fraction: float, seed):
    """Random disjoint split; the validation part holds ``floor(fraction * M)`` triples."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n_val = int(np.floor(fraction * len(data)))
    if n_val < 1 or n_val >= len(data):
        raise ValueError(f"fraction {fraction} leaves an empty side of a {len(data)}-triple split")
    perm = np.random.default_rng(seed).permutation(len(data))
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


@dataclass(frozen=True)
class DatasetStats:
    num_users: int
    num_items: int
    num_ratings: int
    sparsity: float
    mean_rating_train: float
    mean_rating_test: float
    kl_divergence: float
    kl_reverse: float

    def as_row(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log(p / q)))


def dataset_stats(train: InteractionSet, test: InteractionSet) -> DatasetStats:
    """Grid size, training sparsity ``M / mn`` and KL(train || test) of rating levels.

    ``m`` and ``n`` cover both sets; rating histograms are Laplace-smoothed.
    """
    m = max(train.num_users, test.num_users)
    n = max(train.num_items, test.num_items)
    levels = train.scale.levels
    p, q = rating_histogram(train, levels), rating_histogram(test, levels)
    return DatasetStats(m, n, len(train), len(train) / (m * n),
                        float(train.ratings.mean()), float(test.ratings.mean()),
                        _kl(p, q), _kl(q, p))


def write_dense(matrix: np.ndarray, path):
    np.savetxt(path, np.atleast_2d(matrix), fmt="%.17g")


def read_dense(path) -> np.ndarray:
    return np.loadtxt(resolve_path(path), ndmin=2)


def write_propensity(prop: PropensityMap, path):
    write_dense(prop.to_dense(), path)


def read_propensity(path) -> PropensityMap:
    return PropensityMap.from_dense(read_dense(path), allow_zero=True)


def write_model(model: FactorModel, path):
    m, n = model.shape
    header = f"{m} {n} {model.dim}" + (f" {_fmt(model.offset)}" if model.offset else "")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in np.vstack([model.user_factors, model.item_factors]):
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


def read_model(path) -> FactorModel:
    with open(resolve_path(path)) as fh:
        header = fh.readline().split()
        if len(header) not in (3, 4):
            raise ParseError(f"{path}: model header must be 'm n d [offset]'")
        m, n, d = map(int, header[:3])
        offset = float(header[3]) if len(header) == 4 else 0.0
        body = np.loadtxt(fh, ndmin=2)
    if body.shape != (m + n, d):
        raise ParseError(f"{path}: expected {m + n} rows of {d} values, got {body.shape}")
    return FactorModel(body[:m], body[m:], offset)


def write_trace(trace: TrainTrace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for rec in trace.records:
            row = rec.as_row()
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in TRACE_COLUMNS})


def read_trace(path) -> TrainTrace:
    trace = TrainTrace()
    with open(resolve_path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            ideal = float(row["ideal"]) if row["ideal"] else None
            trace.append(TraceRecord(int(row["iteration"]), float(row["naive"]), float(row["pmd"]),
                                     float(row["complexity"]), float(row["confidence"]),
                                     float(row["bound"]), ideal))
    return trace


def read_config(path) -> dict:
    config = {}
    with open(resolve_path(path)) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            config[key.replace("-", "_")] = value
    return config


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, value: str):
    kind = str(_TRAIN_KEYS[key])
    try:
        if "bool" in kind:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if "Optional" in kind:
            return None if value.lower() == "none" else float(value)
        if "int" in kind:
            return int(float(value))
        return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def train_config_from(mapping: dict, **overrides) -> TrainConfig:
    """Build a TrainConfig from the recognised keys of a config mapping."""
    kwargs = {k: _coerce(k, v) for k, v in mapping.items() if k in _TRAIN_KEYS}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kwargs)
