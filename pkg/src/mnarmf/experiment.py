"""Multi-seed experiment runner: train each listed method, score it on the MCAR
test set, and aggregate mean and standard deviation over seeds."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import BoundConfig, InteractionSet, PropensityMap, TrainConfig
from .dataio import (ConfigError, dataset_stats, load_dense_ratings, load_triples, read_config,
                     split_train_val, train_config_from, write_trace)
from .estimators import ideal_loss
from .metrics import mse, ndcg_at_k, recall_at_k
from .propensity import ESTIMATORS, OneBitMCConfig, one_bit_mc, true_propensity_naive_bayes
from .synth import SynthSpec, gen_true_world, sample_mcar_test, sample_observation
from .trainers import TRAINERS, train_cause, train_damf, train_mf, train_mf_dr, train_mf_ips

log = logging.getLogger(__name__)

PROPENSITY_CHOICES = tuple(ESTIMATORS) + ("nb-true", "true")
SYNTH_KEYS = ("num_users", "num_items", "latent_dim", "noise", "selection_strength",
              "base_rate", "rating_spread")


@dataclass
class Workload:
    """Everything a method needs: train/validation/test splits plus optional ground truth."""

    train: InteractionSet
    validation: Optional[InteractionSet]
    test: InteractionSet
    true_ratings: Optional[np.ndarray] = None
    true_propensity: Optional[PropensityMap] = None


@dataclass
class MetricReport:
    method: str
    k: int
    per_seed: list = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([row[metric] for row in self.per_seed], dtype=float)

    def mean(self, metric: str) -> float:
        return float(self.values(metric).mean())

    def std(self, metric: str) -> float:
        v = self.values(metric)
        return float(v.std(ddof=1)) if len(v) > 1 else 0.0

    @property
    def metrics(self) -> list:
        return [k for k in self.per_seed[0] if k != "seed"] if self.per_seed else []


def parse_method(name: str):
    """``'mf-ips:user'`` -> ``('mf-ips', 'user')``; plain names carry no propensity."""
    base, _, prop = name.strip().partition(":")
    if base not in TRAINERS:
        raise ConfigError(f"unknown method {base!r}; choose from {', '.join(TRAINERS)}")
    if base in ("mf-ips", "mf-dr"):
        prop = prop or "user"
        if prop not in PROPENSITY_CHOICES:
            raise ConfigError(f"unknown propensity {prop!r} for {base}")
    elif prop:
        raise ConfigError(f"{base} takes no propensity")
    return base, prop or None


def _get(cfg: dict, key: str, cast, default):
    try:
        return cast(cfg[key]) if key in cfg else default
    except ValueError:
        raise ConfigError(f"bad value for {key}: {cfg[key]!r}") from None


def synth_spec_from(cfg: dict) -> SynthSpec:
    """SynthSpec from config keys; ``world_seed`` sets the seed and
    ``zero_block = u0 u1 i0 i1`` sets the zero-propensity block."""
    kwargs = {}
    for key in SYNTH_KEYS:
        if key in cfg:
            kwargs[key] = _get(cfg, key, type(getattr(SynthSpec, key)), None)
    if cfg.get("zero_block"):
        block = tuple(int(v) for v in str(cfg["zero_block"]).replace(",", " ").split())
        if len(block) != 4:
            raise ConfigError("zero_block needs four integers: u0 u1 i0 i1")
        kwargs["zero_block"] = block
    try:
        return SynthSpec(seed=_get(cfg, "world_seed", int, 0), **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def synth_data(spec: SynthSpec, test_items_per_user: int = 10):
    """World, MNAR observations and MCAR test set; seeds derive from ``spec.seed``."""
    R, P = gen_true_world(spec)
    observed = sample_observation(R, P, spec.seed + 1, spec.scale)
    test = sample_mcar_test(R, test_items_per_user, spec.seed + 2, spec.scale)
    return R, P, observed, test


def build_workload(cfg: dict) -> Workload:
    split_seed = _get(cfg, "split_seed", int, 0)
    val_fraction = _get(cfg, "validation_fraction", float, 0.1)
    if cfg.get("dataset", "synth") == "synth":
        R, P, observed, test = synth_data(synth_spec_from(cfg),
                                          _get(cfg, "test_items_per_user", int, 10))
    else:
        for key in ("train", "test"):
            if key not in cfg:
                raise ConfigError(f"file datasets need a '{key}' path")
        observed, test = load_pair(cfg["train"], cfg["test"],
                                   _get(cfg, "num_users", int, None),
                                   _get(cfg, "num_items", int, None),
                                   cfg.get("format", "triples"))
        R = P = None
    if val_fraction > 0:
        train, validation = split_train_val(observed, val_fraction, split_seed)
    else:
        train, validation = observed, None
    return Workload(train, validation, test, R, P)


def load_pair(train_path, test_path, num_users=None, num_items=None, fmt="triples"):
    """Load two rating files (``triples`` or ``dense``) onto one shared grid."""
    if fmt == "triples":
        train = load_triples(train_path, num_users, num_items)
        test = load_triples(test_path, num_users, num_items)
    elif fmt == "dense":
        train, test = load_dense_ratings(train_path), load_dense_ratings(test_path)
    else:
        raise ConfigError(f"unknown format {fmt!r}; use triples or dense")
    m = max(train.num_users, test.num_users)
    n = max(train.num_items, test.num_items)
    return train.with_shape(m, n), test.with_shape(m, n)


def mcar_sample(test: InteractionSet, fraction: float, seed: int) -> InteractionSet:
    rng = np.random.default_rng(seed)
    size = max(1, int(np.floor(fraction * len(test))))
    return test.subset(np.sort(rng.choice(len(test), size=size, replace=False)))


def estimate_propensity(kind: str, work: Workload, cfg: dict) -> PropensityMap:
    if kind == "true":
        if work.true_propensity is None:
            raise ConfigError("'true' propensity exists only for synthetic data")
        return work.true_propensity
    if kind == "nb-true":
        sample = mcar_sample(work.test, _get(cfg, "nb_mcar_fraction", float, 0.05),
                             _get(cfg, "mcar_seed", int, 0))
        return true_propensity_naive_bayes(work.train, sample)
    if kind == "1bitmc":
        return one_bit_mc(work.train, OneBitMCConfig(
            nuclear_cap_scale=_get(cfg, "onebit_tau", float, 1.0),
            entry_cap=_get(cfg, "onebit_gamma", float, 5.0),
            iterations=_get(cfg, "onebit_iterations", int, 500)))
    return ESTIMATORS[kind](work.train)


def method_config(cfg: dict, method: str, seed: int) -> TrainConfig:
    """Global training keys, then ``<method>.<key>`` overrides, then the seed."""
    merged = {k: v for k, v in cfg.items() if "." not in k}
    prefix = method.replace("-", "_") + "."
    merged.update({k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)})
    merged.pop("seed", None)
    return train_config_from(merged, seed=seed)


def train_method(name: str, work: Workload, config: TrainConfig, cfg: dict,
                 propensity: Optional[PropensityMap] = None):
    """Train one method; returns ``(model, trace_or_None)``."""
    base, _ = parse_method(name)
    if base == "mf":
        return train_mf(work.train, config, work.validation), None
    if base == "mf-ips":
        return train_mf_ips(work.train, propensity, config, work.validation), None
    if base == "mf-dr":
        return train_mf_dr(work.train, propensity, config, work.validation), None
    if base == "cause":
        sample = mcar_sample(work.test, _get(cfg, "cause_mcar_fraction", float, 0.1),
                             _get(cfg, "mcar_seed", int, 0))
        return train_cause(work.train, sample, config, work.validation), None
    bound = BoundConfig(confidence=_get(cfg, "bound_confidence", float, 0.05))
    return train_damf(work.train, config, bound=bound, true_ratings=work.true_ratings,
                      validation=work.validation)


def _flag(cfg: dict, key: str) -> bool:
    value = str(cfg.get(key, "false")).lower()
    if value not in ("true", "false", "1", "0", "yes", "no"):
        raise ConfigError(f"bad value for {key}: {value!r}")
    return value in ("true", "1", "yes")


def evaluate(model, work: Workload, k: int, conventional_gain: bool = False,
             catalog: bool = False) -> dict:
    row = {"mse": mse(work.test, model),
           "ndcg": ndcg_at_k(work.test, model, k, conventional_gain, catalog),
           "recall": recall_at_k(work.test, model, k, catalog)}
    if work.true_ratings is not None:
        row["ideal_mse"] = ideal_loss(work.true_ratings, model, work.train.scale)
    return row


def run_experiment(config, out_dir=None) -> list:
    """Run every method in the config over all seeds.

    ``config`` is a path or an already-parsed mapping. With ``out_dir`` the
    summary table, per-seed rows and DAMF bound traces are written as CSV.
    """
    cfg = read_config(config) if isinstance(config, (str, Path)) else dict(config)
    methods = [m.strip() for m in cfg.get("methods", "mf,damf").split(",") if m.strip()]
    for name in methods:
        parse_method(name)
    n_seeds = _get(cfg, "seeds", int, 5)
    base_seed = _get(cfg, "seed", int, 0)
    k = _get(cfg, "k", int, 5)
    metric_flags = dict(conventional_gain=_flag(cfg, "conventional_gain"),
                        catalog=_flag(cfg, "catalog_ranking"))
    work = build_workload(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log.info("workload: %s train, %s test", len(work.train), len(work.test))

    reports = []
    for name in methods:
        base, prop_kind = parse_method(name)
        propensity = estimate_propensity(prop_kind, work, cfg) if prop_kind else None
        report = MetricReport(name, k)
        for j in range(n_seeds):
            seed = base_seed + j
            model, trace = train_method(name, work, method_config(cfg, base, seed), cfg, propensity)
            row = {"seed": seed, **evaluate(model, work, k, **metric_flags)}
            report.per_seed.append(row)
            log.info("%s seed %d: %s", name, seed, row)
            if trace is not None and out is not None:
                write_trace(trace, out / f"trace_{name.replace(':', '_')}_seed{seed}.csv")
        reports.append(report)

    if out is not None:
        write_reports(reports, out / "results.csv", out / "per_seed.csv")
        if work.true_ratings is None:
            stats = dataset_stats(work.train, work.test)
            with open(out / "dataset_stats.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(stats.as_row()))
                writer.writeheader()
                writer.writerow(stats.as_row())
    return reports


def write_reports(reports, summary_path, per_seed_path):
    metrics = reports[0].metrics
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")])
        for r in reports:
            writer.writerow([r.method] + [f"{v:.6f}" for m in metrics for v in (r.mean(m), r.std(m))])
    with open(per_seed_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "seed"] + metrics)
        for r in reports:
            for row in r.per_seed:
                writer.writerow([r.method, row["seed"]] + [f"{row[m]:.6f}" for m in metrics])
