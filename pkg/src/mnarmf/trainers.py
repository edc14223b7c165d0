"""Training procedures (MF, MF-IPS, MF-DR, CausE, DAMF) and the bound tracer.

Every trainer draws from the named streams of :class:`~mnarmf.core.Streams`:
model initialisation from ``init`` and MNAR batches from ``mnar``. Extra
consumers (adversary, imputation model, uniform pairs) use their own streams,
so switching those parts off leaves the plain-MF trajectory bit-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .core import (BoundConfig, FactorModel, InteractionSet, LossBatch, PropensityError,
                   PropensityMap, ShapeError, Streams, TrainConfig, init_factors)
from .estimators import (bound_value, complexity_surrogate, complexity_term,
                         confidence_term, ideal_loss, naive_loss, pmd_empirical, pmd_gap)
from .optim import (AdamState, adam_step, grad_discrepancy, grad_weighted_mf,
                    pair_gradients, project_max_norm, sample_observed_batch,
                    sample_uniform_pairs)

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "naive", "pmd", "complexity", "confidence", "bound", "ideal")


@dataclass
class TraceRecord:
    iteration: int
    naive: float
    pmd: float
    complexity: float
    confidence: float
    bound: float
    ideal: Optional[float] = None

    def as_row(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TrainTrace:
    """Bound components logged during a DAMF run.

    ``adversary`` holds the final adversary factors of the run.
    """

    records: list = field(default_factory=list)
    adversary: Optional[FactorModel] = None

    def append(self, record: TraceRecord):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must strictly increase")
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)


class _EarlyStopping:
    """Stop once validation naive loss fails to improve for ``patience`` checks."""

    def __init__(self, validation: Optional[InteractionSet], patience: int):
        self.validation = validation
        self.patience = patience
        self.best = np.inf
        self.stale = 0

    def should_stop(self, model: FactorModel) -> bool:
        if self.validation is None:
            return False
        loss = naive_loss(self.validation, model)
        if loss < self.best:
            self.best, self.stale = loss, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _params(model: FactorModel):
    return [model.user_factors, model.item_factors]


def _inverse_propensity_weights(data: InteractionSet, propensity: PropensityMap) -> np.ndarray:
    """Per-triple weights ``(1/P) / mean_obs(1/P)``.

    ``E[sum_obs 1/P] = mn``, so the normaliser concentrates at ``mn / M`` and
    the batch mean of ``w * loss`` tracks the IPS estimate; a constant
    propensity gives weights of exactly one.
    """
    if propensity.shape != data.shape:
        raise ShapeError("propensity and data shapes differ")
    p = propensity.at(data.users, data.items)
    if not np.all(p > 0):
        raise PropensityError("zero propensity on an observed pair")
    inv = 1.0 / p
    return inv / np.mean(inv)


def _weighted_mf(data: InteractionSet, triple_weights: Optional[np.ndarray],
                 config: TrainConfig, validation=None) -> FactorModel:
    streams = Streams.from_seed(config.seed)
    m, n = data.shape
    model = init_factors(m, n, config.dim, streams.init)
    state = AdamState.like(_params(model))
    stopper = _EarlyStopping(validation, config.patience)
    ones = np.ones(config.batch_size)

    def draw():
        idx = streams.mnar.integers(0, len(data), size=config.batch_size)
        batch = LossBatch(data.users[idx], data.items[idx], data.ratings[idx])
        return batch, ones if triple_weights is None else triple_weights[idx]

    for it in range(1, config.max_iterations + 1):
        batch, w = draw()
        for step in range(config.inner_steps):
            if step and config.resample_inner:
                batch, w = draw()
            grads = grad_weighted_mf(model, batch, w, config.l2)
            adam_step(_params(model), grads, state, config.learning_rate)
        if it % config.log_every == 0 and stopper.should_stop(model):
            log.info("early stop at iteration %d", it)
            break
    return model


def train_mf(data: InteractionSet, config: TrainConfig,
             validation: Optional[InteractionSet] = None) -> FactorModel:
    """Mini-batch Adam on the naive loss plus L2."""
    return _weighted_mf(data, None, config, validation)


def train_mf_ips(data: InteractionSet, propensity: PropensityMap, config: TrainConfig,
                 validation: Optional[InteractionSet] = None) -> FactorModel:
    return _weighted_mf(data, _inverse_propensity_weights(data, propensity), config, validation)


def train_mf_dr(data: InteractionSet, propensity: PropensityMap, config: TrainConfig,
                validation: Optional[InteractionSet] = None, *, impute: bool = True) -> FactorModel:
    """Doubly robust joint learning.

    An imputation factor model, offset by the inverse-propensity-weighted
    mean rating, predicts pseudo-ratings ``r~``; the imputed loss is
    ``(R_hat - r~)^2``. Each inner step first descends the prediction
    model on the mini-batch DR objective (uniform pairs for the imputed term,
    weighted observed pairs for the correction), then fits the imputation
    model so imputed losses match observed ones. ``impute=False`` freezes the
    imputed loss at zero, which reduces to MF-IPS.
    """
    weights = _inverse_propensity_weights(data, propensity)
    streams = Streams.from_seed(config.seed)
    m, n = data.shape
    T = config.batch_size
    model = init_factors(m, n, config.dim, streams.init)
    state = AdamState.like(_params(model))
    if impute:
        imputer = init_factors(m, n, config.dim, streams.auxiliary)
        # centre pseudo-ratings on the propensity-weighted mean rating
        imputer.offset = float(np.sum(weights * data.ratings) / np.sum(weights))
        imp_state = AdamState.like(_params(imputer))
    stopper = _EarlyStopping(validation, config.patience)

    def draw():
        idx = streams.mnar.integers(0, len(data), size=T)
        return LossBatch(data.users[idx], data.items[idx], data.ratings[idx]), weights[idx]

    for it in range(1, config.max_iterations + 1):
        batch, w = draw()
        if impute:
            direct = sample_uniform_pairs(m, n, T, streams.mcar)
        for step in range(config.inner_steps):
            if step and config.resample_inner:
                batch, w = draw()
            gU, gV = grad_weighted_mf(model, batch, w, config.l2)
            if impute:
                pseudo = imputer.predict_pairs(batch.users, batch.items)
                cU, cV = grad_weighted_mf(model, LossBatch(batch.users, batch.items, pseudo), -w, 0.0)
                pseudo_direct = imputer.predict_pairs(direct.users, direct.items)
                dU, dV = grad_weighted_mf(model, LossBatch(direct.users, direct.items, pseudo_direct),
                                          np.ones(T), 0.0)
                gU += cU + dU
                gV += cV + dV
            adam_step(_params(model), (gU, gV), state, config.learning_rate)

            if impute:
                pred = model.predict_pairs(batch.users, batch.items)
                pseudo = imputer.predict_pairs(batch.users, batch.items)
                observed_loss = (batch.ratings - pred) ** 2
                imputed_loss = (pred - pseudo) ** 2
                coef = w * 2.0 * (imputed_loss - observed_loss) * (-2.0) * (pred - pseudo) / T
                iU, iV = pair_gradients(imputer, batch.users, batch.items, coef)
                iU += 2.0 * config.l2 * imputer.user_factors
                iV += 2.0 * config.l2 * imputer.item_factors
                adam_step(_params(imputer), (iU, iV), imp_state, config.learning_rate)
        if it % config.log_every == 0 and stopper.should_stop(model):
            log.info("early stop at iteration %d", it)
            break
    return model


def train_cause(mnar: InteractionSet, mcar: InteractionSet, config: TrainConfig,
                validation: Optional[InteractionSet] = None, *, return_twin: bool = False):
    """Jointly fit an MNAR and an MCAR model tied by a factor-distance penalty.

    Returns the MNAR model, or ``(mnar_model, mcar_model)`` with ``return_twin``.
    """
    if mnar.shape != mcar.shape:
        raise ShapeError(f"MNAR {mnar.shape} and MCAR {mcar.shape} grids differ")
    streams = Streams.from_seed(config.seed)
    m, n = mnar.shape
    beta = config.tradeoff
    model = init_factors(m, n, config.dim, streams.init)
    twin = init_factors(m, n, config.dim, streams.auxiliary)
    state, twin_state = AdamState.like(_params(model)), AdamState.like(_params(twin))
    stopper = _EarlyStopping(validation, config.patience)
    ones = np.ones(config.batch_size)

    for it in range(1, config.max_iterations + 1):
        batch = sample_observed_batch(mnar, config.batch_size, streams.mnar)
        twin_batch = sample_observed_batch(mcar, config.batch_size, streams.mcar)
        for step in range(config.inner_steps):
            if step and config.resample_inner:
                batch = sample_observed_batch(mnar, config.batch_size, streams.mnar)
                twin_batch = sample_observed_batch(mcar, config.batch_size, streams.mcar)
            gU, gV = grad_weighted_mf(model, batch, ones, config.l2)
            tU, tV = grad_weighted_mf(twin, twin_batch, ones, config.l2)
            if beta:
                diff_u = model.user_factors - twin.user_factors
                diff_v = model.item_factors - twin.item_factors
                gU += 2.0 * beta * diff_u
                gV += 2.0 * beta * diff_v
                tU -= 2.0 * beta * diff_u
                tV -= 2.0 * beta * diff_v
            adam_step(_params(model), (gU, gV), state, config.learning_rate)
            adam_step(_params(twin), (tU, tV), twin_state, config.learning_rate)
        if it % config.log_every == 0 and stopper.should_stop(model):
            log.info("early stop at iteration %d", it)
            break
    return (model, twin) if return_twin else model


def _adversary_bound(data: InteractionSet, config: TrainConfig) -> float:
    if config.adversary_bound is not None:
        return config.adversary_bound
    return 0.5 * (data.scale.r_max - data.scale.r_min)


def train_damf(data: InteractionSet, config: TrainConfig, *,
               bound: BoundConfig = BoundConfig(),
               true_ratings: Optional[np.ndarray] = None,
               validation: Optional[InteractionSet] = None):
    """Domain adversarial matrix factorization.

    Each outer iteration samples an MNAR batch, takes ``inner_steps`` Adam
    descent steps on naive loss + tradeoff * gap + L2 with the adversary fixed,
    draws a fresh batch of uniform pairs, then takes ``inner_steps`` Adam ascent
    steps on the gap for the adversary with the model fixed. The adversary
    keeps its Adam state across iterations and is held inside the max-norm
    ball ``|R'| <= adversary_bound``. The first descent block uses a uniform
    batch drawn before the loop.

    Returns ``(model, trace)``; the bound is traced every ``log_every`` iterations.
    """
    streams = Streams.from_seed(config.seed)
    m, n = data.shape
    T, beta = config.batch_size, config.tradeoff
    adv_bound = _adversary_bound(data, config)
    adv_lr = config.adversary_learning_rate or config.learning_rate
    model = init_factors(m, n, config.dim, streams.init)
    adversary = init_factors(m, n, config.dim, streams.adversary)
    adversary.offset = data.scale.midpoint
    project_max_norm(adversary, adv_bound)
    state = AdamState.like(_params(model))
    adv_state = AdamState.like(_params(adversary))
    stopper = _EarlyStopping(validation, config.patience)
    ones = np.ones(T)
    trace = TrainTrace()

    mcar = sample_uniform_pairs(m, n, T, streams.mcar)
    for it in range(1, config.max_iterations + 1):
        mnar = sample_observed_batch(data, T, streams.mnar)
        for step in range(config.inner_steps):
            if step and config.resample_inner:
                mnar = sample_observed_batch(data, T, streams.mnar)
            gU, gV = grad_weighted_mf(model, mnar, ones, config.l2)
            if beta:
                dU, dV = grad_discrepancy(model, adversary, mcar, mnar, target="model")
                gU += beta * dU
                gV += beta * dV
            adam_step(_params(model), (gU, gV), state, config.learning_rate)

        mcar = sample_uniform_pairs(m, n, T, streams.mcar)
        for _ in range(config.inner_steps):
            aU, aV = grad_discrepancy(model, adversary, mcar, mnar, target="adversary")
            adam_step(_params(adversary), (-aU, -aV), adv_state, adv_lr)
            project_max_norm(adversary, adv_bound)

        if it % config.log_every == 0:
            record = trace_bound(model, adversary, data, bound, true_ratings, rng=streams.trace,
                                 adversary_bound=adv_bound)
            record.iteration = it
            trace.append(record)
            if stopper.should_stop(model):
                log.info("early stop at iteration %d", it)
                break
    trace.adversary = adversary
    return model, trace


def trace_bound(model: FactorModel, adversary: FactorModel, data: InteractionSet,
                bound_cfg: BoundConfig = BoundConfig(),
                true_ratings: Optional[np.ndarray] = None, *, rng=None,
                adversary_bound: Optional[float] = None) -> TraceRecord:
    """Evaluate the four bound components for the current model and adversary.

    Predictions are clipped into the rating range, so every pairwise loss is
    at most ``(r_max - r_min)^2``. The divergence term compares all observed
    pairs against ``M`` fresh uniform pairs. It is the larger of the gap at
    ``adversary`` and at a copy refined by ``bound_cfg.refine_steps`` ascent
    steps inside ``|R' - offset| <= adversary_bound`` (default half the range).
    """
    scale = data.scale
    m, n = data.shape
    M = len(data)
    rng = np.random.default_rng(rng)
    naive = naive_loss(data, model, scale)
    uniform = sample_uniform_pairs(m, n, M, rng)
    observed = LossBatch.from_interactions(data)
    pmd = pmd_gap(model, adversary, uniform, observed, scale)
    if bound_cfg.refine_steps:
        if adversary_bound is None:
            adversary_bound = 0.5 * (scale.r_max - scale.r_min)
        _, refined = pmd_empirical(model, uniform, observed, TrainConfig(dim=adversary.dim),
                                   steps=bound_cfg.refine_steps, bound=adversary_bound,
                                   init=adversary)
        pmd = max(pmd, pmd_gap(model, refined, uniform, observed, scale))
    pmd = max(pmd, 0.0)

    A = bound_cfg.max_norm_bound
    if A is None:
        A = float(np.max(np.abs(scale.clip(model.full_matrix()))))
    L = bound_cfg.lipschitz if bound_cfg.lipschitz is not None else 2.0 * (scale.r_max - scale.r_min)
    rad = complexity_surrogate(A, m, n, M)
    parts = bound_value(naive, pmd, complexity_term(L, rad, rad),
                        confidence_term(scale.loss_bound, bound_cfg.confidence, M))
    ideal = None if true_ratings is None else ideal_loss(true_ratings, model, scale)
    return TraceRecord(0, parts.naive, parts.pmd, parts.complexity, parts.confidence,
                       parts.total, ideal)


TRAINERS = ("mf", "mf-ips", "mf-dr", "cause", "damf")
