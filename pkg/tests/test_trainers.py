import numpy as np
import pytest

from conftest import BENCHMARK_TRAIN
from mnarmf.core import (BoundConfig, InteractionSet, PropensityError, PropensityMap,
                         Streams, TrainConfig, init_factors)
from mnarmf.estimators import ideal_loss, naive_loss
from mnarmf.synth import SynthSpec, gen_true_world, sample_mcar_test, sample_observation
from mnarmf.trainers import (TraceRecord, TrainTrace, train_cause, train_damf, train_mf,
                             train_mf_dr, train_mf_ips)

FAST = dict(dim=3, max_iterations=300, batch_size=64, log_every=50)


@pytest.fixture(scope="module")
def small_world():
    spec = SynthSpec(40, 30, base_rate=0.15, seed=1)
    R, P = gen_true_world(spec)
    return R, P, sample_observation(R, P, 2)


def same_model(a, b):
    return (np.array_equal(a.user_factors, b.user_factors)
            and np.array_equal(a.item_factors, b.item_factors) and a.offset == b.offset)


def test_mf_fits_rank_one_ratings():
    rng = np.random.default_rng(0)
    R = np.outer(rng.uniform(1, 2, 20), rng.uniform(1, 2.5, 15))
    data = InteractionSet.from_dense(R, np.ones_like(R, dtype=bool))
    model = train_mf(data, TrainConfig(dim=2, l2=0.0, seed=0))
    assert naive_loss(data, model) < 1e-2


def test_zero_iterations_returns_initialisation(small_world):
    _, _, data = small_world
    model = train_mf(data, TrainConfig(max_iterations=0, dim=4, seed=9))
    init = init_factors(*data.shape, 4, Streams.from_seed(9).init)
    assert same_model(model, init)


@pytest.mark.parametrize("trainer", ["mf", "ips", "dr", "cause", "damf"])
def test_trainers_are_deterministic(small_world, trainer):
    R, P, data = small_world
    mcar = sample_mcar_test(R, 5, 0)
    cfg = TrainConfig(seed=4, **FAST)
    run = {
        "mf": lambda: train_mf(data, cfg),
        "ips": lambda: train_mf_ips(data, P, cfg),
        "dr": lambda: train_mf_dr(data, P, cfg),
        "cause": lambda: train_cause(data, mcar, cfg),
        "damf": lambda: train_damf(data, cfg, true_ratings=R)[0],
    }[trainer]
    assert same_model(run(), run())


def test_damf_trace_is_deterministic(small_world):
    R, _, data = small_world
    cfg = TrainConfig(seed=1, **FAST)
    _, a = train_damf(data, cfg, true_ratings=R)
    _, b = train_damf(data, cfg, true_ratings=R)
    assert [r.as_row() for r in a.records] == [r.as_row() for r in b.records]


def test_ips_with_unit_propensity_matches_mf(small_world):
    _, _, data = small_world
    cfg = TrainConfig(seed=3, **FAST)
    assert same_model(train_mf_ips(data, PropensityMap.uniform(1.0, *data.shape), cfg),
                      train_mf(data, cfg))


def test_dr_without_imputation_matches_ips(small_world):
    _, P, data = small_world
    cfg = TrainConfig(seed=3, **FAST)
    assert same_model(train_mf_dr(data, P, cfg, impute=False), train_mf_ips(data, P, cfg))


def test_cause_without_penalty_matches_mf(small_world):
    R, _, data = small_world
    cfg = TrainConfig(seed=5, tradeoff=0.0, **FAST)
    assert same_model(train_cause(data, sample_mcar_test(R, 5, 0), cfg), train_mf(data, cfg))


def test_cause_huge_penalty_ties_factor_sets(small_world):
    R, _, data = small_world
    cfg = TrainConfig(seed=5, tradeoff=1e6, dim=3, max_iterations=2500, batch_size=64)
    model, twin = train_cause(data, sample_mcar_test(R, 5, 0), cfg, return_twin=True)
    dist = np.sqrt(np.sum((model.user_factors - twin.user_factors) ** 2)
                   + np.sum((model.item_factors - twin.item_factors) ** 2))
    assert dist < 1e-2


@pytest.mark.parametrize("resample", [False, True])
@pytest.mark.parametrize("inner", [1, 3])
def test_damf_without_tradeoff_matches_mf(small_world, inner, resample):
    _, _, data = small_world
    cfg = TrainConfig(seed=8, tradeoff=0.0, inner_steps=inner, resample_inner=resample, **FAST)
    model, _ = train_damf(data, cfg)
    assert same_model(model, train_mf(data, cfg))


def test_damf_trace_structure(small_world):
    R, _, data = small_world
    _, trace = train_damf(data, TrainConfig(seed=2, **FAST), true_ratings=R)
    its = trace.column("iteration")
    assert np.all(np.diff(its) > 0) and its[0] == 50 and len(trace) == 6
    parts = trace.column("naive") + trace.column("pmd") + trace.column("complexity") + trace.column("confidence")
    assert np.allclose(parts, trace.column("bound"), rtol=1e-15)
    assert np.all(trace.column("pmd") >= 0)
    assert trace.adversary is not None
    # the adversary stays inside the rating scale
    adv = trace.adversary.full_matrix()
    assert adv.min() >= 1 - 1e-9 and adv.max() <= 5 + 1e-9


def test_damf_adversary_learning_rate_changes_only_the_adversary_path(small_world):
    _, _, data = small_world
    base = TrainConfig(seed=2, tradeoff=0.0, **FAST)
    fast = TrainConfig(seed=2, tradeoff=0.0, adversary_learning_rate=0.1, **FAST)
    m1, t1 = train_damf(data, base)
    m2, t2 = train_damf(data, fast)
    assert same_model(m1, m2)
    assert not same_model(t1.adversary, t2.adversary)


def test_trace_rejects_non_increasing_iterations():
    trace = TrainTrace()
    trace.append(TraceRecord(50, 1, 0, 1, 1, 3))
    with pytest.raises(ValueError):
        trace.append(TraceRecord(50, 1, 0, 1, 1, 3))


def test_early_stopping_shortens_training(small_world):
    R, _, data = small_world
    from mnarmf.dataio import split_train_val
    train, val = split_train_val(data, 0.2, 0)
    cfg = TrainConfig(seed=0, dim=3, batch_size=64, max_iterations=5000, log_every=10,
                      patience=1, learning_rate=0.05)
    _, trace = train_damf(train, cfg, validation=val)
    assert trace.column("iteration")[-1] < 5000


def test_ips_rejects_zero_propensity_on_observed_pair():
    data = InteractionSet(2, 2, [0], [0], [3])
    prop = PropensityMap.from_dense([[0.0, 0.5], [0.5, 0.5]], allow_zero=True)
    with pytest.raises(PropensityError):
        train_mf_ips(data, prop, TrainConfig(**FAST))


def test_damf_handles_zero_propensity_block():
    R, P = gen_true_world(SynthSpec(30, 20, base_rate=0.2, zero_block=(0, 10, 0, 10), seed=4))
    data = sample_observation(R, P, 0)
    model, _ = train_damf(data, TrainConfig(seed=0, **FAST))
    assert np.all(np.isfinite(model.full_matrix()))


@pytest.mark.slow
def test_ips_with_true_propensity_beats_mf(benchmark_world, benchmark_mf_losses):
    R, P, data = benchmark_world
    ips = [ideal_loss(R, train_mf_ips(data, P, TrainConfig(seed=s, **BENCHMARK_TRAIN)), data.scale)
           for s in range(5)]
    assert np.mean(ips) < np.mean(benchmark_mf_losses)


@pytest.mark.slow
def test_dr_with_true_propensity_no_worse_than_mf(benchmark_world, benchmark_mf_losses):
    R, P, data = benchmark_world
    dr = [ideal_loss(R, train_mf_dr(data, P, TrainConfig(seed=s, **BENCHMARK_TRAIN)), data.scale)
          for s in range(5)]
    assert np.mean(dr) <= np.mean(benchmark_mf_losses)
