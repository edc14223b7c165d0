import numpy as np
import pytest

from mnarmf.core import FactorModel, InteractionSet, LossBatch


def random_model(rng, m, n, d, scale=1.0, offset=0.0):
    return FactorModel(scale * rng.standard_normal((m, d)),
                       scale * rng.standard_normal((n, d)), offset)


def random_batch(rng, m, n, T, labelled=True):
    ratings = rng.uniform(1, 5, T) if labelled else None
    return LossBatch(rng.integers(0, m, T), rng.integers(0, n, T), ratings)


def central_difference(f, params, h=1e-5):
    """Numerical gradient of scalar ``f()`` with respect to each array in ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-5):
    """Norm of the difference over the larger gradient norm.

    The floor stops round-off from dominating when the true gradient is ~0.
    """
    a = np.concatenate([np.ravel(x) for x in analytic])
    b = np.concatenate([np.ravel(x) for x in numeric])
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_set():
    # 3 users x 4 items, 6 observed triples
    return InteractionSet(3, 4, [0, 0, 1, 1, 2, 2], [0, 1, 1, 2, 0, 3],
                          [5, 3, 4, 1, 2, 5])


BENCHMARK = dict(num_users=200, num_items=100, latent_dim=3, noise=0.75,
                 selection_strength=1.0, base_rate=0.05)
BENCHMARK_TRAIN = dict(dim=5, l2=2e-3, tradeoff=0.3)
BENCHMARK_WORLD_SEED = 7


@pytest.fixture(scope="session")
def benchmark_world():
    """True ratings, true propensities and MNAR observations of the shared benchmark."""
    from mnarmf.synth import SynthSpec, gen_true_world, sample_observation

    spec = SynthSpec(seed=BENCHMARK_WORLD_SEED, **BENCHMARK)
    R, P = gen_true_world(spec)
    return R, P, sample_observation(R, P, BENCHMARK_WORLD_SEED + 1)


@pytest.fixture(scope="session")
def benchmark_mf_losses(benchmark_world):
    from mnarmf.core import TrainConfig
    from mnarmf.estimators import ideal_loss
    from mnarmf.trainers import train_mf

    R, _, data = benchmark_world
    return [ideal_loss(R, train_mf(data, TrainConfig(seed=s, **BENCHMARK_TRAIN)), data.scale)
            for s in range(5)]


ACCEPTANCE_LINES = []


@pytest.fixture
def report(request):
    """Record and print one pass/fail line, then fail the test if it did not pass."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line)
        assert passed, line
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
