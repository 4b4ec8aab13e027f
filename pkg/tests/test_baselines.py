import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probnes.baselines import (
    BaselineConfig,
    ShapingConfig,
    cmaes_step,
    default_population,
    random_search,
    run_baseline,
    shaping_weights,
    snes_step,
    utilities,
    xnes_step,
)
from probnes.distribution import SearchDistribution
from probnes.validation import random_distribution

seeds = st.integers(0, 2**31 - 1)
STEPS = [cmaes_step, xnes_step, snes_step]


def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


def test_utilities():
    u = utilities(10)
    assert u.sum() == pytest.approx(1.0)
    assert np.all(np.diff(u) <= 0)
    assert np.all(u[5:] == 0) and np.all(u[:5] > 0)
    raw = np.log(5.5) - np.log(np.arange(1, 6))
    assert np.allclose(u[:5], raw / raw.sum())
    assert np.count_nonzero(utilities(10, 0.3)) == 3
    with pytest.raises(ValueError):
        ShapingConfig(0.0)


def test_shaping_weights_ranks_and_nonfinite():
    w = shaping_weights([3.0, 1.0, np.nan, 2.0])
    assert w[1] > w[3] > 0 and w[0] == 0 and w[2] == 0
    assert default_population(2) == 6 and default_population(10) == 10


@pytest.mark.parametrize("step", STEPS)
def test_zero_weights_unchanged(step):
    dist = random_distribution(np.random.default_rng(0), 3, kind="diagonal")
    X = np.random.default_rng(1).standard_normal((6, 3))
    new = step(dist, X, np.arange(6.0), weights=np.zeros(6))
    assert np.allclose(new.mu, dist.mu, atol=1e-15)
    assert np.allclose(new.sigma, dist.sigma, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_rank_invariance(seed):
    rng = np.random.default_rng(seed)
    dist = random_distribution(rng, 2)
    X = dist.mu + rng.standard_normal((8, 2))
    f = rng.standard_normal(8)
    for step in STEPS:
        a = step(dist, X, f)
        b = step(dist, X, np.exp(3 * f) - 7.0)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma)


def test_xnes_agrees_with_cmaes_to_first_order():
    rng = np.random.default_rng(2)
    dist = random_distribution(rng, 3)
    X = dist.mu + rng.standard_normal((10, 3))
    f = rng.standard_normal(10)
    ratios = []
    for eta in (1e-3, 1e-4, 1e-5):
        a = cmaes_step(dist, X, f, eta=eta).sigma
        b = xnes_step(dist, X, f, eta=eta).sigma
        ratios.append(np.abs(a - b).max() / eta**2)
        assert np.allclose(cmaes_step(dist, X, f, eta=eta).mu, xnes_step(dist, X, f, eta=eta).mu, atol=1e-12)
    assert max(ratios) <= 2 * ratios[0]


def test_snes_agrees_with_cmaes_diagonal_to_first_order():
    rng = np.random.default_rng(3)
    dist = random_distribution(rng, 3, kind="diagonal")
    X = dist.mu + rng.standard_normal((10, 3))
    f = rng.standard_normal(10)
    ratios = []
    for eta in (1e-3, 1e-4, 1e-5):
        a = np.diag(cmaes_step(dist, X, f, eta=eta).sigma)
        b = np.diag(snes_step(dist, X, f, eta=eta).sigma)
        ratios.append(np.abs(a - b).max() / eta**2)
    assert max(ratios) <= 2 * ratios[0]


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(0.01, 5.0))
def test_snes_std_positive(seed, eta):
    rng = np.random.default_rng(seed)
    dist = random_distribution(rng, 3, kind="diagonal")
    X = dist.mu + 5 * rng.standard_normal((7, 3))
    assert np.all(snes_step(dist, X, rng.standard_normal(7), eta=eta).std > 0)


def test_cmaes_pd_repair():
    dist = SearchDistribution(np.zeros(1), [[1.0]])
    X = np.zeros((4, 1))
    new = cmaes_step(dist, X, np.arange(4.0), eta=1.5)
    assert new.sigma[0, 0] == pytest.approx(0.25)
    assert cmaes_step(dist, X, np.arange(4.0), eta=1e3) is dist


@pytest.mark.slow
@pytest.mark.parametrize("algorithm", ["cmaes", "xnes", "snes"])
def test_sphere_convergence(algorithm):
    hits = 0
    for seed in range(15):
        trace = run_baseline(
            sphere, BaselineConfig(algorithm, population=10), SearchDistribution(np.full(2, -1.0), np.eye(2)), 2000, seed
        )
        assert len(trace.means) == 201
        hits += np.linalg.norm(trace.means[-1]) < 1e-3
    assert hits >= 12


def test_budget_accounting_with_truncated_generation():
    trace = run_baseline(sphere, BaselineConfig("cmaes", population=6), SearchDistribution(np.zeros(2), np.eye(2)), 20, 0)
    assert trace.queries.shape == (20, 2)
    assert trace.query_iterations.tolist() == [0] * 6 + [1] * 6 + [2] * 6 + [3] * 2
    # the truncated generation is evaluated but does not move the distribution
    assert np.array_equal(trace.means[-1], trace.means[-2])


def test_random_search():
    dist = SearchDistribution(np.zeros(2), np.eye(2))
    empty = random_search(sphere, dist, 0, 0)
    assert empty.queries.shape[0] == 0 and empty.best_so_far.size == 0
    a, b = random_search(sphere, dist, 50, 4), random_search(sphere, dist, 50, 4)
    assert np.array_equal(a.queries, b.queries)
    box = random_search(sphere, (np.array([-3.0, 0.0]), np.array([3.0, 1.0])), 10_000, 5)
    lo, hi = box.queries.min(axis=0), box.queries.max(axis=0)
    assert np.all(lo >= [-3.0, 0.0]) and np.all(hi <= [3.0, 1.0])
    assert np.all(np.abs(lo - [-3.0, 0.0]) <= 0.01 * np.array([6.0, 1.0]))
    assert np.all(np.abs(hi - [3.0, 1.0]) <= 0.01 * np.array([6.0, 1.0]))
    assert run_baseline(sphere, BaselineConfig("random"), dist, 7, 1).queries.shape == (7, 2)
    with pytest.raises(ValueError):
        BaselineConfig("bo")
