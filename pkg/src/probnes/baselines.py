"""Classical rank-based evolution strategies and random search.

All baselines minimize. Fitnesses enter only through their ranks, via the
truncated logarithmic utilities of :func:`shaping_weights`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distribution import SearchDistribution, is_pd, sym_expm
from .gaussian import as_generator, robust_cholesky
from .updates import MAX_HALVINGS

BASELINES = ("cmaes", "xnes", "snes", "random")
KIND_OF = {"cmaes": "full", "xnes": "factor", "snes": "diagonal", "random": "full"}


@dataclass(frozen=True)
class ShapingConfig:
    quantile: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.quantile <= 1.0:
            raise ValueError("quantile must lie in (0, 1]")


def utilities(n: int, quantile: float = 0.5) -> np.ndarray:
    """Weights by rank (best first): max(0, ln(q n + 0.5) - ln(rank)) on the top ceil(q n), normalized."""
    ranks = np.arange(1, n + 1)
    keep = int(np.ceil(quantile * n))
    raw = np.log(quantile * n + 0.5) - np.log(ranks)
    raw = np.where((ranks <= keep) & (raw > 0), raw, 0.0)
    return raw / raw.sum()


def shaping_weights(fitnesses, shaping: ShapingConfig | None = None) -> np.ndarray:
    """Per-sample weights; lower fitness is better, ties broken by sample order."""
    f = np.asarray(fitnesses, dtype=float)
    q = (shaping or ShapingConfig()).quantile
    order = np.argsort(np.where(np.isfinite(f), f, np.inf), kind="stable")
    w = np.empty(f.size)
    w[order] = utilities(f.size, q)
    return w


def default_population(d: int) -> int:
    return 4 + int(np.floor(3 * np.log(d)))


def _weights(fitnesses, shaping, weights, eta, eta_mean):
    """Rank weights unless explicit ``weights`` are given; the mean rate defaults to eta."""
    w = shaping_weights(fitnesses, shaping) if weights is None else np.asarray(weights, dtype=float)
    return w, eta if eta_mean is None else eta_mean


def _check(samples, fitnesses):
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    if X.shape[0] != np.size(fitnesses):
        raise ValueError("samples and fitnesses differ in length")
    return X


def cmaes_step(dist, samples, fitnesses, shaping=None, eta=0.1, eta_mean=None, weights=None) -> SearchDistribution:
    """Rank-mu update; eta halves (up to 6 times) when Sigma would leave the PD cone."""
    X = _check(samples, fitnesses)
    w, eta_mean = _weights(fitnesses, shaping, weights, eta, eta_mean)
    D = X - dist.mu
    step_sigma = (D * w[:, None]).T @ D - w.sum() * dist.sigma
    h = float(eta)
    for _ in range(MAX_HALVINGS + 1):
        sigma = dist.sigma + h * step_sigma
        sigma = 0.5 * (sigma + sigma.T)
        if is_pd(sigma):
            return SearchDistribution(dist.mu + eta_mean * (w @ D), sigma, kind=dist.kind)
        h *= 0.5
    return dist


def xnes_step(dist, samples, fitnesses, shaping=None, eta=0.1, eta_mean=None, weights=None) -> SearchDistribution:
    """mu + eta_mean A sum w z, A expm(eta/2 sum w (z z^T - I)) with z = A^{-1}(x - mu)."""
    X = _check(samples, fitnesses)
    fdist = dist.as_kind("factor")
    A = fdist.factor
    w, eta_mean = _weights(fitnesses, shaping, weights, eta, eta_mean)
    Z = np.linalg.solve(A, (X - fdist.mu).T).T
    M = (Z * w[:, None]).T @ Z - w.sum() * np.eye(A.shape[0])
    return SearchDistribution.from_factor(fdist.mu + eta_mean * A @ (w @ Z), A @ sym_expm(0.5 * eta * M))


def snes_step(dist, samples, fitnesses, shaping=None, eta=0.1, eta_mean=None, weights=None) -> SearchDistribution:
    """Elementwise: mu + eta_mean s * sum w z, s * exp(eta/2 sum w (z^2 - 1))."""
    X = _check(samples, fitnesses)
    s = dist.std
    w, eta_mean = _weights(fitnesses, shaping, weights, eta, eta_mean)
    Z = (X - dist.mu) / s
    return SearchDistribution.from_std(dist.mu + eta_mean * s * (w @ Z), s * np.exp(0.5 * eta * (w @ (Z**2 - 1.0))))


STEPS = {"cmaes": cmaes_step, "xnes": xnes_step, "snes": snes_step}


@dataclass(frozen=True)
class BaselineConfig:
    algorithm: str = "cmaes"
    population: int | None = None  # defaults to 4 + floor(3 ln d)
    eta: float = 0.1
    eta_mean: float | None = None  # defaults to eta
    quantile: float = 0.5

    def __post_init__(self):
        if self.algorithm not in BASELINES:
            raise ValueError(f"unknown baseline {self.algorithm!r}")


@dataclass
class BaselineTrace:
    queries: np.ndarray
    values: np.ndarray
    query_iterations: np.ndarray
    means: list
    covs: list

    @property
    def best_so_far(self) -> np.ndarray:
        y = np.where(np.isfinite(self.values), self.values, np.inf)
        return np.minimum.accumulate(y) if y.size else y


def _evaluate(objective, X):
    y = np.array([float(objective(x)) for x in X]) if len(X) else np.zeros(0)
    return np.where(np.isfinite(y), y, np.nan)


def random_search(objective, region, budget: int, rng_seed=None) -> BaselineTrace:
    """i.i.d. queries from a search distribution or uniformly from a (lower, upper) box."""
    rng = as_generator(rng_seed)
    if isinstance(region, tuple):
        lo, hi = (np.asarray(b, dtype=float) for b in region)
        X = rng.uniform(lo, hi, (budget, lo.size))
    else:
        L = robust_cholesky(region.cov)
        X = region.mean + rng.standard_normal((budget, region.mean.size)) @ L.T
    y = _evaluate(objective, X)
    return BaselineTrace(X, y, np.zeros(budget, dtype=int), [], [])


def run_baseline(objective, cfg: BaselineConfig, init_dist, budget: int, rng_seed=None) -> BaselineTrace:
    """Run a baseline for exactly ``budget`` evaluations.

    The last generation is truncated when the budget is not a multiple of the
    population; truncated generations are evaluated but not used for a step.
    """
    rng = as_generator(rng_seed)
    if cfg.algorithm == "random":
        return random_search(objective, init_dist, budget, rng)
    dist = init_dist.as_kind(KIND_OF[cfg.algorithm])
    d = dist.dim
    n = cfg.population or default_population(d)
    shaping = ShapingConfig(cfg.quantile)
    step = STEPS[cfg.algorithm]
    Xs, ys, its, means, covs = [], [], [], [dist.mu.copy()], [dist.sigma.copy()]
    used, gen = 0, 0
    while used < budget:
        m = min(n, budget - used)
        L = robust_cholesky(dist.sigma)
        X = dist.mu + rng.standard_normal((n, d)) @ L.T
        X = X[:m]
        y = _evaluate(objective, X)
        Xs.append(X)
        ys.append(y)
        its.append(np.full(m, gen))
        used += m
        gen += 1
        if m == n:
            f = np.where(np.isfinite(y), y, np.inf)
            dist = step(dist, X, f, shaping, cfg.eta, cfg.eta_mean)
        means.append(dist.mu.copy())
        covs.append(dist.sigma.copy())
    if not Xs:
        return BaselineTrace(np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=int), means, covs)
    return BaselineTrace(np.vstack(Xs), np.concatenate(ys), np.concatenate(its), means, covs)
