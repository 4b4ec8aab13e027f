"""Multivariate normal identities.

Densities, products of two Gaussian densities and their moments, log-density
parameter derivatives, Mahalanobis geometry and sampling. Every function takes
"Gaussian-like" objects, i.e. anything exposing ``mean`` and ``cov`` arrays, so
search distributions can be passed directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy import linalg, stats

LOG_2PI = np.log(2.0 * np.pi)

# Jitter ladder, in units of trace(S)/d.
JITTER_START = 1e-10
JITTER_MAX = 1e-6


class NotPositiveDefiniteError(ValueError):
    """Raised when a covariance matrix cannot be factorized even after jitter."""


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"inconsistent shapes: mean {mean.shape}, cov {cov.shape}")
        scale = max(np.abs(cov).max(), 1e-300)
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class ProductParams:
    """N(x; m1, S1) N(x; m2, S2) = scale * N(x; nu, pi)."""

    nu: np.ndarray
    pi: np.ndarray
    scale: float


def _as_gaussian(g) -> Gaussian:
    if isinstance(g, Gaussian):
        return g
    return Gaussian(g.mean, g.cov)


def _check_same_dim(g1, g2):
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")


def robust_cholesky(S) -> np.ndarray:
    """Lower Cholesky factor of ``S``, escalating diagonal jitter on failure.

    Jitter starts at 1e-10 * trace(S)/d and grows tenfold up to 1e-6 * trace(S)/d.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    S = 0.5 * (S + S.T)
    try:
        return linalg.cholesky(S, lower=True)
    except linalg.LinAlgError:
        pass
    d = S.shape[0]
    unit = np.trace(S) / d
    if not unit > 0:
        raise NotPositiveDefiniteError("matrix has non-positive trace")
    jitter = JITTER_START
    eye = np.eye(d)
    while jitter <= JITTER_MAX * (1 + 1e-12):
        try:
            return linalg.cholesky(S + jitter * unit * eye, lower=True)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefiniteError("matrix is not positive definite after jitter")


def _chol_solve(L, b):
    return linalg.cho_solve((L, True), b)


def _logdet_from_chol(L) -> float:
    return 2.0 * np.sum(np.log(np.diag(L)))


def mvn_logpdf(x, g) -> float | np.ndarray:
    """Log density of ``g`` at ``x``; ``x`` may be a single point or an (n, d) array."""
    g = _as_gaussian(g)
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = np.atleast_2d(x) if x.ndim > 0 else x.reshape(1, 1)
    if X.shape[-1] != g.dim:
        raise ValueError(f"dimension mismatch: x has {X.shape[-1]}, Gaussian has {g.dim}")
    L = robust_cholesky(g.cov)
    z = linalg.solve_triangular(L, (X - g.mean).T, lower=True)
    out = -0.5 * (g.dim * LOG_2PI + _logdet_from_chol(L) + np.sum(z * z, axis=0))
    return float(out[0]) if single else out


def mvn_pdf(x, g):
    return np.exp(mvn_logpdf(x, g))


def product_params(g1, g2) -> ProductParams:
    g1, g2 = _as_gaussian(g1), _as_gaussian(g2)
    _check_same_dim(g1, g2)
    S = g1.cov + g2.cov
    L = robust_cholesky(S)
    pi = g1.cov @ _chol_solve(L, g2.cov)
    pi = 0.5 * (pi + pi.T)
    nu = g2.cov @ _chol_solve(L, g1.mean) + g1.cov @ _chol_solve(L, g2.mean)
    scale = float(np.exp(mvn_logpdf(g1.mean, Gaussian(g2.mean, S))))
    return ProductParams(nu=nu, pi=pi, scale=scale)


def product_integral(g1, g2) -> float:
    """Integral over R^d of the product of the two densities."""
    g1, g2 = _as_gaussian(g1), _as_gaussian(g2)
    _check_same_dim(g1, g2)
    return float(np.exp(mvn_logpdf(g1.mean, Gaussian(g2.mean, g1.cov + g2.cov))))


def product_moment1(g1, g2) -> np.ndarray:
    p = product_params(g1, g2)
    return p.nu * p.scale


def product_moment2(g1, g2) -> np.ndarray:
    p = product_params(g1, g2)
    return (p.pi + np.outer(p.nu, p.nu)) * p.scale


# Index permutations acting on tensor axes. ``permute`` uses the direct
# convention out[j_1..j_k] = T[j_{p_1}..j_{p_k}] (1-based tuples).
T3 = ((1, 2, 3), (2, 3, 1), (3, 1, 2))
# Six placements of the middle matrix factor of a (vector, matrix, vector)
# 4-tensor. The printed list in the derivation has (2,3,1,4) and (1,4,2,3),
# which give these placements only under the inverse action; we store the
# direct-action equivalents.
T4 = ((1, 2, 3, 4), (2, 1, 3, 4), (1, 2, 4, 3), (2, 1, 4, 3), (3, 1, 2, 4), (1, 3, 4, 2))
T4_PRINTED = ((1, 2, 3, 4), (2, 1, 3, 4), (1, 2, 4, 3), (2, 1, 4, 3), (2, 3, 1, 4), (1, 4, 2, 3))
# Three pairings of a (matrix, matrix) 4-tensor.
S4 = ((1, 2, 3, 4), (1, 3, 2, 4), (1, 4, 2, 3))


def permute(tensor, perm) -> np.ndarray:
    """Apply an index permutation: out[j_1..j_k] = tensor[j_{perm_1}..j_{perm_k}]."""
    tensor = np.asarray(tensor)
    letters = "abcdefgh"[: tensor.ndim]
    src = "".join(letters[p - 1] for p in perm)
    return np.einsum(f"{src}->{letters}", tensor)


def permute_inverse(tensor, perm) -> np.ndarray:
    """Inverse action of ``permute``, i.e. numpy's ``transpose(tensor, perm - 1)``."""
    return np.transpose(np.asarray(tensor), [p - 1 for p in perm])


def sum_permutations(tensor, perms) -> np.ndarray:
    return sum(permute(tensor, p) for p in perms)


def symmetrize_tensor(tensor) -> np.ndarray:
    """Average over all index permutations."""
    tensor = np.asarray(tensor)
    perms = list(permutations(range(tensor.ndim)))
    return sum(np.transpose(tensor, p) for p in perms) / len(perms)


def product_moment3(g1, g2) -> np.ndarray:
    p = product_params(g1, g2)
    nu = p.nu
    cubic = np.einsum("i,j,k->ijk", nu, nu, nu)
    cross = sum_permutations(np.einsum("i,jk->ijk", nu, p.pi), T3)
    return (cubic + cross) * p.scale


def logpdf_grad_mu(x, g) -> np.ndarray:
    g = _as_gaussian(g)
    L = robust_cholesky(g.cov)
    return _chol_solve(L, np.asarray(x, dtype=float) - g.mean)


def logpdf_grad_sigma(x, g) -> np.ndarray:
    """Symmetric gradient of ln N(x; mu, Sigma) with respect to Sigma."""
    g = _as_gaussian(g)
    L = robust_cholesky(g.cov)
    inv = _chol_solve(L, np.eye(g.dim))
    s = _chol_solve(L, np.asarray(x, dtype=float) - g.mean)
    G = 0.5 * (-inv + np.outer(s, s))
    return 0.5 * (G + G.T)


def mahalanobis(x, g) -> float | np.ndarray:
    """Mahalanobis distance; vectorized over rows when ``x`` is (n, d)."""
    g = _as_gaussian(g)
    x = np.asarray(x, dtype=float)
    L = robust_cholesky(g.cov)
    z = linalg.solve_triangular(L, np.atleast_2d(x - g.mean).T, lower=True)
    dist = np.sqrt(np.sum(z * z, axis=0))
    return float(dist[0]) if x.ndim <= 1 else dist


def chi2_threshold(d: int, conf: float) -> float:
    """Square root of the chi-squared quantile with ``d`` degrees of freedom."""
    if not 0.0 < conf < 1.0:
        raise ValueError(f"conf must lie in (0, 1), got {conf}")
    if d < 1:
        raise ValueError("d must be a positive integer")
    return float(np.sqrt(stats.chi2.ppf(conf, d)))


def as_generator(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_mvn(g, n: int, rng_seed=None) -> np.ndarray:
    g = _as_gaussian(g)
    rng = as_generator(rng_seed)
    L = robust_cholesky(g.cov)
    z = rng.standard_normal((n, g.dim))
    return g.mean + z @ L.T
