"""Bayesian quadrature over a Gaussian search distribution.

With ``f ~ GP(v, zeta N(x; x', Lambda))`` and ``nu_theta = N(mu, Sigma)`` the
integral ``g(theta) = E_nu[f]`` and its gradient in theta are jointly Gaussian
with closed-form moments. Kernel-side terms (t, T) come from integrating the
kernel against one distribution; prior terms (R blocks) from integrating it
against two. All gradient-side quantities live in (mu, vech Sigma) coordinates,
see :mod:`probnes.distribution`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .distribution import param_dim, vech_indices, vech_to_grad, vech_weights
from .gaussian import LOG_2PI, S4, T3, T4, as_generator, robust_cholesky, sum_permutations
from .gp import GPModel, KernelSpec


@dataclass(frozen=True)
class IntegralBelief:
    mean: float
    var: float


@dataclass(frozen=True)
class GradientBelief:
    """Gaussian belief over the gradient in (mu, vech Sigma) coordinates."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return int(round((np.sqrt(8 * self.mean.size + 9) - 3) / 2))

    def split(self, vector=None) -> tuple[np.ndarray, np.ndarray]:
        """(grad_mu, symmetric grad_sigma) from a (mu, vech) vector."""
        vector = self.mean if vector is None else vector
        d = self.dim
        return vector[:d], vech_to_grad(vector[d:], d)


@dataclass(frozen=True)
class KernelTerms:
    """Kernel integrated against one search distribution, per data point."""

    t: np.ndarray  # (N,)
    T_mu: np.ndarray  # (N, d)
    T_sigma: np.ndarray  # (N, d, d)


@dataclass(frozen=True)
class QuadratureTerms:
    """Closed-form quantities for a pair of search distributions.

    ``*_vec``/``T_*`` refer to dist1, ``*2`` variants to dist2. Prior blocks are
    indexed (dist1 coordinates, dist2 coordinates), Sigma coordinates as full
    symmetric index pairs.
    """

    mean_const: float
    t_vec: np.ndarray
    T_mu: np.ndarray
    T_sigma: np.ndarray
    t_vec2: np.ndarray
    T_mu2: np.ndarray
    T_sigma2: np.ndarray
    gamma_mat: np.ndarray
    gamma_vec: np.ndarray
    r12: float
    r12p_mu: np.ndarray
    r12p_sigma: np.ndarray
    r1p2p_mumu: np.ndarray
    r1p2p_musigma: np.ndarray
    r1p2p_sigmamu: np.ndarray
    r1p2p_sigmasigma: np.ndarray

    @property
    def grad_prior_mean(self) -> np.ndarray:
        """Gradient of the prior-mean integral; zero for a constant mean."""
        d = self.gamma_vec.size
        return np.zeros(param_dim(d))


def _log_normal_at(diff, L) -> np.ndarray:
    """log N(diff; 0, S) for rows of ``diff`` given the Cholesky factor L of S."""
    z = linalg.solve_triangular(L, np.atleast_2d(diff).T, lower=True)
    return -0.5 * (L.shape[0] * LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + np.sum(z * z, axis=0))


def kernel_terms(kernel: KernelSpec, X, dist) -> KernelTerms:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = kernel.dim
    if X.shape[0] == 0:
        return KernelTerms(np.zeros(0), np.zeros((0, d)), np.zeros((0, d, d)))
    C = kernel.Lambda + dist.cov
    L = robust_cholesky(C)
    D = X - dist.mean
    t = kernel.amplitude * np.exp(_log_normal_at(D, L))
    S = linalg.cho_solve((L, True), D.T).T  # rows: C^{-1}(x_i - mu)
    Cinv = linalg.cho_solve((L, True), np.eye(d))
    T_mu = S * t[:, None]
    T_sigma = 0.5 * (np.einsum("ni,nj->nij", S, S) - Cinv[None]) * t[:, None, None]
    return KernelTerms(t, T_mu, T_sigma)


def prior_blocks(kernel: KernelSpec, dist1, dist2) -> dict:
    """R_12 and its derivative blocks (all scaled by the kernel amplitude)."""
    d = kernel.dim
    Gam = kernel.Lambda + dist1.cov + dist2.cov
    L = robust_cholesky(Gam)
    Gi = linalg.cho_solve((L, True), np.eye(d))
    Gi = 0.5 * (Gi + Gi.T)
    delta = dist1.mean - dist2.mean
    gam = Gi @ delta
    Z = kernel.amplitude * float(np.exp(_log_normal_at(delta, L)[0]))
    gg = np.outer(gam, gam)
    ggg = np.einsum("i,j,k->ijk", gam, gam, gam)
    r_musigma = 0.5 * (sum_permutations(np.einsum("i,jk->ijk", gam, Gi), T3) - ggg) * Z
    r_sigmasigma = 0.25 * (
        np.einsum("i,j,k,l->ijkl", gam, gam, gam, gam)
        - sum_permutations(np.einsum("i,jk,l->ijkl", gam, Gi, gam), T4)
        + sum_permutations(np.einsum("ij,kl->ijkl", Gi, Gi), S4)
    ) * Z
    return {
        "gamma_mat": Gam,
        "gamma_vec": gam,
        "r12": Z,
        "r12p_mu": gam * Z,
        "r12p_sigma": -0.5 * (Gi - gg) * Z,
        "r1p2p_mumu": (Gi - gg) * Z,
        "r1p2p_musigma": r_musigma,
        # d/dSigma_1 d/dmu_2: the mu-Sigma block with delta -> -delta, indices (a, b, c)
        "r1p2p_sigmamu": -np.transpose(r_musigma, (1, 2, 0)),
        "r1p2p_sigmasigma": r_sigmasigma,
    }


def quadrature_terms(model: GPModel, dist1, dist2) -> QuadratureTerms:
    if dist1.dim != model.dim or dist2.dim != model.dim:
        raise ValueError("distribution and kernel dimensions differ")
    k1 = kernel_terms(model.kernel, model.X, dist1)
    k2 = kernel_terms(model.kernel, model.X, dist2)
    return QuadratureTerms(
        mean_const=model.mean_const,
        t_vec=k1.t,
        T_mu=k1.T_mu,
        T_sigma=k1.T_sigma,
        t_vec2=k2.t,
        T_mu2=k2.T_mu,
        T_sigma2=k2.T_sigma,
        **prior_blocks(model.kernel, dist1, dist2),
    )


def prior_integral_variance(kernel: KernelSpec, dist) -> float:
    """R = zeta |2 pi (2 Sigma + Lambda)|^{-1/2}."""
    _, logdet = np.linalg.slogdet(2.0 * np.pi * (2.0 * dist.cov + kernel.Lambda))
    return kernel.amplitude * float(np.exp(-0.5 * logdet))


def integral_belief(model: GPModel, dist) -> IntegralBelief:
    R = prior_integral_variance(model.kernel, dist)
    if len(model.data) == 0:
        return IntegralBelief(model.mean_const, R)
    t = kernel_terms(model.kernel, model.X, dist).t
    V = linalg.solve_triangular(model.chol, t, lower=True)
    return IntegralBelief(float(model.mean_const + t @ model.alpha), max(float(R - V @ V), 0.0))


def integral_covariance(model: GPModel, dist1, dist2) -> float:
    """Cov(g(theta_1), g(theta_2)) under the posterior."""
    r12 = prior_blocks(model.kernel, dist1, dist2)["r12"]
    if len(model.data) == 0:
        return r12
    t1 = kernel_terms(model.kernel, model.X, dist1).t
    t2 = kernel_terms(model.kernel, model.X, dist2).t
    return float(r12 - t1 @ model.solve(t2))


def _vech_columns(T_sigma) -> np.ndarray:
    """(..., d, d) symmetric-gradient tensors -> (..., m) vech gradients."""
    d = T_sigma.shape[-1]
    rows, cols = vech_indices(d)
    return T_sigma[..., rows, cols] * vech_weights(d)


def _terms_matrix(kt: KernelTerms) -> np.ndarray:
    return np.hstack([kt.T_mu, _vech_columns(kt.T_sigma)])


def expected_gradient_parts(model: GPModel, dist) -> tuple[np.ndarray, np.ndarray]:
    """(grad_mu, symmetric matrix grad_sigma) of the posterior-mean integral."""
    d = model.dim
    if len(model.data) == 0:
        return np.zeros(d), np.zeros((d, d))
    kt = kernel_terms(model.kernel, model.X, dist)
    g_mu = kt.T_mu.T @ model.alpha
    G = np.einsum("nij,n->ij", kt.T_sigma, model.alpha)
    return g_mu, 0.5 * (G + G.T)


def expected_gradient(model: GPModel, dist) -> np.ndarray:
    """E[grad g(theta)] over (mu, vech Sigma)."""
    g_mu, G = expected_gradient_parts(model, dist)
    rows, cols = vech_indices(model.dim)
    return np.concatenate([g_mu, G[rows, cols] * vech_weights(model.dim)])


def _prior_gradient_cov(blocks: dict, d: int) -> np.ndarray:
    rows, cols = vech_indices(d)
    w = vech_weights(d)
    n = param_dim(d)
    out = np.empty((n, n))
    out[:d, :d] = blocks["r1p2p_mumu"]
    out[:d, d:] = blocks["r1p2p_musigma"][:, rows, cols] * w
    out[d:, :d] = blocks["r1p2p_sigmamu"][rows, cols, :] * w[:, None]
    ss = blocks["r1p2p_sigmasigma"][rows, cols][:, rows, cols]
    out[d:, d:] = ss * np.outer(w, w)
    return out


def gradient_cross_covariance(model: GPModel, dist1, dist2) -> np.ndarray:
    """Cov(grad g(theta_1), grad g(theta_2)) without symmetrization or repair."""
    d = model.dim
    out = _prior_gradient_cov(prior_blocks(model.kernel, dist1, dist2), d)
    if len(model.data):
        T1 = _terms_matrix(kernel_terms(model.kernel, model.X, dist1))
        T2 = _terms_matrix(kernel_terms(model.kernel, model.X, dist2))
        out = out - T1.T @ model.solve(T2)
    return out


def repair_psd(cov, rel_floor: float = 1e-12) -> np.ndarray:
    """Symmetrize and floor eigenvalues at rel_floor * max(largest eigenvalue, 1)."""
    cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    w, V = linalg.eigh(cov)
    floor = rel_floor * max(w[-1], 1.0)
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def gradient_covariance(model: GPModel, dist, repair: bool = True) -> np.ndarray:
    cov = gradient_cross_covariance(model, dist, dist)
    cov = 0.5 * (cov + cov.T)
    return repair_psd(cov) if repair else cov


def gradient_belief(model: GPModel, dist) -> GradientBelief:
    return GradientBelief(expected_gradient(model, dist), gradient_covariance(model, dist))


def sample_gradient(belief: GradientBelief, rng_seed=None) -> np.ndarray:
    """One draw from N(belief.mean, belief.cov).

    Sampling uses the PSD projection (negative eigenvalues clipped to zero), so
    a zero covariance returns the mean exactly.
    """
    mean = np.asarray(belief.mean, dtype=float)
    if not np.all(np.isfinite(mean)):
        raise ValueError("gradient belief mean is not finite")
    rng = as_generator(rng_seed)
    cov = 0.5 * (belief.cov + belief.cov.T)
    w, V = linalg.eigh(cov)
    z = rng.standard_normal(mean.size)
    return mean + V @ (np.sqrt(np.clip(w, 0.0, None)) * z)


def cmaes_weights(model: GPModel, dist) -> np.ndarray:
    """w_i = ([K + noise^2 I]^{-1}(y - v))_i * zeta N(x_i; mu, Lambda + Sigma)."""
    if len(model.data) == 0:
        return np.zeros(0)
    t = kernel_terms(model.kernel, model.X, dist).t
    return model.alpha * t
