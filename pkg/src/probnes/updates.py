"""Closed-form probabilistic NES updates and a generic natural-gradient step.

All rules minimize: the BQ weights describe the gradient of E[f], so the
updates move against it. Every rule equals ``theta - eta * F^{-1} grad`` in
its own parametrization (additive Sigma for CMA-ES, exponential coordinates
of the factor A for xNES, log standard deviations for SNES).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .distribution import SearchDistribution, fisher_inverse_apply, is_pd, sym_expm

MAX_HALVINGS = 6


@dataclass(frozen=True)
class UpdateResult:
    dist: SearchDistribution
    eta_used: float
    stalled: bool = False


def _bracket(dist, weights, X, bandwidth):
    """(C^{-1} sum w_i d_i, C^{-1}[sum w_i (d_i d_i^T - C)]C^{-1}) with C = Sigma + Lambda."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(weights, dtype=float)
    D = X - dist.mu
    C = dist.sigma + np.diag(bandwidth)
    cf = linalg.cho_factor(C, lower=True)
    mu_part = linalg.cho_solve(cf, D.T @ w)
    B = (D * w[:, None]).T @ D - w.sum() * C
    inner = linalg.cho_solve(cf, linalg.cho_solve(cf, B).T)
    return mu_part, 0.5 * (inner + inner.T)


def _natural_parts(dist, weights, X, kernel):
    """Descent direction (delta mu, delta Sigma) per unit step, from BQ weights."""
    g_mu, G = _bracket(dist, -np.asarray(weights, dtype=float), X, kernel.bandwidth)
    step_mu = dist.sigma @ g_mu
    step_sigma = dist.sigma @ G @ dist.sigma
    return step_mu, 0.5 * (step_sigma + step_sigma.T)


def prob_cmaes_step(dist, weights, X, kernel, eta) -> UpdateResult:
    """Additive Prob-CMA-ES step with eta halving when Sigma leaves the PD cone."""
    step_mu, step_sigma = _natural_parts(dist, weights, X, kernel)
    h = float(eta)
    for _ in range(MAX_HALVINGS + 1):
        sigma = dist.sigma + h * step_sigma
        sigma = 0.5 * (sigma + sigma.T)
        if np.all(np.isfinite(sigma)) and is_pd(sigma):
            return UpdateResult(SearchDistribution(dist.mu + h * step_mu, sigma, kind=dist.kind), h)
        h *= 0.5
    return UpdateResult(dist, 0.0, stalled=True)


def prob_cmaes_update(dist, weights, X, kernel, eta, repair: bool = True) -> SearchDistribution:
    if repair:
        return prob_cmaes_step(dist, weights, X, kernel, eta).dist
    step_mu, step_sigma = _natural_parts(dist, weights, X, kernel)
    sigma = dist.sigma + eta * step_sigma
    return SearchDistribution(dist.mu + eta * step_mu, 0.5 * (sigma + sigma.T), kind=dist.kind)


def prob_xnes_update(dist, weights, X, kernel, eta) -> SearchDistribution:
    """A' = A expm(eta/2 M), M = A^T C^{-1}[...]C^{-1} A."""
    fdist = dist.as_kind("factor")
    A = fdist.factor
    g_mu, G = _bracket(fdist, -np.asarray(weights, dtype=float), X, kernel.bandwidth)
    M = A.T @ G @ A
    A_new = A @ sym_expm(0.5 * eta * M)
    return SearchDistribution.from_factor(fdist.mu + eta * fdist.sigma @ g_mu, A_new)


def prob_snes_update(dist, weights, X, kernel, eta) -> SearchDistribution:
    """Elementwise update of mean and standard deviations (diagonal Sigma and Lambda)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = -np.asarray(weights, dtype=float)
    var = np.diag(dist.sigma)
    lam = kernel.bandwidth
    ratio = var / (var + lam)
    D = X - dist.mu
    mu = dist.mu + eta * ratio * (w @ D)
    z2 = D**2 / (var + lam)
    std = np.sqrt(var) * np.exp(0.5 * eta * ratio * (w @ (z2 - 1.0)))
    return SearchDistribution.from_std(mu, std)


def classical_rank_mu(dist, weights, X, eta) -> SearchDistribution:
    """mu + eta sum w_i d_i, Sigma + eta sum w_i (d_i d_i^T - Sigma); no sign flip, no repair."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(weights, dtype=float)
    D = X - dist.mu
    sigma = dist.sigma + eta * ((D * w[:, None]).T @ D - w.sum() * dist.sigma)
    return SearchDistribution(dist.mu + eta * (w @ D), 0.5 * (sigma + sigma.T), kind=dist.kind)


def natural_step(dist, grad_mu, grad_sigma, eta, algorithm: str = "prob_cmaes") -> UpdateResult:
    """theta - eta F^{-1} grad for an arbitrary (e.g. sampled) gradient.

    ``grad_sigma`` is the symmetric matrix gradient. For xNES the Sigma step is
    applied in exponential coordinates of A, for SNES in log standard deviations.
    """
    step_mu, step_sigma = fisher_inverse_apply(dist, -np.asarray(grad_mu), -np.asarray(grad_sigma))
    if algorithm == "prob_xnes":
        fdist = dist.as_kind("factor")
        A = fdist.factor
        Ainv = linalg.inv(A)
        M = Ainv @ step_sigma @ Ainv.T
        return UpdateResult(SearchDistribution.from_factor(fdist.mu + eta * step_mu, A @ sym_expm(0.5 * eta * M)), eta)
    if algorithm == "prob_snes":
        var = np.diag(dist.sigma)
        std = np.sqrt(var) * np.exp(0.5 * eta * np.diag(step_sigma) / var)
        return UpdateResult(SearchDistribution.from_std(dist.mu + eta * step_mu, std), eta)
    if algorithm != "prob_cmaes":
        raise ValueError(f"unknown algorithm {algorithm!r}")
    h = float(eta)
    for _ in range(MAX_HALVINGS + 1):
        sigma = dist.sigma + h * step_sigma
        if np.all(np.isfinite(sigma)) and is_pd(sigma):
            return UpdateResult(SearchDistribution(dist.mu + h * step_mu, sigma, kind=dist.kind), h)
        h *= 0.5
    return UpdateResult(dist, 0.0, stalled=True)


def apply_update(algorithm: str, dist, weights, X, kernel, eta) -> UpdateResult:
    """Closed-form update from BQ weights (expected-gradient mode)."""
    if algorithm == "prob_cmaes":
        return prob_cmaes_step(dist, weights, X, kernel, eta)
    if algorithm == "prob_xnes":
        return UpdateResult(prob_xnes_update(dist, weights, X, kernel, eta), eta)
    if algorithm == "prob_snes":
        return UpdateResult(prob_snes_update(dist, weights, X, kernel, eta), eta)
    raise ValueError(f"unknown algorithm {algorithm!r}")
