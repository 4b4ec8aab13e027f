"""Numeric oracle suites for the closed-form machinery.

Each check compares a closed form against an independent numeric route
(tensor Gauss-Hermite quadrature of the defining integrand, central finite
differences, numeric Hessians) and returns the worst observed error. The CLI
``validate`` subcommand and the acceptance tests both call these.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .distribution import (
    SearchDistribution,
    fisher_inverse_apply,
    fisher_matrix,
    sym_logm,
    unvech,
    vech,
)
from .gp import Dataset, GPModel, KernelSpec
from .quadrature import (
    expected_gradient,
    expected_gradient_parts,
    integral_belief,
    integral_covariance,
    prior_integral_variance,
    quadrature_terms,
)


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max error {self.max_error:.3e} (tol {self.tolerance:.1e})"


# ------------------------------------------------------------ instances


def random_spd(rng, d, lo=0.4, hi=1.5) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * rng.uniform(lo, hi, d)) @ Q.T


def random_distribution(rng, d, kind="full", lo=0.4, hi=1.5) -> SearchDistribution:
    mu = rng.normal(0.0, 0.7, d)
    if kind == "diagonal":
        return SearchDistribution.from_std(mu, np.sqrt(rng.uniform(lo, hi, d)))
    S = random_spd(rng, d, lo, hi)
    if kind == "factor":
        return SearchDistribution.from_factor(mu, np.linalg.cholesky(S))
    return SearchDistribution(mu, S)


def random_kernel(rng, d, lo=0.6, hi=2.0) -> KernelSpec:
    return KernelSpec(rng.uniform(0.5, 2.0), rng.uniform(lo, hi, d))


def random_model(rng, d, n=8, dist=None) -> GPModel:
    kernel = random_kernel(rng, d)
    center = np.zeros(d) if dist is None else dist.mean
    X = center + rng.normal(0.0, 1.0, (n, d))
    y = np.sin(X.sum(axis=1)) + 0.3 * rng.standard_normal(n)
    return GPModel(kernel, float(rng.normal(0, 0.3)), float(rng.uniform(0.05, 0.3)), Dataset(X, y))


# ------------------------------------------------------------ GH oracle


def gh_rule(dist, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Hermite nodes/weights for expectations under ``dist``."""
    z, w = hermegauss(n)
    w = w / np.sqrt(2.0 * np.pi)
    d = dist.mean.size
    Z = np.array(list(product(z, repeat=d)))
    W = np.prod(np.array(list(product(w, repeat=d))), axis=1)
    L = np.linalg.cholesky(dist.cov)
    return dist.mean + Z @ L.T, W


def _scores(points, dist):
    """Scores of ln N(x; mu, Sigma): (n, d) mu-part and (n, d, d) Sigma-part."""
    P = np.linalg.inv(dist.cov)
    s = (points - dist.mean) @ P
    return s, 0.5 * (np.einsum("ni,nj->nij", s, s) - P[None])


def _kernel_values(kernel, A, B):
    lam = kernel.bandwidth
    diff = A[:, None, :] - B[None, :, :]
    q = np.sum(diff**2 / lam, axis=-1)
    norm = kernel.amplitude / np.sqrt(np.prod(2.0 * np.pi * lam))
    return norm * np.exp(-0.5 * q)


def oracle_blocks(kernel, X, dist1, dist2, n: int = 40) -> dict:
    """Numeric double integrals of every defining integrand."""
    d = dist1.mean.size
    P1, W1 = gh_rule(dist1, n)
    P2, W2 = gh_rule(dist2, n)
    M = (W1[:, None] * W2[None, :]) * _kernel_values(kernel, P1, P2)
    s1, S1 = _scores(P1, dist1)
    s2, S2 = _scores(P2, dist2)
    col = M.sum(axis=0)  # integrated over x, as a function of x'
    out = {
        "r12": M.sum(),
        "r12p_mu": col @ s2,
        "r12p_sigma": np.einsum("n,nij->ij", col, S2),
        "r1p2p_mumu": s1.T @ M @ s2,
        "r1p2p_musigma": (s1.T @ M @ S2.reshape(-1, d * d)).reshape(d, d, d),
        "r1p2p_sigmamu": (S1.reshape(-1, d * d).T @ M @ s2).reshape(d, d, d),
        "r1p2p_sigmasigma": (S1.reshape(-1, d * d).T @ M @ S2.reshape(-1, d * d)).reshape(d, d, d, d),
    }
    # prior mean integral of a constant and its gradient
    out["m0_unit"] = W1.sum()
    out["M_unit"] = np.concatenate([W1 @ s1, vech(np.einsum("n,nij->ij", W1, S1))])
    # kernel embeddings against dist1
    Kx = _kernel_values(kernel, P1, np.atleast_2d(X)) * W1[:, None]  # (nodes, N)
    out["t_vec"] = Kx.sum(axis=0)
    out["T_mu"] = Kx.T @ s1
    out["T_sigma"] = np.einsum("nk,nij->kij", Kx, S1)
    # single-distribution R of the integral variance
    P1b, W1b = gh_rule(dist1, n)
    out["R_single"] = np.einsum("n,m,nm->", W1, W1b, _kernel_values(kernel, P1, P1b))
    return out


BLOCK_KEYS = (
    "r12",
    "r12p_mu",
    "r12p_sigma",
    "r1p2p_mumu",
    "r1p2p_musigma",
    "r1p2p_sigmamu",
    "r1p2p_sigmasigma",
    "t_vec",
    "T_mu",
    "T_sigma",
)


def quadrature_errors(model: GPModel, dist1, dist2, n: int = 40) -> dict:
    """Absolute error of each closed-form block against the numeric oracle."""
    terms = quadrature_terms(model, dist1, dist2)
    ref = oracle_blocks(model.kernel, model.X, dist1, dist2, n)
    errs = {key: float(np.max(np.abs(np.asarray(getattr(terms, key)) - ref[key]))) for key in BLOCK_KEYS}
    errs["m0"] = abs(terms.mean_const - terms.mean_const * ref["m0_unit"])
    errs["M"] = float(np.max(np.abs(terms.grad_prior_mean[: ref["M_unit"].size] - terms.mean_const * ref["M_unit"])))
    errs["R_single"] = abs(prior_integral_variance(model.kernel, dist1) - ref["R_single"])
    return errs


def check_quadrature(n_instances=50, dims=(1, 2), seed=0, tol=1e-5, n_nodes=None) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, per_block = 0.0, {}
    for d in dims:
        nodes = n_nodes or (60 if d == 1 else 40)
        for _ in range(n_instances):
            d1 = random_distribution(rng, d)
            d2 = random_distribution(rng, d)
            model = random_model(rng, d, n=6, dist=d1)
            for key, err in quadrature_errors(model, d1, d2, nodes).items():
                per_block[key] = max(per_block.get(key, 0.0), err)
                worst = max(worst, err)
    return CheckResult("quadrature closed forms vs Gauss-Hermite", worst, tol, per_block)


# ------------------------------------------------------------ gradient law


def _theta(dist) -> np.ndarray:
    return np.concatenate([dist.mean, vech(dist.cov)])


def _dist_from_theta(theta, d) -> SearchDistribution:
    return SearchDistribution(theta[:d], unvech(theta[d:], d))


def fd_gradient(fun, theta, h=1e-5) -> np.ndarray:
    g = np.empty(theta.size)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return g


def check_gradient_law(n_instances=100, max_dim=3, seed=1, rel=1e-4, abs_=1e-7) -> CheckResult:
    """expected_gradient vs central differences of the integral mean."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        d = 1 + i % max_dim
        dist = random_distribution(rng, d)
        model = random_model(rng, d, n=int(rng.integers(3, 16)), dist=dist)
        g = expected_gradient(model, dist)
        fd = fd_gradient(lambda th: integral_belief(model, _dist_from_theta(th, d)).mean, _theta(dist))
        # violation ratio: <= 1 means within max(rel * |fd|, abs)
        tol = np.maximum(rel * np.abs(fd), abs_)
        worst = max(worst, float(np.max(np.abs(g - fd) / tol)))
    return CheckResult("expected gradient vs finite differences (ratio to tolerance)", worst, 1.0)


def mixed_fd_covariance(model, dist1, dist2, h=1e-4) -> np.ndarray:
    """d^2 Cov(g(theta_1), g(theta_2)) / d theta_1 d theta_2 by central differences."""
    d = dist1.dim
    t1, t2 = _theta(dist1), _theta(dist2)
    n = t1.size
    out = np.empty((n, n))

    def c(a, b):
        return integral_covariance(model, _dist_from_theta(a, d), _dist_from_theta(b, d))

    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        for j in range(n):
            ej = np.zeros(n)
            ej[j] = h
            out[i, j] = (c(t1 + ei, t2 + ej) - c(t1 + ei, t2 - ej) - c(t1 - ei, t2 + ej) + c(t1 - ei, t2 - ej)) / (4 * h * h)
    return out


def check_covariance_fd(n_instances=20, dims=(1,), seed=4, rel=1e-3) -> CheckResult:
    """Gradient cross-covariance vs mixed differences, relative to the largest entry."""
    from .quadrature import gradient_cross_covariance

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        d = dims[i % len(dims)]
        d1 = random_distribution(rng, d)
        d2 = random_distribution(rng, d) if i % 2 else d1
        model = random_model(rng, d, n=int(rng.integers(0, 8)), dist=d1)
        exact = gradient_cross_covariance(model, d1, d2)
        fd = mixed_fd_covariance(model, d1, d2)
        worst = max(worst, float(np.max(np.abs(exact - fd)) / max(np.max(np.abs(fd)), 1e-12)))
    return CheckResult("gradient covariance vs mixed finite differences (relative)", worst, rel)


# ------------------------------------------------------------ Fisher law


def kl_gauss(p: SearchDistribution, q: SearchDistribution) -> float:
    d = p.dim
    Qi = np.linalg.inv(q.cov)
    diff = q.mean - p.mean
    _, ldq = np.linalg.slogdet(q.cov)
    _, ldp = np.linalg.slogdet(p.cov)
    return 0.5 * (np.trace(Qi @ p.cov) + diff @ Qi @ diff - d + ldq - ldp)


def kl_hessian(dist, h=1e-4) -> np.ndarray:
    d = dist.dim
    theta = _theta(dist)
    n = theta.size

    def kl(delta):
        return kl_gauss(_dist_from_theta(theta + delta, d), dist)

    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei, ej = np.zeros(n), np.zeros(n)
            ei[i], ej[j] = h, h
            H[i, j] = H[j, i] = (kl(ei + ej) - kl(ei - ej) - kl(ej - ei) + kl(-ei - ej)) / (4 * h * h)
    return H


def check_fisher(n_instances=50, max_dim=3, seed=2, tol=1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        d = 1 + i % max_dim
        dist = random_distribution(rng, d, lo=0.5, hi=2.0)
        worst = max(worst, float(np.max(np.abs(fisher_matrix(dist) - kl_hessian(dist)))))
    return CheckResult("Fisher matrix vs numeric KL Hessian", worst, tol)


# ------------------------------------------------------------ update rules


def natural_step(dist, model) -> tuple[np.ndarray, np.ndarray]:
    g_mu, G = expected_gradient_parts(model, dist)
    return fisher_inverse_apply(dist, -g_mu, -G)


def check_update_consistency(n_instances=20, seed=3, tol=1e-8) -> list[CheckResult]:
    from .quadrature import cmaes_weights
    from .updates import classical_rank_mu, prob_cmaes_update, prob_snes_update, prob_xnes_update

    rng = np.random.default_rng(seed)
    err_cma, err_xnes, err_snes, err_limit = 0.0, 0.0, 0.0, 0.0
    order_ratio = 0.0
    for i in range(n_instances):
        d = 1 + i % 3
        eta = 0.05
        dist = random_distribution(rng, d)
        model = random_model(rng, d, n=int(rng.integers(3, 10)), dist=dist)
        w = cmaes_weights(model, dist)
        step_mu, step_sigma = natural_step(dist, model)
        scale = max(1.0, np.abs(step_mu).max(), np.abs(step_sigma).max())

        new = prob_cmaes_update(dist, w, model.X, model.kernel, eta, repair=False)
        err_cma = max(err_cma, np.abs((new.mu - dist.mu) / eta - step_mu).max() / scale)
        err_cma = max(err_cma, np.abs((new.sigma - dist.sigma) / eta - step_sigma).max() / scale)

        fdist = dist.as_kind("factor")
        newx = prob_xnes_update(fdist, w, model.X, model.kernel, eta)
        A = fdist.factor
        Ainv = np.linalg.inv(A)
        M_applied = sym_logm(Ainv @ newx.factor @ (Ainv @ newx.factor).T) / eta
        M_expected = Ainv @ step_sigma @ Ainv.T
        err_xnes = max(err_xnes, np.abs((newx.mu - dist.mu) / eta - step_mu).max() / scale)
        err_xnes = max(err_xnes, np.abs(M_applied - M_expected).max() / scale)

        ddist = random_distribution(rng, d, kind="diagonal")
        dmodel = random_model(rng, d, n=int(rng.integers(3, 10)), dist=ddist)
        dw = cmaes_weights(dmodel, ddist)
        dstep_mu, dstep_sigma = natural_step(ddist, dmodel)
        news = prob_snes_update(ddist, dw, dmodel.X, dmodel.kernel, eta)
        dscale = max(1.0, np.abs(dstep_mu).max(), np.abs(dstep_sigma).max())
        err_snes = max(err_snes, np.abs((news.mu - ddist.mu) / eta - dstep_mu).max() / dscale)
        log_step = 2.0 * np.log(news.std / ddist.std) / eta
        err_snes = max(err_snes, np.abs(log_step - np.diag(dstep_sigma) / np.diag(ddist.sigma)).max() / dscale)

        # second-order agreement of xNES and CMA-ES covariance updates
        ratios = []
        for h in (1e-3, 1e-4, 1e-5):
            a = prob_cmaes_update(dist, w, model.X, model.kernel, h, repair=False).sigma
            b = prob_xnes_update(fdist, w, model.X, model.kernel, h).sigma
            ratios.append(np.abs(a - b).max() / h**2)
        order_ratio = max(order_ratio, max(ratios) / max(ratios[0], 1e-300))

        # Lambda -> 0: classical rank-mu with the BQ weights
        tiny = KernelSpec.from_outputscale(model.kernel.prior_variance, np.full(d, 1e-5))
        tiny_model = GPModel(tiny, model.mean_const, model.noise, model.data)
        tw = cmaes_weights(tiny_model, dist)
        a = prob_cmaes_update(dist, tw, model.X, tiny, eta, repair=False)
        b = classical_rank_mu(dist, -tw, model.X, eta)
        tscale = max(1.0, np.abs(b.sigma - dist.sigma).max() / eta)
        err_limit = max(
            err_limit,
            np.abs(a.mu - b.mu).max() / eta / tscale,
            np.abs(a.sigma - b.sigma).max() / eta / tscale,
        )
    return [
        CheckResult("Prob-CMA-ES step = -eta F^-1 grad", float(err_cma), tol),
        CheckResult("Prob-xNES step = -eta F^-1 grad (exponential coordinates)", float(err_xnes), tol),
        CheckResult("Prob-SNES step = -eta F^-1 grad (log-std coordinates)", float(err_snes), tol),
        CheckResult("xNES vs CMA-ES covariance discrepancy / eta^2 (growth over eta grid)", float(order_ratio), 2.0),
        CheckResult("Prob-CMA-ES Lambda->0 limit vs classical rank-mu", float(err_limit), 1e-6),
    ]


def run_all(fast: bool = False) -> list[CheckResult]:
    scale = 5 if fast else 1
    results = [
        check_quadrature(n_instances=50 // scale),
        check_gradient_law(n_instances=100 // scale),
        check_fisher(n_instances=50 // scale),
        check_covariance_fd(n_instances=20 // scale, dims=(1, 2)),
    ]
    results.extend(check_update_consistency(n_instances=20 // scale))
    return results


__all__ = [
    "CheckResult",
    "check_covariance_fd",
    "check_fisher",
    "check_gradient_law",
    "check_quadrature",
    "check_update_consistency",
    "fd_gradient",
    "kl_hessian",
    "oracle_blocks",
    "run_all",
]
