"""Batch selection by variance reduction of the BQ integral.

``a_VR(B) = (V[Z|D] - V[Z|D u B]) / V[Z|D]`` where Z is the integral of the
objective against the search distribution. The update of the variance only
involves inputs, so the acquisition never looks at targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .gaussian import as_generator, chi2_threshold, robust_cholesky
from .gp import GPModel, kernel_matrix
from .quadrature import kernel_terms, prior_integral_variance

MODES = ("random_from_dist", "best_of_random", "local_mahalanobis", "global_box")


class ZeroVarianceError(ValueError):
    """The integral belief has no variance left to reduce."""


@dataclass(frozen=True)
class AcquisitionConfig:
    mode: str = "best_of_random"
    batch_size: int = 5
    candidates: int = 1000
    conf: float = 0.9973
    box: tuple | None = None  # (lower, upper) arrays
    starts: int = 64
    ascent_steps: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown acquisition mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.candidates < self.batch_size:
            raise ValueError("candidates must be at least batch_size")
        if not 0.0 < self.conf < 1.0:
            raise ValueError("conf must lie in (0, 1)")
        if (self.box is not None) != (self.mode == "global_box"):
            raise ValueError("box is required for, and only for, global_box mode")
        if self.box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.box)
            if lo.shape != hi.shape or np.any(lo >= hi):
                raise ValueError("box must be (lower, upper) with lower < upper")
            object.__setattr__(self, "box", (lo, hi))


def _current_state(model: GPModel, dist):
    """Quantities of the current posterior reused for every candidate."""
    R = prior_integral_variance(model.kernel, dist)
    if len(model.data) == 0:
        return R, None, np.zeros(0)
    t_X = kernel_terms(model.kernel, model.X, dist).t
    Ainv_t = model.solve(t_X)
    return R - t_X @ Ainv_t, Ainv_t, t_X


def current_variance(model: GPModel, dist) -> float:
    return float(_current_state(model, dist)[0])


def batch_reductions(model: GPModel, dist, batches) -> np.ndarray:
    """Joint variance reduction for each of m batches of shape (m, b, d)."""
    batches = np.asarray(batches, dtype=float)
    if batches.ndim == 2:
        batches = batches[None]
    m, b, d = batches.shape
    var, Ainv_t, _ = _current_state(model, dist)
    if not var > 0:
        raise ZeroVarianceError("current integral variance is zero")
    P = batches.reshape(m * b, d)
    t_P = kernel_terms(model.kernel, P, dist).t
    prior = model.kernel.prior_variance
    if len(model.data):
        K_PX = kernel_matrix(model.kernel, P, model.X)
        c = t_P - K_PX @ Ainv_t
        W = linalg.solve_triangular(model.chol, K_PX.T, lower=True).T.reshape(m, b, -1)
    else:
        c = t_P
        W = np.zeros((m, b, 0))
    Bm = batches
    sq = np.sum((Bm[:, :, None, :] - Bm[:, None, :, :]) ** 2 / model.kernel.bandwidth, axis=-1)
    S = prior * np.exp(-0.5 * sq) - W @ W.transpose(0, 2, 1)
    nugget = model.noise**2 if model.noise > 0 else 1e-12 * prior
    S = S + nugget * np.eye(b)
    c = c.reshape(m, b)
    sol = np.linalg.solve(S, c[..., None])[..., 0]
    return np.einsum("mb,mb->m", c, sol) / var


def variance_reduction(model: GPModel, dist, x_star) -> float:
    """a_VR of a single point (d,) or a joint batch (b, d)."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    return float(batch_reductions(model, dist, x_star[None])[0])


# ------------------------------------------------------------ sampling helpers


def _whitening(dist):
    return robust_cholesky(dist.cov)


def sample_region(dist, n: int, conf: float, rng) -> np.ndarray:
    """Draws from the search distribution truncated to its Mahalanobis region."""
    d = dist.mean.size
    r = chi2_threshold(d, conf)
    L = _whitening(dist)
    Z = np.empty((0, d))
    while Z.shape[0] < n:
        draw = rng.standard_normal((max(n - Z.shape[0], 1) * 2, d))
        Z = np.vstack([Z, draw[np.sum(draw * draw, axis=1) <= r * r]])
    return dist.mean + Z[:n] @ L.T


def _project_ball(Z, r):
    norms = np.linalg.norm(Z, axis=1)
    scale = np.where(norms > r, r / np.maximum(norms, 1e-300), 1.0)
    return Z * scale[:, None]


def _single_reductions(model: GPModel, dist, P) -> np.ndarray:
    return batch_reductions(model, dist, P[:, None, :])


def _ascend(fun, Z0, project, step0, steps):
    """Projected finite-difference ascent run in parallel from every row of Z0."""
    Z = project(Z0)
    f = fun(Z)
    n, d = Z.shape
    step = np.full(n, step0)
    h = 1e-6 * max(step0, 1.0)
    for _ in range(steps):
        G = np.empty((n, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            G[:, j] = (fun(Z + e) - fun(Z - e)) / (2 * h)
        norm = np.linalg.norm(G, axis=1)
        direction = G / np.maximum(norm, 1e-300)[:, None]
        trial = project(Z + step[:, None] * direction)
        f_trial = fun(trial)
        better = f_trial > f
        Z = np.where(better[:, None], trial, Z)
        f = np.where(better, f_trial, f)
        step = np.where(better, step * 1.2, step * 0.5)
        if np.all(step < 1e-8 * step0):
            break
    return Z, f


def _greedy_point(model, dist, cfg, rng, L, r):
    d = dist.mean.size
    if cfg.mode == "local_mahalanobis":
        Z0 = np.linalg.solve(L, (sample_region(dist, cfg.starts, cfg.conf, rng) - dist.mean).T).T

        def to_x(Z):
            return dist.mean + Z @ L.T

        def project(Z):
            return _project_ball(Z, r)

        step0 = 0.25 * r
    else:
        lo, hi = cfg.box
        Z0 = rng.uniform(lo, hi, (cfg.starts, d))

        def to_x(Z):
            return Z

        def project(Z):
            return np.clip(Z, lo, hi)

        step0 = 0.1 * float(np.min(hi - lo))
    Z, f = _ascend(lambda Z: _single_reductions(model, dist, to_x(Z)), Z0, project, step0, cfg.ascent_steps)
    if not np.any(np.isfinite(f)):
        raise FloatingPointError("ascent produced no finite values")
    f = np.where(np.isfinite(f), f, -np.inf)
    return to_x(project(Z[np.argmax(f)][None]))[0]


def _fantasy(model: GPModel, x) -> GPModel:
    """Model with x appended (target irrelevant to variances)."""
    return model.with_data(model.data.append(x[None], [model.mean_const]))


def select_batch(model: GPModel, dist, cfg: AcquisitionConfig, rng_seed=None) -> np.ndarray:
    """Choose ``cfg.batch_size`` query points according to ``cfg.mode``."""
    rng = as_generator(rng_seed)
    d = dist.mean.size
    b = cfg.batch_size
    if cfg.mode == "random_from_dist":
        L = _whitening(dist)
        return dist.mean + rng.standard_normal((b, d)) @ L.T
    if model is None:
        return sample_region(dist, b, cfg.conf, rng)
    try:
        if cfg.mode == "best_of_random":
            cands = sample_region(dist, cfg.candidates * b, cfg.conf, rng).reshape(cfg.candidates, b, d)
            scores = batch_reductions(model, dist, cands)
            return cands[int(np.argmax(scores))]
        L = _whitening(dist)
        r = chi2_threshold(d, cfg.conf)
        current = model
        chosen = []
        for _ in range(b):
            x = _greedy_point(current, dist, cfg, rng, L, r)
            chosen.append(x)
            current = _fantasy(current, x)
        return np.array(chosen)
    except ZeroVarianceError:
        L = _whitening(dist)
        return dist.mean + rng.standard_normal((b, d)) @ L.T
    except (FloatingPointError, linalg.LinAlgError, ValueError):
        if cfg.mode == "best_of_random":
            raise
        fallback = AcquisitionConfig("best_of_random", b, cfg.candidates, cfg.conf)
        return select_batch(model, dist, fallback, rng)


def batch_score(model: GPModel, dist, batch) -> float:
    """a_VR of a selected batch, or nan when it is undefined."""
    if model is None:
        return float("nan")
    try:
        return variance_reduction(model, dist, batch)
    except ZeroVarianceError:
        return float("nan")


__all__ = [
    "AcquisitionConfig",
    "MODES",
    "ZeroVarianceError",
    "batch_reductions",
    "batch_score",
    "current_variance",
    "sample_region",
    "select_batch",
    "variance_reduction",
]
