"""Constant-mean GP regression with the scaled-Gaussian kernel.

The kernel is ``k(x, x') = zeta * N(x; x', Lambda)`` with diagonal bandwidth
``Lambda`` (squared lengthscales). Writing the kernel as a normalized Gaussian
density is what makes every integral against a Gaussian search distribution
closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .gaussian import LOG_2PI, as_generator, chi2_threshold, mahalanobis, robust_cholesky

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    amplitude: float
    bandwidth: np.ndarray  # diagonal of Lambda

    def __post_init__(self):
        bw = np.atleast_1d(np.asarray(self.bandwidth, dtype=float))
        if bw.ndim == 2:
            bw = np.diag(bw).copy()
        if not self.amplitude > 0:
            raise ValueError("kernel amplitude must be positive")
        if np.any(bw <= 0):
            raise ValueError("bandwidth entries must be positive")
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "bandwidth", bw)

    @classmethod
    def from_outputscale(cls, outputscale, lengthscales) -> "KernelSpec":
        """Kernel whose prior variance k(x, x) equals ``outputscale``."""
        ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        zeta = outputscale * np.exp(0.5 * ls.size * LOG_2PI + np.sum(np.log(ls)))
        return cls(zeta, ls**2)

    @property
    def dim(self) -> int:
        return self.bandwidth.size

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(self.bandwidth)

    @property
    def lengthscales(self) -> np.ndarray:
        return np.sqrt(self.bandwidth)

    @property
    def prior_variance(self) -> float:
        return self.amplitude * np.exp(-0.5 * self.dim * LOG_2PI - 0.5 * np.sum(np.log(self.bandwidth)))

    def __call__(self, X1, X2) -> np.ndarray:
        return kernel_matrix(self, X1, X2)


def kernel_matrix(k: KernelSpec, X1, X2) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != k.dim or X2.shape[1] != k.dim:
        raise ValueError("input dimension does not match the kernel bandwidth")
    inv_ls = 1.0 / k.lengthscales
    A, B = X1 * inv_ls, X2 * inv_ls
    sq = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return k.prior_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


def kernel_eval(k: KernelSpec, x, x_prime) -> float:
    return float(kernel_matrix(k, np.atleast_1d(x)[None, :], np.atleast_1d(x_prime)[None, :])[0, 0])


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if y.size != 1 else X.reshape(1, -1)
        if X.shape[0] != y.size:
            raise ValueError(f"{X.shape[0]} inputs but {y.size} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.zeros((0, d)), np.zeros(0))

    def __len__(self) -> int:
        return self.targets.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def append(self, X, y) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return Dataset(np.vstack([self.inputs, X]), np.concatenate([self.targets, np.atleast_1d(y)]))

    def subset(self, mask) -> "Dataset":
        return Dataset(self.inputs[mask], self.targets[mask])


@dataclass(frozen=True)
class GPModel:
    """A conditioned GP. The Cholesky factor of K + noise^2 I is computed once."""

    kernel: KernelSpec
    mean_const: float
    noise: float
    data: Dataset
    chol: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        n = len(self.data)
        if n:
            K = kernel_matrix(self.kernel, self.data.inputs, self.data.inputs)
            K[np.diag_indices(n)] += self.noise**2
            L = robust_cholesky(K)
            alpha = linalg.cho_solve((L, True), self.data.targets - self.mean_const)
        else:
            L, alpha = np.zeros((0, 0)), np.zeros(0)
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "alpha", alpha)

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def X(self) -> np.ndarray:
        return self.data.inputs

    @property
    def y(self) -> np.ndarray:
        return self.data.targets

    def solve(self, b) -> np.ndarray:
        """[K + noise^2 I]^{-1} b."""
        if len(self.data) == 0:
            return np.zeros_like(b)
        return linalg.cho_solve((self.chol, True), b)

    def with_data(self, data: Dataset) -> "GPModel":
        return GPModel(self.kernel, self.mean_const, self.noise, data)

    def hyperparameters(self) -> dict:
        return {
            "amplitude": self.kernel.amplitude,
            "lengthscales": self.kernel.lengthscales.tolist(),
            "outputscale": self.kernel.prior_variance,
            "mean_const": self.mean_const,
            "noise": self.noise,
            "n_data": len(self.data),
        }


def posterior_mean(m: GPModel, Xs) -> np.ndarray:
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if len(m.data) == 0:
        return np.full(Xs.shape[0], m.mean_const)
    return m.mean_const + kernel_matrix(m.kernel, Xs, m.X) @ m.alpha


def posterior_cov(m: GPModel, X1, X2) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    prior = kernel_matrix(m.kernel, X1, X2)
    if len(m.data) == 0:
        return prior
    K1 = kernel_matrix(m.kernel, X1, m.X)
    K2 = kernel_matrix(m.kernel, X2, m.X)
    return prior - K1 @ m.solve(K2.T)


def posterior_var(m: GPModel, Xs) -> np.ndarray:
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    prior = np.full(Xs.shape[0], m.kernel.prior_variance)
    if len(m.data) == 0:
        return prior
    V = linalg.solve_triangular(m.chol, kernel_matrix(m.kernel, m.X, Xs), lower=True)
    return prior - np.sum(V * V, axis=0)


def log_marginal_likelihood(m: GPModel) -> float:
    n = len(m.data)
    if n == 0:
        return 0.0
    r = m.y - m.mean_const
    return float(-0.5 * r @ m.alpha - np.sum(np.log(np.diag(m.chol))) - 0.5 * n * LOG_2PI)


def active_mask(data: Dataset, dist, conf: float) -> np.ndarray:
    if len(data) == 0:
        return np.zeros(0, dtype=bool)
    return mahalanobis(data.inputs, dist) <= chi2_threshold(data.dim, conf)


def active_subset(data: Dataset, dist, conf: float) -> Dataset:
    """Rows inside the Mahalanobis region of ``dist``, order preserved."""
    return data.subset(active_mask(data, dist, conf))


# ---------------------------------------------------------------- fitting


@dataclass(frozen=True)
class FitBounds:
    """Bounds, relative to input std per dimension and target std."""

    lengthscale: tuple[float, float] = (1e-3, 1e3)
    outputscale: tuple[float, float] = (1e-6, 1e2)
    noise: tuple[float, float] = (NOISE_FLOOR, 1.0)


def _neg_lml_and_grad(p, X, y, sqdist):
    """Negative LML (with the constant mean profiled out) in standardized units.

    p = [log outputscale, log lengthscales..., log noise].
    """
    d = X.shape[1]
    s2 = np.exp(p[0])
    ls = np.exp(p[1 : 1 + d])
    sn2 = np.exp(2.0 * p[-1])
    n = y.size
    scaled = sqdist / ls[:, None, None] ** 2
    Kf = s2 * np.exp(-0.5 * scaled.sum(axis=0))
    K = Kf + sn2 * np.eye(n)
    try:
        L = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError:
        return 1e25, np.zeros_like(p)
    ones = np.ones(n)
    Ki1 = linalg.cho_solve((L, True), ones)
    Kiy = linalg.cho_solve((L, True), y)
    v = (ones @ Kiy) / (ones @ Ki1)
    alpha = Kiy - v * Ki1
    r = y - v
    nlml = 0.5 * r @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * LOG_2PI
    W = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(n))
    grad = np.empty_like(p)
    grad[0] = -0.5 * np.sum(W * Kf)
    for j in range(d):
        grad[1 + j] = -0.5 * np.sum(W * Kf * scaled[j])
    grad[-1] = -0.5 * np.trace(W) * 2.0 * sn2
    return nlml, grad


def _profiled_mean(p, X, y, sqdist) -> float:
    d = X.shape[1]
    s2, ls, sn2 = np.exp(p[0]), np.exp(p[1 : 1 + d]), np.exp(2.0 * p[-1])
    K = s2 * np.exp(-0.5 * (sqdist / ls[:, None, None] ** 2).sum(axis=0)) + sn2 * np.eye(y.size)
    L = robust_cholesky(K)
    ones = np.ones(y.size)
    Ki1 = linalg.cho_solve((L, True), ones)
    return float((Ki1 @ y) / (Ki1 @ ones))


def fit_hyperparameters(
    data: Dataset,
    bounds: FitBounds | None = None,
    restarts: int = 3,
    rng_seed=None,
    init: GPModel | None = None,
) -> GPModel:
    """Maximize the log marginal likelihood over (zeta, Lambda, v, noise).

    Targets and inputs are standardized internally; the returned model is in
    original units. ``init`` warm-starts the first restart.
    """
    n = len(data)
    if n < 2:
        raise ValueError("need at least two observations to fit hyperparameters")
    bounds = bounds or FitBounds()
    rng = as_generator(rng_seed)
    X, y = data.inputs, data.targets
    d = X.shape[1]

    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    x_scale = np.std(X, axis=0)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    sqdist = (X[:, None, :] - X[None, :, :]).transpose(2, 0, 1) ** 2

    lo = np.concatenate(
        [[np.log(bounds.outputscale[0])], np.log(bounds.lengthscale[0] * x_scale), [np.log(bounds.noise[0])]]
    )
    hi = np.concatenate(
        [[np.log(bounds.outputscale[1])], np.log(bounds.lengthscale[1] * x_scale), [np.log(bounds.noise[1])]]
    )

    starts = []
    if init is not None and init.dim == d:
        p0 = np.concatenate(
            [
                [np.log(init.kernel.prior_variance / y_std**2)],
                np.log(init.kernel.lengthscales),
                [np.log(max(init.noise / y_std, NOISE_FLOOR))],
            ]
        )
        starts.append(np.clip(p0, lo, hi))
    starts.append(np.clip(np.concatenate([[0.0], np.log(x_scale), [np.log(1e-2)]]), lo, hi))
    # random restarts in a moderate box inside the bounds
    r_lo = np.concatenate([[np.log(0.1)], np.log(0.1 * x_scale), [np.log(1e-4)]])
    r_hi = np.concatenate([[np.log(10.0)], np.log(3.0 * x_scale), [np.log(0.3)]])
    while len(starts) < max(restarts, 1):
        starts.append(np.clip(rng.uniform(r_lo, r_hi), lo, hi))

    best = None
    for p0 in starts:
        try:
            res = optimize.minimize(
                _neg_lml_and_grad,
                p0,
                args=(X, ys, sqdist),
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
            )
        except (linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.debug("restart failed: %s", exc)
            continue
        if np.isfinite(res.fun) and res.fun < 1e24 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise RuntimeError("all hyperparameter restarts failed")

    p = best.x
    v_std = _profiled_mean(p, X, ys, sqdist)
    kernel = KernelSpec.from_outputscale(np.exp(p[0]) * y_std**2, np.exp(p[1 : 1 + d]))
    return GPModel(kernel, y_mean + y_std * v_std, float(np.exp(p[-1]) * y_std), data)
