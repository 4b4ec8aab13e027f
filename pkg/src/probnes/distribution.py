"""Gaussian search distributions and the Fisher geometry of (mu, vech Sigma).

Parameter vectors are laid out as ``(mu, vech Sigma)`` with vech the
lower-triangular column stacking. Gradients with respect to an off-diagonal
vech coordinate carry a factor 2, because moving that coordinate moves both
symmetric entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg

from .gaussian import NotPositiveDefiniteError, robust_cholesky

KINDS = ("full", "factor", "diagonal")


@dataclass(frozen=True)
class SearchDistribution:
    """N(mu, sigma) tagged with the parametrization its optimizer updates.

    ``kind`` is one of ``"full"`` (CMA-ES), ``"factor"`` (xNES, sigma = A A^T)
    or ``"diagonal"`` (SNES).
    """

    mu: np.ndarray
    sigma: np.ndarray
    kind: str = "full"
    factor: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"inconsistent shapes: mu {mu.shape}, sigma {sigma.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        sigma = 0.5 * (sigma + sigma.T)
        if self.kind == "factor":
            A = self.factor
            if A is None:
                A = robust_cholesky(sigma)
            A = np.atleast_2d(np.asarray(A, dtype=float))
            if A.shape != sigma.shape:
                raise ValueError("factor has the wrong shape")
            object.__setattr__(self, "factor", A)
            sigma = A @ A.T
            sigma = 0.5 * (sigma + sigma.T)
        elif self.kind == "diagonal":
            sigma = np.diag(np.diag(sigma))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_factor(cls, mu, A) -> "SearchDistribution":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(mu, A @ A.T, kind="factor", factor=A)

    @classmethod
    def from_std(cls, mu, std) -> "SearchDistribution":
        std = np.atleast_1d(np.asarray(std, dtype=float))
        return cls(mu, np.diag(std**2), kind="diagonal")

    @classmethod
    def isotropic(cls, mu, var=1.0, kind="full") -> "SearchDistribution":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return cls(mu, var * np.eye(mu.size), kind=kind)

    # Gaussian-like interface
    @property
    def mean(self) -> np.ndarray:
        return self.mu

    @property
    def cov(self) -> np.ndarray:
        return self.sigma

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma))

    def as_kind(self, kind: str) -> "SearchDistribution":
        if kind == self.kind:
            return self
        return SearchDistribution(self.mu, self.sigma, kind=kind)

    def affine(self, B, c) -> "SearchDistribution":
        """Image of the distribution under x -> B x + c."""
        B = np.atleast_2d(np.asarray(B, dtype=float))
        mu = B @ self.mu + c
        if self.kind == "factor":
            return SearchDistribution.from_factor(mu, B @ self.factor)
        return SearchDistribution(mu, B @ self.sigma @ B.T, kind=self.kind)


def vech_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of vech coordinates (lower triangle, column by column)."""
    cols, rows = np.triu_indices(d)
    return rows, cols


def vech(S) -> np.ndarray:
    S = np.asarray(S)
    rows, cols = vech_indices(S.shape[0])
    return S[rows, cols]


def unvech(v, d: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if d is None:
        d = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    rows, cols = vech_indices(d)
    S = np.zeros((d, d))
    S[rows, cols] = v
    S[cols, rows] = v
    return S


def vech_weights(d: int) -> np.ndarray:
    """1 on diagonal vech coordinates, 2 off the diagonal."""
    rows, cols = vech_indices(d)
    return np.where(rows == cols, 1.0, 2.0)


def grad_to_vech(G) -> np.ndarray:
    """Symmetric matrix gradient -> gradient with respect to vech coordinates."""
    G = np.asarray(G)
    return vech(G) * vech_weights(G.shape[0])


def vech_to_grad(g, d: int | None = None) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if d is None:
        d = int(round((np.sqrt(8 * g.size + 1) - 1) / 2))
    return unvech(g / vech_weights(d), d)


def param_dim(d: int) -> int:
    return d + d * (d + 1) // 2


def split_params(theta, d: int) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    return theta[:d], theta[d:]


@lru_cache(maxsize=32)
def duplication_matrix(d: int) -> np.ndarray:
    """D such that vec(S) = D vech(S) for symmetric S (vec is column-major)."""
    rows, cols = vech_indices(d)
    D = np.zeros((d * d, rows.size))
    for a, (i, j) in enumerate(zip(rows, cols)):
        D[i + j * d, a] = 1.0
        D[j + i * d, a] = 1.0
    return D


@dataclass(frozen=True)
class FisherBlocks:
    """Inverse Fisher metric of N(mu, sigma): sigma on mu, G -> 2 sigma G sigma on Sigma."""

    sigma: np.ndarray

    @property
    def mu_block(self) -> np.ndarray:
        return self.sigma

    def apply_mu(self, grad_mu) -> np.ndarray:
        return self.sigma @ grad_mu

    def apply_sigma(self, G) -> np.ndarray:
        out = 2.0 * self.sigma @ G @ self.sigma
        return 0.5 * (out + out.T)


def fisher_blocks(dist) -> FisherBlocks:
    sigma = np.asarray(dist.cov, dtype=float)
    robust_cholesky(sigma)  # raises on non-PD input
    return FisherBlocks(sigma)


def fisher_inverse_apply(dist, grad_mu, grad_sigma) -> tuple[np.ndarray, np.ndarray]:
    """Natural gradient (Sigma g_mu, 2 Sigma G Sigma) from a symmetric matrix gradient G."""
    grad_sigma = np.asarray(grad_sigma, dtype=float)
    if np.abs(grad_sigma - grad_sigma.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(grad_sigma).max(initial=0.0)):
        raise ValueError("grad_sigma must be symmetric")
    blocks = fisher_blocks(dist)
    return blocks.apply_mu(np.asarray(grad_mu, dtype=float)), blocks.apply_sigma(grad_sigma)


def fisher_matrix(dist) -> np.ndarray:
    """Fisher information over (mu, vech Sigma)."""
    sigma = np.asarray(dist.cov, dtype=float)
    L = robust_cholesky(sigma)
    P = linalg.cho_solve((L, True), np.eye(sigma.shape[0]))
    P = 0.5 * (P + P.T)
    d = sigma.shape[0]
    D = duplication_matrix(d)
    F_ss = 0.5 * D.T @ np.kron(P, P) @ D
    n = param_dim(d)
    F = np.zeros((n, n))
    F[:d, :d] = P
    F[d:, d:] = F_ss
    return F


def sym_expm(M) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via eigendecomposition."""
    M = np.asarray(M, dtype=float)
    w, V = linalg.eigh(0.5 * (M + M.T))
    return (V * np.exp(w)) @ V.T


def sym_logm(M) -> np.ndarray:
    """Matrix logarithm of a symmetric positive definite matrix."""
    M = np.asarray(M, dtype=float)
    w, V = linalg.eigh(0.5 * (M + M.T))
    if np.any(w <= 0):
        raise NotPositiveDefiniteError("logm needs a positive definite matrix")
    return (V * np.log(w)) @ V.T


def is_pd(sigma, rel_floor: float = 1e-10) -> bool:
    """Smallest eigenvalue above ``rel_floor * trace / d``."""
    sigma = np.asarray(sigma, dtype=float)
    if not np.all(np.isfinite(sigma)):
        return False
    w = linalg.eigvalsh(0.5 * (sigma + sigma.T))
    return bool(w[0] > rel_floor * np.trace(sigma) / sigma.shape[0])
