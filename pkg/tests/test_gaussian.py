import math
from itertools import permutations

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from probnes.gaussian import (
    S4,
    T3,
    T4,
    T4_PRINTED,
    Gaussian,
    NotPositiveDefiniteError,
    chi2_threshold,
    logpdf_grad_mu,
    logpdf_grad_sigma,
    mahalanobis,
    mvn_logpdf,
    mvn_pdf,
    permute,
    permute_inverse,
    product_integral,
    product_moment1,
    product_moment2,
    product_moment3,
    product_params,
    robust_cholesky,
    sample_mvn,
)


def rand_gauss(rng, d):
    Q = rng.standard_normal((d, d))
    return Gaussian(rng.normal(0, 1, d), Q @ Q.T + 0.5 * np.eye(d))


seeds = st.integers(0, 2**31 - 1)


# ---------------------------------------------------------------- logpdf


def mp_logpdf(x, mean, cov):
    """Extended-precision reference for ln N(x; mean, cov)."""
    mp.mp.dps = 40
    S = mp.matrix(cov.tolist())
    diff = mp.matrix((np.asarray(x) - mean).tolist())
    quad = (diff.T * mp.inverse(S) * diff)[0]
    return float(-0.5 * (len(mean) * mp.log(2 * mp.pi) + mp.log(mp.det(S)) + quad))


def test_logpdf_standard_normal_mode():
    assert mvn_logpdf([0.0], Gaussian([0.0], [[1.0]])) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert mvn_logpdf(np.zeros(1), Gaussian([0.0], [[1.0]])) == pytest.approx(-0.9189385, abs=1e-7)


@pytest.mark.parametrize("d", [1, 2, 5])
def test_logpdf_at_mean_identity_cov(d):
    mu = np.arange(d, dtype=float)
    assert mvn_logpdf(mu, Gaussian(mu, np.eye(d))) == pytest.approx(-0.5 * d * math.log(2 * math.pi), rel=1e-14)


def test_logpdf_extended_precision_oracle():
    assert mvn_logpdf([1.0], Gaussian([0.0], [[2.0]])) == pytest.approx(mp_logpdf([1.0], np.zeros(1), np.array([[2.0]])), rel=1e-14)
    rng = np.random.default_rng(0)
    g = rand_gauss(rng, 3)
    X = rng.normal(0, 2, (5, 3))
    got = mvn_logpdf(X, g)
    for x, v in zip(X, got):
        assert v == pytest.approx(mp_logpdf(x, g.mean, g.cov), rel=1e-12)


def test_logpdf_errors():
    with pytest.raises(ValueError):
        mvn_logpdf([0.0, 0.0], Gaussian([0.0], [[1.0]]))
    with pytest.raises(NotPositiveDefiniteError):
        mvn_logpdf([0.0, 0.0], Gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        Gaussian([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])


def test_pdf_integrates_to_one():
    val, _ = integrate.quad(lambda x: mvn_pdf([x], Gaussian([0.3], [[0.7]])), -np.inf, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


def test_robust_cholesky_jitter_policy():
    S = np.ones((3, 3))  # PSD, rank one: plain Cholesky fails, jitter rescues it
    L = robust_cholesky(S)
    assert np.allclose(L @ L.T, S, atol=1e-5)
    with pytest.raises(NotPositiveDefiniteError):
        robust_cholesky(np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefiniteError):
        robust_cholesky(np.array([[np.nan]]))


# ---------------------------------------------------------------- products


def test_product_params_symmetric_case():
    for d in (1, 3):
        g = Gaussian(np.zeros(d), np.eye(d))
        p = product_params(g, g)
        assert np.allclose(p.nu, 0.0)
        assert np.allclose(p.pi, 0.5 * np.eye(d))
        assert p.scale == pytest.approx(math.exp(mvn_logpdf(np.zeros(d), Gaussian(np.zeros(d), 2 * np.eye(d)))))


def test_product_params_mirror_case():
    p = product_params(Gaussian([1.0], [[1.0]]), Gaussian([-1.0], [[1.0]]))
    assert p.nu[0] == pytest.approx(0.0, abs=1e-15)
    assert p.pi[0, 0] == pytest.approx(0.5)
    assert p.scale == pytest.approx(mvn_pdf([1.0], Gaussian([-1.0], [[2.0]])))


def test_product_same_gaussian_invariant():
    g = rand_gauss(np.random.default_rng(1), 3)
    p = product_params(g, g)
    assert np.allclose(p.nu, g.mean)
    assert np.allclose(p.pi, g.cov / 2)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3))
def test_product_pointwise_identity(seed, d):
    rng = np.random.default_rng(seed)
    g1, g2 = rand_gauss(rng, d), rand_gauss(rng, d)
    p = product_params(g1, g2)
    assert p.scale >= 0
    assert np.all(np.linalg.eigvalsh(p.pi) > 0)
    X = rng.normal(0, 2, (100, d))
    lhs = mvn_logpdf(X, g1) + mvn_logpdf(X, g2)
    rhs = mvn_logpdf(X, Gaussian(p.nu, p.pi)) + math.log(p.scale)
    # relative agreement of the densities themselves
    assert np.max(np.abs(np.expm1(lhs - rhs))) < 1e-10


def test_product_dimension_mismatch():
    with pytest.raises(ValueError):
        product_params(Gaussian([0.0], [[1.0]]), Gaussian([0.0, 0.0], np.eye(2)))
    with pytest.raises(ValueError):
        product_integral(Gaussian([0.0], [[1.0]]), Gaussian([0.0, 0.0], np.eye(2)))


def test_product_integral_1d_quadrature():
    g = Gaussian([0.0], [[1.0]])
    assert product_integral(g, g) == pytest.approx(1.0 / math.sqrt(4 * math.pi), rel=1e-14)
    g1, g2 = Gaussian([0.4], [[0.6]]), Gaussian([-0.9], [[1.7]])
    val, _ = integrate.quad(lambda x: mvn_pdf([x], g1) * mvn_pdf([x], g2), -np.inf, np.inf, epsabs=1e-14)
    assert product_integral(g1, g2) == pytest.approx(val, abs=1e-12)


def test_product_integral_centered():
    rng = np.random.default_rng(2)
    g1, g2 = rand_gauss(rng, 3), rand_gauss(rng, 3)
    g2 = Gaussian(g1.mean, g2.cov)
    expected = np.linalg.det(2 * np.pi * (g1.cov + g2.cov)) ** -0.5
    assert product_integral(g1, g2) == pytest.approx(expected, rel=1e-12)


def grid_2d(g1, g2, n=601):
    """Tensor trapezoid grid for d = 2 (spectrally accurate for Gaussians).

    The window is sized from the product density only to place it; the
    integrand itself is evaluated from the two factor densities.
    """
    S = np.linalg.inv(np.linalg.inv(g1.cov) + np.linalg.inv(g2.cov))
    c = S @ (np.linalg.solve(g1.cov, g1.mean) + np.linalg.solve(g2.cov, g2.mean))
    half = 12.0 * math.sqrt(np.linalg.eigvalsh(S)[-1])
    a = np.linspace(-half, half, n)
    h = a[1] - a[0]
    P = np.stack(np.meshgrid(a + c[0], a + c[1], indexing="ij"), -1).reshape(-1, 2)
    w = mvn_pdf(P, g1) * mvn_pdf(P, g2) * h * h
    return P, w


def test_product_integral_and_moments_grid():
    rng = np.random.default_rng(3)
    for _ in range(3):
        g1, g2 = rand_gauss(rng, 2), rand_gauss(rng, 2)
        P, w = grid_2d(g1, g2)
        assert product_integral(g1, g2) == pytest.approx(w.sum(), abs=1e-8)
        assert np.allclose(product_moment1(g1, g2), w @ P, atol=1e-6)
        assert np.allclose(product_moment2(g1, g2), np.einsum("n,ni,nj->ij", w, P, P), atol=1e-6)
        assert np.allclose(product_moment3(g1, g2), np.einsum("n,ni,nj,nk->ijk", w, P, P, P), atol=1e-6)


def test_moments_trivial_cases():
    g = Gaussian(np.zeros(3), np.eye(3))
    assert np.allclose(product_moment1(g, g), 0.0)
    g1 = Gaussian([0.0], [[1.0]])
    assert product_moment2(g1, g1)[0, 0] == pytest.approx(0.5 * mvn_pdf([0.0], Gaussian([0.0], [[2.0]])))


def test_moment2_symmetric_and_moment3_fully_symmetric():
    rng = np.random.default_rng(4)
    g1, g2 = rand_gauss(rng, 3), rand_gauss(rng, 3)
    M2 = product_moment2(g1, g2)
    assert np.allclose(M2, M2.T)
    M3 = product_moment3(g1, g1)
    for p in permutations(range(3)):
        assert np.allclose(np.transpose(M3, p), M3, atol=1e-14)


# ---------------------------------------------------------------- permutations


def test_permutation_sets_contents():
    assert len(T3) == 3 and len(T4) == 6 and len(S4) == 3
    rng = np.random.default_rng(5)
    for perm in T3 + T4 + S4 + T4_PRINTED:
        inv = np.argsort(np.array(perm) - 1) + 1
        T = rng.standard_normal((2,) * len(perm))
        assert np.allclose(permute_inverse(permute(T, perm), perm), T)
        if tuple(inv) == tuple(perm):  # involution: applying twice is the identity
            assert np.allclose(permute(permute(T, perm), perm), T)


def test_t4_placements_distinct_under_direct_action():
    """The six (vector, matrix, vector) placements must all differ."""
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    M = rng.standard_normal((3, 3))
    base = np.einsum("i,jk,l->ijkl", a, M, b)
    direct = [permute(base, p) for p in T4]
    assert all(not np.allclose(direct[i], direct[j]) for i in range(6) for j in range(i))
    # the printed list reaches the same placements only through the inverse action
    printed_inverse = sum(permute_inverse(base, p) for p in T4_PRINTED)
    assert np.allclose(printed_inverse, sum(direct))
    printed_direct = sum(permute(base, p) for p in T4_PRINTED)
    assert not np.allclose(printed_direct, sum(direct))


# ---------------------------------------------------------------- derivatives


def test_logpdf_grads_at_mean():
    g = rand_gauss(np.random.default_rng(7), 3)
    assert np.allclose(logpdf_grad_mu(g.mean, g), 0.0)
    assert np.allclose(logpdf_grad_sigma(g.mean, g), -0.5 * np.linalg.inv(g.cov))


def test_logpdf_grads_unit_case():
    g = Gaussian([0.0], [[1.0]])
    assert logpdf_grad_mu([1.0], g)[0] == pytest.approx(1.0)
    assert logpdf_grad_sigma([1.0], g)[0, 0] == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_logpdf_grads_finite_differences(seed):
    rng = np.random.default_rng(seed)
    g = rand_gauss(rng, 3)
    x = g.mean + rng.normal(0, 1, 3)
    h = 1e-5
    gm = logpdf_grad_mu(x, g)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (mvn_logpdf(x, Gaussian(g.mean + e, g.cov)) - mvn_logpdf(x, Gaussian(g.mean - e, g.cov))) / (2 * h)
        assert abs(fd - gm[i]) < 1e-6
    G = logpdf_grad_sigma(x, g)
    assert np.allclose(G, G.T, atol=1e-14)
    for i in range(3):
        for j in range(3):
            E = np.zeros((3, 3))
            E[i, j] += 0.5 * h  # symmetric perturbation: half in each mirrored entry
            E[j, i] += 0.5 * h
            fd = (mvn_logpdf(x, Gaussian(g.mean, g.cov + E)) - mvn_logpdf(x, Gaussian(g.mean, g.cov - E))) / (2 * h)
            assert abs(fd - G[i, j]) < 1e-6


# ---------------------------------------------------------------- Mahalanobis


def test_mahalanobis_examples():
    g = Gaussian([1.0, 2.0], 4 * np.eye(2))
    assert mahalanobis(g.mean, g) == 0.0
    assert mahalanobis([3.0, 2.0], g) == pytest.approx(1.0)
    X = np.array([[3.0, 2.0], [1.0, 2.0]])
    assert np.allclose(mahalanobis(X, g), [1.0, 0.0])


def regularized_gamma_p(a, x, terms=400):
    """Lower regularized incomplete gamma by its power series."""
    if x <= 0:
        return 0.0
    total, term = 0.0, 1.0 / a
    for n in range(terms):
        total += term
        term *= x / (a + n + 1)
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_quantile_bisection(d, conf):
    lo, hi = 0.0, 10.0 * d + 100.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if regularized_gamma_p(d / 2.0, mid / 2.0) < conf:
            lo = mid
        else:
            hi = mid
    return math.sqrt(0.5 * (lo + hi))


def test_chi2_threshold_three_sigma():
    assert chi2_threshold(1, 0.9973) == pytest.approx(3.0, abs=1e-3)
    assert chi2_quantile_bisection(1, 0.9973) == pytest.approx(3.0, abs=1e-3)


@pytest.mark.parametrize("d", [1, 2, 3, 5, 10, 20])
@pytest.mark.parametrize("conf", [0.5, 0.9, 0.9973])
def test_chi2_threshold_matches_bisection_oracle(d, conf):
    assert chi2_threshold(d, conf) == pytest.approx(chi2_quantile_bisection(d, conf), rel=1e-9)


def test_chi2_threshold_errors():
    for conf in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            chi2_threshold(2, conf)


@pytest.mark.parametrize("d,conf", [(1, 0.9), (2, 0.9973), (4, 0.5)])
def test_chi2_threshold_coverage(d, conf):
    rng = np.random.default_rng(8)
    n = 100_000
    Z = rng.standard_normal((n, d))
    frac = np.mean(mahalanobis(Z, Gaussian(np.zeros(d), np.eye(d))) <= chi2_threshold(d, conf))
    assert abs(frac - conf) <= 3 * math.sqrt(conf * (1 - conf) / n)


# ---------------------------------------------------------------- sampling


def test_sample_mvn_contract():
    g = Gaussian(np.zeros(2), np.eye(2))
    assert sample_mvn(g, 0, 1).shape == (0, 2)
    assert np.array_equal(sample_mvn(g, 5, 3), sample_mvn(g, 5, 3))
    S = sample_mvn(g, 10**6, 0)
    assert np.all(np.abs(S.mean(axis=0)) < 5e-3)


def test_sample_mvn_covariance():
    g = rand_gauss(np.random.default_rng(9), 3)
    S = sample_mvn(g, 200_000, 1)
    assert np.allclose(np.cov(S.T), g.cov, atol=0.05)
