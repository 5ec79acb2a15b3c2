"""Tests for dense Gaussian algebra and Gauss-Hermite quadrature."""

import math

import numpy as np
import pytest

from llgm.exceptions import NotPositiveDefiniteError
from llgm.gaussians import (
    GaussianDist,
    canonical_to_moment,
    chol_spd,
    gauss_hermite_rule,
    gaussian_kl,
    gaussian_logpdf,
    moment_to_canonical,
)


def random_spd(rng, n, near_singular=False):
    a = rng.standard_normal((n, n))
    mat = a @ a.T + n * np.eye(n)
    if near_singular:
        # squash one direction almost flat
        vals, vecs = np.linalg.eigh(mat)
        vals[0] *= 1e-6
        mat = (vecs * vals) @ vecs.T
        mat = 0.5 * (mat + mat.T)
    return mat


def random_gaussian(rng, n, **kw):
    return GaussianDist(rng.standard_normal(n), random_spd(rng, n, **kw))


# ---------------------------------------------------------------------------
# moment/canonical conversions
# ---------------------------------------------------------------------------

def test_canonical_to_moment_identity_case():
    g = GaussianDist(np.zeros(3), np.eye(3), form="canonical")
    m = canonical_to_moment(g)
    assert m.form == "moment"
    np.testing.assert_allclose(m.mean, np.zeros(3))
    np.testing.assert_allclose(m.mat, np.eye(3))


def test_canonical_to_moment_scalar():
    g = GaussianDist([4.0], [[2.0]], form="canonical")
    m = canonical_to_moment(g)
    np.testing.assert_allclose(m.mean, [2.0])
    np.testing.assert_allclose(m.mat, [[0.5]])


def test_round_trip_random():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = rng.integers(1, 9)
        g = random_gaussian(rng, n)
        back = canonical_to_moment(moment_to_canonical(g))
        np.testing.assert_allclose(back.mean, g.mean, rtol=1e-10, atol=1e-12)
        assert (
            np.linalg.norm(back.mat - g.mat) <= 1e-10 * np.linalg.norm(g.mat)
        )


def test_canonical_round_trip_from_canonical_side():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        g = GaussianDist(rng.standard_normal(n), random_spd(rng, n),
                         form="canonical")
        back = moment_to_canonical(canonical_to_moment(g))
        np.testing.assert_allclose(back.mean, g.mean, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(back.mat, g.mat, rtol=1e-9, atol=1e-12)


def test_conversion_rejects_wrong_form():
    g = GaussianDist([0.0], [[1.0]])
    with pytest.raises(ValueError):
        canonical_to_moment(g)
    with pytest.raises(ValueError):
        moment_to_canonical(moment_to_canonical(g))


def test_dist_validation():
    with pytest.raises(ValueError):
        GaussianDist([0.0, 0.0], [[1.0, 0.5], [0.1, 1.0]])  # asymmetric
    with pytest.raises(ValueError):
        GaussianDist([0.0, 0.0], np.eye(3))  # shape mismatch
    with pytest.raises(ValueError):
        GaussianDist([0.0], [[1.0]], form="natural")


# ---------------------------------------------------------------------------
# KL divergence
# ---------------------------------------------------------------------------

def test_kl_identical_is_zero():
    assert gaussian_kl(GaussianDist([0.0], [[1.0]]),
                       GaussianDist([0.0], [[1.0]])) == pytest.approx(0.0)


def test_kl_unit_mean_shift():
    assert gaussian_kl(GaussianDist([0.0], [[1.0]]),
                       GaussianDist([1.0], [[1.0]])) == pytest.approx(0.5)


def test_kl_self_zero_randomized_including_near_singular():
    rng = np.random.default_rng(3)
    for i in range(30):
        n = int(rng.integers(1, 8))
        g = random_gaussian(rng, n, near_singular=(i % 3 == 0))
        assert abs(gaussian_kl(g, g)) < 1e-12


def test_kl_nonnegative_randomized():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        assert gaussian_kl(random_gaussian(rng, n),
                           random_gaussian(rng, n)) >= -1e-10


def test_kl_matches_monte_carlo():
    # E_target[log p_target - log p_approx] estimated by sampling
    rng = np.random.default_rng(2024)
    for _ in range(5):
        n = 3
        target = random_gaussian(rng, n)
        approx = random_gaussian(rng, n)
        closed = gaussian_kl(target, approx)
        ltar = np.linalg.cholesky(target.mat)
        xs = target.mean + rng.standard_normal((200_000, n)) @ ltar.T
        logs = np.array(
            [gaussian_logpdf(target, x) - gaussian_logpdf(approx, x)
             for x in xs[:5000]]
        )
        # vectorized evaluation for the full sample
        d0 = xs - target.mean
        lapp = np.linalg.cholesky(approx.mat)
        z0 = np.linalg.solve(ltar, d0.T)
        z1 = np.linalg.solve(lapp, (xs - approx.mean).T)
        logdet0 = 2 * np.log(np.diag(ltar)).sum()
        logdet1 = 2 * np.log(np.diag(lapp)).sum()
        diffs = 0.5 * (logdet1 - logdet0 + (z1 ** 2).sum(0) - (z0 ** 2).sum(0))
        np.testing.assert_allclose(diffs[:5000], logs, rtol=1e-8, atol=1e-8)
        se = diffs.std(ddof=1) / math.sqrt(diffs.size)
        assert abs(diffs.mean() - closed) < 3 * se


def test_kl_errors():
    g1 = GaussianDist([0.0], [[1.0]])
    g2 = GaussianDist([0.0, 0.0], np.eye(2))
    with pytest.raises(ValueError):
        gaussian_kl(g1, g2)
    with pytest.raises(ValueError):
        gaussian_kl(g1, moment_to_canonical(g1))
    bad = GaussianDist([0.0, 0.0], np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefiniteError):
        gaussian_kl(bad, g2)


# ---------------------------------------------------------------------------
# log-density
# ---------------------------------------------------------------------------

def test_logpdf_standard_normal_at_zero():
    g = GaussianDist([0.0], [[1.0]])
    assert gaussian_logpdf(g, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_logpdf_bivariate():
    g = GaussianDist(np.zeros(2), np.eye(2))
    assert gaussian_logpdf(g, [1.0, 1.0]) == pytest.approx(
        -math.log(2 * math.pi) - 1.0
    )


def test_logpdf_canonical_agrees_with_moment():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        g = random_gaussian(rng, n)
        x = rng.standard_normal(n)
        assert gaussian_logpdf(moment_to_canonical(g), x) == pytest.approx(
            gaussian_logpdf(g, x), rel=1e-10
        )


def test_logpdf_integrates_to_marginal_along_slice():
    # integrating the joint density over the first coordinate must
    # reproduce the analytic marginal density of the remaining ones
    rng = np.random.default_rng(17)
    g = random_gaussian(rng, 4)
    rest = rng.standard_normal(3) + g.mean[1:]
    sd1 = math.sqrt(g.mat[0, 0])
    t = np.linspace(g.mean[0] - 10 * sd1, g.mean[0] + 10 * sd1, 6001)
    vals = np.array(
        [math.exp(gaussian_logpdf(g, np.concatenate(([ti], rest)))) for ti in t]
    )
    integral = np.trapezoid(vals, t)
    marg = GaussianDist(g.mean[1:], g.mat[1:, 1:])
    assert integral == pytest.approx(math.exp(gaussian_logpdf(marg, rest)),
                                     rel=1e-6)


def test_logpdf_dimension_error():
    g = GaussianDist([0.0, 0.0], np.eye(2))
    with pytest.raises(ValueError):
        gaussian_logpdf(g, [0.0])


# ---------------------------------------------------------------------------
# Gauss-Hermite rules
# ---------------------------------------------------------------------------

def gaussian_moment(degree):
    # integral of x^degree * exp(-x^2) over the real line
    if degree % 2 == 1:
        return 0.0
    return math.gamma((degree + 1) / 2.0)


def test_gh_order_one():
    rule = gauss_hermite_rule(1)
    np.testing.assert_allclose(rule.nodes, [0.0])
    np.testing.assert_allclose(rule.weights, [math.sqrt(math.pi)])


def test_gh_weight_sums_and_shape():
    for order in range(1, 65):
        rule = gauss_hermite_rule(order)
        assert abs(rule.weights.sum() - math.sqrt(math.pi)) < 1e-12
        assert np.all(rule.weights > 0)
        assert np.all(np.diff(rule.nodes) > 0)
        np.testing.assert_allclose(rule.nodes, -rule.nodes[::-1], atol=0.0)


def test_gh_exactness_up_to_degree():
    for order in range(1, 11):
        rule = gauss_hermite_rule(order)
        for degree in range(0, 2 * order):
            approx = rule.integrate(rule.nodes ** degree)
            exact = gaussian_moment(degree)
            if exact == 0.0:
                assert abs(approx) < 1e-10
            else:
                assert abs(approx - exact) <= 1e-10 * abs(exact)


def test_gh_degree_four_and_exactness_boundary():
    rule = gauss_hermite_rule(5)
    assert rule.integrate(rule.nodes ** 4) == pytest.approx(
        3 * math.sqrt(math.pi) / 4, abs=1e-12
    )
    # degree 10 > 2*5-1: the rule must NOT be exact
    err = rule.integrate(rule.nodes ** 10) - gaussian_moment(10)
    assert abs(err) > 1e-6


def test_gh_matches_numpy_reference():
    from numpy.polynomial.hermite import hermgauss

    for order in (2, 3, 8, 16, 31):
        rule = gauss_hermite_rule(order)
        nodes, weights = hermgauss(order)
        np.testing.assert_allclose(rule.nodes, nodes, atol=1e-12)
        np.testing.assert_allclose(rule.weights, weights, atol=1e-12)


def test_gh_order_validation():
    for bad in (0, -3, 65):
        with pytest.raises(ValueError):
            gauss_hermite_rule(bad)


# ---------------------------------------------------------------------------
# Cholesky policy
# ---------------------------------------------------------------------------

def test_chol_jitter_rescues_semidefinite():
    mat = np.ones((3, 3))  # rank one, PSD
    lower = chol_spd(mat)
    rebuilt = lower @ lower.T
    assert np.linalg.norm(rebuilt - mat) < 1e-8


def test_chol_raises_on_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        chol_spd(np.diag([1.0, -1.0]))
