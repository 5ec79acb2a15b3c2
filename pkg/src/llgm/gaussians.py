"""Dense multivariate Gaussian algebra and Gauss-Hermite quadrature.

A :class:`GaussianDist` carries either moment parameters ``(mean, cov)`` or
canonical parameters ``(b, P)`` of a density proportional to
``exp(-0.5 x'Px + b'x)``, in which case the moment parameters are
``mean = P^{-1} b`` and ``cov = P^{-1}``.

Every factorization in the package goes through :func:`chol_spd`, which adds
a single documented jitter of ``1e-10 * trace/n`` to the diagonal when a
matrix is numerically on the edge of positive definiteness, and raises
:class:`~llgm.exceptions.NotPositiveDefiniteError` if that does not rescue
it.  Log-determinants are always accumulated from Cholesky diagonals in log
space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, eigh_tridiagonal, solve_triangular

from .exceptions import NotPositiveDefiniteError

__all__ = [
    "GaussianDist",
    "GaussHermiteRule",
    "canonical_to_moment",
    "moment_to_canonical",
    "gaussian_logpdf",
    "gaussian_kl",
    "gauss_hermite_rule",
    "chol_spd",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_JITTER_SCALE = 1e-10
_SYMMETRY_RTOL = 1e-8
MAX_GH_ORDER = 64


def chol_spd(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Retries once with ``1e-10 * trace/n`` added to the diagonal before
    giving up.

    Parameters
    ----------
    mat : ndarray, shape (n, n)

    Returns
    -------
    ndarray
        Lower-triangular ``L`` with ``L @ L.T == mat`` (possibly with the
        documented jitter folded in).
    """
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    n = mat.shape[-1]
    jitter = _JITTER_SCALE * np.trace(mat) / n
    try:
        return np.linalg.cholesky(mat + jitter * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"matrix of dimension {n} is not positive definite "
            f"(jitter {jitter:.3e} did not help)"
        ) from exc


@dataclass
class GaussianDist:
    """A multivariate Gaussian in moment or canonical form.

    Parameters
    ----------
    mean : ndarray, shape (n,)
        Mean vector in moment form; linear coefficient ``b`` in canonical
        form.
    mat : ndarray, shape (n, n)
        Covariance in moment form; precision ``P`` in canonical form.
    form : {"moment", "canonical"}
    """

    mean: np.ndarray
    mat: np.ndarray
    form: str = "moment"

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.mat = np.atleast_2d(np.asarray(self.mat, dtype=float))
        if self.form not in ("moment", "canonical"):
            raise ValueError(f"unknown form {self.form!r}")
        if self.mean.ndim != 1:
            raise ValueError("mean must be one-dimensional")
        n = self.mean.shape[0]
        if self.mat.shape != (n, n):
            raise ValueError(
                f"matrix shape {self.mat.shape} does not match dimension {n}"
            )
        scale = np.abs(self.mat).max()
        if scale > 0 and not np.allclose(
            self.mat, self.mat.T, atol=_SYMMETRY_RTOL * scale, rtol=0.0
        ):
            raise ValueError("matrix is not symmetric")
        # store an exactly symmetric copy so downstream Cholesky calls see
        # a clean input regardless of how the matrix was assembled
        self.mat = 0.5 * (self.mat + self.mat.T)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def canonical_to_moment(g: GaussianDist) -> GaussianDist:
    """Convert canonical ``(b, P)`` to moment ``(P^{-1}b, P^{-1})``."""
    if g.form != "canonical":
        raise ValueError("canonical_to_moment expects a canonical-form input")
    lower = chol_spd(g.mat)
    mean = cho_solve((lower, True), g.mean)
    cov = cho_solve((lower, True), np.eye(g.dim))
    return GaussianDist(mean, cov, form="moment")


def moment_to_canonical(g: GaussianDist) -> GaussianDist:
    """Convert moment ``(mean, cov)`` to canonical ``(cov^{-1}mean, cov^{-1})``."""
    if g.form != "moment":
        raise ValueError("moment_to_canonical expects a moment-form input")
    lower = chol_spd(g.mat)
    prec = cho_solve((lower, True), np.eye(g.dim))
    b = cho_solve((lower, True), g.mean)
    return GaussianDist(b, prec, form="canonical")


def gaussian_logpdf(g: GaussianDist, x: np.ndarray) -> float:
    """Exact log-density of ``g`` at ``x`` (either form accepted)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(f"point shape {x.shape} does not match dim {g.dim}")
    lower = chol_spd(g.mat)
    half_logdet = float(np.sum(np.log(np.diag(lower))))
    if g.form == "moment":
        z = solve_triangular(lower, x - g.mean, lower=True)
        return -0.5 * g.dim * _LOG_2PI - half_logdet - 0.5 * float(z @ z)
    # canonical: logdet(P) = -logdet(cov); mean = P^{-1} b
    mu = cho_solve((lower, True), g.mean)
    d = x - mu
    return -0.5 * g.dim * _LOG_2PI + half_logdet - 0.5 * float(d @ (g.mat @ d))


def gaussian_kl(target: GaussianDist, approx: GaussianDist) -> float:
    """Closed-form KL divergence between two moment-form Gaussians.

    With ``target = (mu0, S0)`` and ``approx = (mu1, S1)`` this is the
    expectation under the target of the log density ratio target/approx:

        0.5 * { log|S1|/|S0| - n + tr(S1^{-1} S0)
                + (mu1-mu0)' S1^{-1} (mu1-mu0) }

    Parameters
    ----------
    target, approx : GaussianDist
        Both must be moment form and share a dimension.

    Returns
    -------
    float
        Nonnegative up to ~1e-10 numerical slack.
    """
    if target.form != "moment" or approx.form != "moment":
        raise ValueError("gaussian_kl expects moment-form inputs")
    if target.dim != approx.dim:
        raise ValueError(
            f"dimension mismatch: {target.dim} vs {approx.dim}"
        )
    n = target.dim
    l0 = chol_spd(target.mat)
    l1 = chol_spd(approx.mat)
    logdet0 = 2.0 * float(np.sum(np.log(np.diag(l0))))
    logdet1 = 2.0 * float(np.sum(np.log(np.diag(l1))))
    # tr(S1^{-1} S0) = || L1^{-1} L0 ||_F^2
    w = solve_triangular(l1, l0, lower=True)
    trace_term = float(np.sum(w * w))
    z = solve_triangular(l1, approx.mean - target.mean, lower=True)
    mahal = float(z @ z)
    return 0.5 * (logdet1 - logdet0 - n + trace_term + mahal)


@dataclass(frozen=True)
class GaussHermiteRule:
    """Nodes and weights integrating ``f`` against ``exp(-x^2)`` exactly for
    polynomials of degree <= 2*order - 1."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values: np.ndarray) -> float:
        """Sum ``values * weights`` for ``values = f(nodes)``."""
        return float(np.dot(np.asarray(values, dtype=float), self.weights))


def _christoffel_weights(nodes: np.ndarray) -> np.ndarray:
    """Quadrature weights 1 / sum_k p_k(x)^2 from the orthonormal Hermite
    recurrence (stable for extreme nodes, where the eigenvector-component
    route underflows)."""
    order = nodes.size
    p_prev = np.full_like(nodes, np.pi ** -0.25)
    total = p_prev ** 2
    p_curr = np.sqrt(2.0) * nodes * p_prev
    for k in range(1, order):
        total += p_curr ** 2
        if k == order - 1:
            break
        b_k = np.sqrt(k / 2.0)
        b_next = np.sqrt((k + 1) / 2.0)
        p_prev, p_curr = p_curr, (nodes * p_curr - b_k * p_prev) / b_next
    return 1.0 / total


def gauss_hermite_rule(order: int) -> GaussHermiteRule:
    """Gauss-Hermite rule of a given order via Golub-Welsch.

    Eigenvalues of the symmetric tridiagonal Jacobi matrix (zero diagonal,
    off-diagonal sqrt(k/2)) are the nodes; weights come from the
    Christoffel-function identity evaluated with the orthonormal Hermite
    recurrence.

    Parameters
    ----------
    order : int
        Number of nodes, between 1 and 64.
    """
    if not 1 <= order <= MAX_GH_ORDER:
        raise ValueError(f"order must be in [1, {MAX_GH_ORDER}], got {order}")
    if order == 1:
        return GaussHermiteRule(1, np.zeros(1), np.array([np.sqrt(np.pi)]))
    sub = np.sqrt(np.arange(1, order) / 2.0)
    nodes = eigh_tridiagonal(np.zeros(order), sub, eigvals_only=True)
    # enforce the exact +/- symmetry the analytic rule has
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = _christoffel_weights(nodes)
    weights = 0.5 * (weights + weights[::-1])
    return GaussHermiteRule(order, nodes, weights)
