"""Third-stage refits: latent posteriors under smoothed hyperparameters.

After cross-region smoothing has produced a Gaussian summary
``(mu_k, sigma_k)`` per hyperparameter component, each region's latent
posterior is rebuilt either as a plug-in at the smoothed mean
(:func:`refit_point_mass`) or as a product Gauss-Hermite mixture over the
smoothed marginals (:func:`refit_gh_mixture`).  Both operations accept only
those Gaussian summaries — never a hyperparameter-posterior object — so this
stage cannot re-touch the region's own likelihood by construction.

The mixture components reuse the fit context's exact conditional solves;
nothing here approximates beyond the quadrature rule itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ar1 import Ar1Context
from .data import Region
from .gaussians import GaussianDist, chol_spd, gauss_hermite_rule

__all__ = [
    "MixturePosterior",
    "MixturePredictive",
    "PredictionTarget",
    "refit_point_mass",
    "refit_gh_mixture",
    "mixture_predictive",
]

_WEIGHT_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# mixture container
# ---------------------------------------------------------------------------

@dataclass
class MixturePosterior:
    """Weighted Gaussian mixture over a region's latent vector.

    ``theta_points[i]`` records the hyperparameter configuration component
    ``i`` was conditioned on, and ``noise_vars[i]`` the observation-noise
    variance implied by that configuration — both are needed later to build
    predictive densities without going back to any fit object.
    """

    weights: np.ndarray
    dists: tuple[GaussianDist, ...]
    theta_points: np.ndarray
    noise_vars: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.theta_points = np.atleast_2d(
            np.asarray(self.theta_points, dtype=float))
        self.noise_vars = np.asarray(self.noise_vars, dtype=float)
        m = self.weights.size
        if len(self.dists) != m or self.theta_points.shape[0] != m \
                or self.noise_vars.size != m:
            raise ValueError("component arrays must have matching lengths")
        if not np.all(self.weights > 0):
            raise ValueError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError("mixture weights must sum to 1")
        if not np.all(self.noise_vars > 0):
            raise ValueError("noise variances must be positive")
        dims = {d.dim for d in self.dists}
        if len(dims) != 1:
            raise ValueError("all components must share one dimension")
        for d in self.dists:
            if d.form != "moment":
                raise ValueError("components must be moment-form Gaussians")
            chol_spd(d.mat)   # positive-definiteness gate

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return self.dists[0].dim

    def moment_match(self) -> GaussianDist:
        """Collapse the mixture to a Gaussian with its exact moments."""
        means = np.stack([d.mean for d in self.dists])
        mean = self.weights @ means
        cov = np.zeros((self.dim, self.dim))
        for w, d in zip(self.weights, self.dists):
            centered = d.mean - mean
            cov += w * (d.mat + np.outer(centered, centered))
        return GaussianDist(mean=mean, mat=0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# refit operations
# ---------------------------------------------------------------------------

def _noise_variance(ctx, theta: np.ndarray) -> float:
    """Observation-noise variance implied by one hyperparameter point."""
    if isinstance(ctx, Ar1Context):
        return 1.0 / ctx.tau
    return float(np.exp(-np.asarray(theta, dtype=float).ravel()[0]))


def refit_point_mass(ctx, theta_star) -> GaussianDist:
    """Exact latent conditional at a single smoothed hyperparameter point."""
    theta = np.asarray(theta_star, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta_star must be finite")
    if theta.ndim == 0:
        return ctx.conditional(float(theta))
    return ctx.conditional(theta)


def refit_gh_mixture(ctx, smoothed_mean, smoothed_sd, order: int = 5
                     ) -> MixturePosterior:
    """Gauss-Hermite product mixture over the smoothed marginals.

    Component ``(l_1..l_K)`` conditions on ``theta_k = mu_k +
    sqrt(2) * xi_(l_k) * sigma_k`` and carries weight proportional to the
    product of the quadrature weights; weights are normalized to sum to 1
    exactly, making the ``pi^{-K/2}`` prefactor immaterial.
    """
    mu = np.atleast_1d(np.asarray(smoothed_mean, dtype=float))
    sigma = np.atleast_1d(np.asarray(smoothed_sd, dtype=float))
    if mu.shape != sigma.shape or mu.ndim != 1:
        raise ValueError("smoothed mean and sd must be matching vectors")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise ValueError("smoothed summaries must be finite")
    if np.any(sigma < 0):
        raise ValueError("smoothed sds must be nonnegative")
    K = mu.size
    if K not in (1, 2, 3):
        raise ValueError("1 to 3 hyperparameter components supported")
    if not 1 <= order <= 10:
        raise ValueError("quadrature order must be in 1..10")

    rule = gauss_hermite_rule(order)
    axes_nodes = [mu[k] + np.sqrt(2.0) * rule.nodes * sigma[k]
                  for k in range(K)]
    grids = np.meshgrid(*axes_nodes, indexing="ij")
    thetas = np.column_stack([g.ravel() for g in grids])
    w_grids = np.meshgrid(*([rule.weights] * K), indexing="ij")
    weights = np.ones(thetas.shape[0])
    for g in w_grids:
        weights = weights * g.ravel()
    weights = weights / weights.sum()

    batch = thetas[:, 0] if isinstance(ctx, Ar1Context) else thetas
    means, covs = ctx.conditional_moments_batch(batch)
    dists = tuple(GaussianDist(mean=means[i], mat=covs[i])
                  for i in range(thetas.shape[0]))
    noise_vars = np.array([_noise_variance(ctx, t) for t in thetas])
    return MixturePosterior(weights=weights, dists=dists,
                            theta_points=thetas, noise_vars=noise_vars)


# ---------------------------------------------------------------------------
# predictive densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionTarget:
    """A linear read-out of the latent vector to predict an observation at.

    ``coefficients`` maps the latent vector to the noiseless fitted value:
    a unit vector picking a time point in the series case, or
    ``[e_i, Z_i]`` (site indicator stacked with its covariate row) in the
    spatial case.
    """

    coefficients: np.ndarray

    @classmethod
    def time_point(cls, t: int, n_times: int) -> "PredictionTarget":
        if not 0 <= t < n_times:
            raise ValueError(f"time index {t} outside 0..{n_times - 1}")
        a = np.zeros(n_times)
        a[t] = 1.0
        return cls(coefficients=a)

    @classmethod
    def site(cls, region: Region, i: int) -> "PredictionTarget":
        n, p = region.Z.shape
        if not 0 <= i < n:
            raise ValueError(f"site index {i} outside 0..{n - 1}")
        a = np.zeros(n + p)
        a[i] = 1.0
        a[n:] = region.Z[i]
        return cls(coefficients=a)


@dataclass
class MixturePredictive:
    """Predictive density of one observation under a mixture posterior."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.weights @ self.means)

    @property
    def variance(self) -> float:
        second = self.weights @ (self.variances + self.means ** 2)
        return float(second - self.mean ** 2)

    def log_density(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = (y[..., None] - self.means) ** 2 / self.variances
        comp = -0.5 * (np.log(2.0 * np.pi * self.variances) + z)
        shifted = comp + np.log(self.weights)
        top = shifted.max(axis=-1, keepdims=True)
        return (top[..., 0] + np.log(np.exp(shifted - top).sum(axis=-1)))

    def density(self, y) -> np.ndarray:
        return np.exp(self.log_density(y))


def mixture_predictive(post: MixturePosterior, target: PredictionTarget
                       ) -> MixturePredictive:
    """Observation-scale predictive at a target under a mixture posterior."""
    a = np.asarray(target.coefficients, dtype=float)
    if a.shape != (post.dim,):
        raise ValueError(
            f"target dimension {a.shape} does not match posterior {post.dim}")
    means = np.array([float(a @ d.mean) for d in post.dists])
    latent_var = np.array([float(a @ d.mat @ a) for d in post.dists])
    return MixturePredictive(weights=post.weights.copy(), means=means,
                             variances=latent_var + post.noise_vars)
