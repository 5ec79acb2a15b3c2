"""Model scoring for the three-step fits.

Two complementary lenses, each reduced to a geometric mean across the
partition:

* ``kl_region`` — KL divergence of an approximate latent posterior from the
  exact one at the true hyperparameter (only available on simulated data),
  aggregated by ``emlkl``.
* ``cpo_region`` — leave-one-out predictive density of every observation
  (CPO), computed from a single fit via Gaussian conditioning identities
  rather than T refits, aggregated by ``emlcpo``.

The smoothing level that maximizes EMLCPO (or minimizes EMLKL) is the one a
pipeline run should report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .ar1 import Ar1Context, HyperPosterior
from .exceptions import CpoUnderflowError
from .gaussians import GaussianDist, canonical_to_moment, gaussian_kl
from .refit import MixturePosterior
from .spatial import HyperPosterior3

__all__ = [
    "ScoreReport",
    "kl_region",
    "emlkl",
    "cpo_region",
    "emlcpo",
    "grid_posterior_moments",
]

# Grid nodes whose posterior mass sits this many nats below the peak are
# dropped before any dense factorization: they cannot move a mixture sum at
# double precision, but each one would still cost an (n x n) inverse.  In
# the harmonic CPO form a dropped node enters as w(theta) / p_t(theta), and
# w(theta) already contains p_t(theta) as one of its likelihood factors, so
# reviving a node 80 nats down would take a single observation accounting
# for 80+ nats of its deficit — far past where the underflow guard trips.
_GRID_LOG_WEIGHT_CUTOFF = 80.0


def _active_grid(thetas: np.ndarray, log_w: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    keep = log_w >= log_w.max() - _GRID_LOG_WEIGHT_CUTOFF
    return thetas[keep], log_w[keep]


# ---------------------------------------------------------------------------
# KL divergence to the exact latent posterior
# ---------------------------------------------------------------------------

def _as_moment_gaussian(dist) -> GaussianDist:
    if isinstance(dist, MixturePosterior):
        return dist.moment_match()
    if isinstance(dist, GaussianDist):
        return dist if dist.form == "moment" else canonical_to_moment(dist)
    raise TypeError(f"expected GaussianDist or MixturePosterior, got "
                    f"{type(dist).__name__}")


def _sample_approx(approx, rng: np.random.Generator,
                   n_samples: int) -> np.ndarray:
    """Draw from an approximate posterior (Gaussian or Gaussian mixture)."""
    if isinstance(approx, MixturePosterior):
        counts = rng.multinomial(n_samples, approx.weights)
        blocks = []
        for count, dist in zip(counts, approx.dists):
            if count == 0:
                continue
            chol = np.linalg.cholesky(dist.mat)
            z = rng.standard_normal((count, dist.mean.size))
            blocks.append(dist.mean + z @ chol.T)
        samples = np.concatenate(blocks, axis=0)
        rng.shuffle(samples)
        return samples
    g = _as_moment_gaussian(approx)
    chol = np.linalg.cholesky(g.mat)
    z = rng.standard_normal((n_samples, g.mean.size))
    return g.mean + z @ chol.T


def kl_region(exact: GaussianDist,
              approx,
              estimate_moments: bool = False,
              n_samples: int = 10_000,
              seed: int | None = None) -> float:
    """KL divergence of an approximate latent posterior from the exact one.

    The divergence is taken approximation-relative — ``KL(approx || exact)``,
    the expected log ratio under the approximation — so mass the
    approximation places where the exact posterior has none is penalized.

    Parameters
    ----------
    exact : GaussianDist
        Analytic latent posterior at the true hyperparameter.
    approx : GaussianDist or MixturePosterior
        A refit output.  Mixtures are Gaussian moment-matched before the
        closed-form divergence (the comparison is Gaussian-to-Gaussian by
        construction).
    estimate_moments : bool
        When True, estimate the approximation's mean and covariance from
        ``n_samples`` draws instead of using the analytic moments.  Slower
        and noisier; exists so runs mimicking a sampling-based workflow can
        be compared against the default.
    """
    exact_g = _as_moment_gaussian(exact)
    if estimate_moments:
        rng = np.random.default_rng(seed)
        samples = _sample_approx(approx, rng, n_samples)
        approx_g = GaussianDist(mean=samples.mean(axis=0),
                                mat=np.atleast_2d(np.cov(samples,
                                                         rowvar=False)))
    else:
        approx_g = _as_moment_gaussian(approx)
    return gaussian_kl(approx_g, exact_g)


def emlkl(kls: np.ndarray) -> float:
    """Geometric mean of per-region KL divergences ("expected mean log KL")."""
    return _geometric_mean(np.ravel(np.asarray(kls, dtype=float)))


# ---------------------------------------------------------------------------
# leave-one-out predictive scores
# ---------------------------------------------------------------------------

def cpo_region(ctx, hyper, region: int | None = None) -> np.ndarray:
    """Leave-one-out predictive density of each observation in one region.

    For every hyperparameter value the exact Gaussian conditioning identity
    gives p(y_t | y_-t, theta) from the full-data fit, so no refits are run.
    How those densities are mixed over theta depends on where the weights
    came from:

    * a dense-grid posterior (step one) was conditioned on the full region
      including y_t, so dropping y_t reweights the grid by
      1 / p(y_t | y_-t, theta) — the mixture collapses to a harmonic mean;
    * a smoothed mixture (step three) has weights built from the *other*
      regions' fits, which do not change when y_t is dropped, so the
      ordinary weighted mean applies.

    Parameters
    ----------
    ctx : Ar1Context or SpatialContext
        Full-data fit context for the region.
    hyper : HyperPosterior, HyperPosterior3, or MixturePosterior
        Hyperparameter weights to mix the conditional predictives under.
    region : int, optional
        Label attached to any underflow error, for pipeline reporting.

    Raises
    ------
    CpoUnderflowError
        If any leave-one-out density underflows to exactly zero.
    """
    if isinstance(hyper, HyperPosterior):
        thetas, log_w = _active_grid(hyper.grid, hyper.log_weights)
        weights_fixed = False
    elif isinstance(hyper, HyperPosterior3):
        thetas, log_w = _active_grid(hyper.nodes(), hyper.log_weights_flat)
        weights_fixed = False
    elif isinstance(hyper, MixturePosterior):
        thetas = hyper.theta_points
        if isinstance(ctx, Ar1Context):
            thetas = thetas[:, 0]
        log_w = np.log(hyper.weights)
        weights_fixed = True
    else:
        raise TypeError(f"unsupported hyperparameter summary: "
                        f"{type(hyper).__name__}")

    log_pred = ctx.loo_log_predictive_batch(thetas)   # (n_theta, T)
    if weights_fixed:
        log_cpo = logsumexp(log_w[:, None] + log_pred, axis=0)
    else:
        log_cpo = -logsumexp(log_w[:, None] - log_pred, axis=0)

    cpo = np.exp(log_cpo)
    if np.any(cpo <= 0.0) or not np.all(np.isfinite(cpo)):
        t = int(np.argmin(log_cpo))
        where = f"observation {t}" if region is None \
            else f"region {region}, observation {t}"
        raise CpoUnderflowError(
            f"leave-one-out predictive density underflowed at {where}",
            observation=t, region=region)
    return cpo


def grid_posterior_moments(ctx, hyper) -> GaussianDist:
    """Moment-match a dense-grid latent posterior to a single Gaussian.

    The step-one latent posterior is the grid mixture of per-node Gaussian
    conditionals; its exact mean and covariance follow from the node
    moments and weights (law of total variance).  This is the natural
    Gaussian summary to score an unsmoothed fit with ``kl_region``.
    """
    if isinstance(hyper, HyperPosterior):
        thetas, log_w = _active_grid(hyper.grid, hyper.log_weights)
    elif isinstance(hyper, HyperPosterior3):
        thetas, log_w = _active_grid(hyper.nodes(), hyper.log_weights_flat)
    else:
        raise TypeError(f"unsupported grid posterior: "
                        f"{type(hyper).__name__}")
    w = np.exp(log_w)
    w /= w.sum()
    means, covs = ctx.conditional_moments_batch(thetas)
    mean = w @ means
    dev = means - mean
    cov = (np.einsum("g,gij->ij", w, covs)
           + np.einsum("g,gi,gj->ij", w, dev, dev))
    return GaussianDist(mean=mean, mat=0.5 * (cov + cov.T), form="moment")


def emlcpo(cpos) -> float:
    """Geometric mean of CPO values pooled over every region and observation.

    Accepts a matrix or a ragged sequence of per-region vectors.
    """
    if isinstance(cpos, np.ndarray) and cpos.dtype != object:
        flat = np.ravel(cpos.astype(float))
    else:
        flat = np.concatenate(
            [np.ravel(np.asarray(c, dtype=float)) for c in cpos])
    return _geometric_mean(flat)


def _geometric_mean(values: np.ndarray) -> float:
    if values.size == 0:
        raise ValueError("geometric mean of an empty collection")
    if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
        raise ValueError("geometric mean requires strictly positive finite "
                         "entries")
    return float(np.exp(np.mean(np.log(values))))


# ---------------------------------------------------------------------------
# report container
# ---------------------------------------------------------------------------

_AGG_RTOL = 1e-9


@dataclass
class ScoreReport:
    """Scores for one (smoothing level, refit variant) configuration.

    ``variant`` names how the latent posteriors being scored were produced
    (e.g. ``"step1"`` for the unsmoothed per-region fits, ``"plugin"`` for
    point-mass refits at smoothed modes, ``"mixture"`` for quadrature
    refits), since a smoothing level alone does not pin that down.
    ``smoothing_level`` is the log precision of the smoothing model; use
    NaN for configurations that skip smoothing.
    """

    smoothing_level: float
    variant: str
    cpo: tuple
    emlcpo: float
    kl_per_region: np.ndarray | None = None
    emlkl: float | None = None

    def __post_init__(self):
        if not self.variant:
            raise ValueError("variant label must be non-empty")
        self.cpo = tuple(np.asarray(c, dtype=float) for c in self.cpo)
        if not self.cpo:
            raise ValueError("need CPO values for at least one region")
        check = emlcpo(self.cpo)
        if not np.isclose(self.emlcpo, check, rtol=_AGG_RTOL, atol=0.0):
            raise ValueError(f"emlcpo {self.emlcpo} inconsistent with its "
                             f"per-observation values (expected {check})")
        if (self.kl_per_region is None) != (self.emlkl is None):
            raise ValueError("kl_per_region and emlkl must be supplied "
                             "together")
        if self.kl_per_region is not None:
            self.kl_per_region = np.asarray(self.kl_per_region, dtype=float)
            check = emlkl(self.kl_per_region)
            if not np.isclose(self.emlkl, check, rtol=_AGG_RTOL, atol=0.0):
                raise ValueError(f"emlkl {self.emlkl} inconsistent with its "
                                 f"per-region values (expected {check})")

    @classmethod
    def from_scores(cls, smoothing_level: float, variant: str, cpo,
                    kl_per_region=None) -> "ScoreReport":
        """Build a report, computing the aggregates from the raw scores."""
        cpo = tuple(np.asarray(c, dtype=float) for c in cpo)
        kl = None if kl_per_region is None \
            else np.asarray(kl_per_region, dtype=float)
        return cls(smoothing_level=float(smoothing_level), variant=variant,
                   cpo=cpo, emlcpo=emlcpo(cpo), kl_per_region=kl,
                   emlkl=None if kl is None else emlkl(kl))
