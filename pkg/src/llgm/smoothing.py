"""Cross-region smoothing of hyperparameter posterior summaries.

Step 2 of the workflow treats each region's posterior mode as a noisy
observation of a smooth field over regions, with the observation precision
fixed at ``1 / sd^2`` from the region's own Step-1 posterior.  Two smoothers
cover the two domain layouts:

* :func:`rw2_smooth` — regions on a line, intrinsic second-order random walk
  prior.  Its null space (level + trend) is left unpenalized, so no
  propriety fix is applied: the posterior precision ``tau_u * D'D + W`` is
  full rank whenever at least two observation precisions are positive.
* :func:`spatial_smooth` — regions at 2-D centroids, zero-mean Matérn (nu=1)
  fluctuation around a free constant level.  The constant is estimated by
  generalized least squares inside the same solve (universal kriging with a
  flat trend), so infinite smoothing collapses the field onto the
  precision-weighted mean of the inputs rather than onto an arbitrary zero.

Numerics: the RW(2) posterior is solved through an SVD of the stacked
square-root system rather than a Cholesky of the assembled precision —
assembling ``tau_u * D'D + W`` squares the condition number and visibly
corrupts the heavy-smoothing limit (tau_u ~ 1e12) where the result must
reproduce the weighted least-squares line to 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .exceptions import SingularSystemError
from .gaussians import chol_spd
from .spatial import matern_correlation

__all__ = [
    "SmoothingInput",
    "SmoothedHyperField",
    "NormalizationInfo",
    "rw2_smooth",
    "spatial_smooth",
    "normalize_modes",
    "AR1_SWEEP_LOG_TAU",
    "SPATIAL_SWEEP_LOG_TAU",
]

#: smoothing-level sweeps used by the experiment drivers (log precision)
AR1_SWEEP_LOG_TAU = (-5.0, -1.0, 3.0, 7.0, 11.0, 15.0)
SPATIAL_SWEEP_LOG_TAU = tuple(np.linspace(-7.5, 5.0, 6))


@dataclass
class SmoothingInput:
    """Per-region posterior summaries entering a smoothing solve."""

    modes: np.ndarray
    obs_prec: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=float)
        self.obs_prec = np.asarray(self.obs_prec, dtype=float)
        if self.modes.ndim != 1 or self.modes.shape != self.obs_prec.shape:
            raise ValueError("modes and obs_prec must be matching vectors")
        if not np.all(np.isfinite(self.modes)):
            raise ValueError("modes must be finite")
        if not np.all(self.obs_prec > 0):
            raise ValueError("observation precisions must be positive")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=float)
            if self.coords.shape != (self.modes.size, 2):
                raise ValueError("coords must be (R, 2)")

    @property
    def n_regions(self) -> int:
        return int(self.modes.size)


@dataclass
class SmoothedHyperField:
    """Gaussian posterior summary of the smoothed field at each region."""

    post_mean: np.ndarray
    post_sd: np.ndarray
    tau_u: float

    def __post_init__(self):
        self.post_mean = np.asarray(self.post_mean, dtype=float)
        self.post_sd = np.asarray(self.post_sd, dtype=float)
        if self.post_mean.shape != self.post_sd.shape:
            raise ValueError("mean and sd must have matching shapes")
        if not (np.all(np.isfinite(self.post_mean))
                and np.all(np.isfinite(self.post_sd))):
            raise ValueError("smoothed field must be finite")
        if not np.all(self.post_sd > 0):
            raise ValueError("posterior sds must be positive")


def second_difference_matrix(n: int) -> np.ndarray:
    """The (n-2) x n operator taking second differences of a vector."""
    if n < 3:
        raise ValueError("second differences need at least 3 points")
    D = np.zeros((n - 2, n))
    idx = np.arange(n - 2)
    D[idx, idx] = 1.0
    D[idx, idx + 1] = -2.0
    D[idx, idx + 2] = 1.0
    return D


def rw2_smooth(inp: SmoothingInput, tau_u: float) -> SmoothedHyperField:
    """Smooth a 1-D sequence of modes under an intrinsic RW(2) prior.

    Solves ``(tau_u * D'D + diag(w)) mu = diag(w) * modes`` and reads the
    posterior sds off the inverse, both through one SVD of the stacked
    square-root system ``[sqrt(tau_u) D; sqrt(w)]``.
    """
    if not tau_u > 0:
        raise ValueError("tau_u must be positive")
    R = inp.n_regions
    if R < 3:
        raise ValueError("RW(2) smoothing needs at least 3 regions")
    D = second_difference_matrix(R)
    root_w = np.sqrt(inp.obs_prec)
    stacked = np.vstack([np.sqrt(tau_u) * D, np.diag(root_w)])
    # posterior precision is stacked' @ stacked; work on its square root
    U, s, Vt = np.linalg.svd(stacked, full_matrices=False)
    if s[-1] <= s[0] * 1e-13:
        raise SingularSystemError(
            "smoothing system is singular; needs at least two informative regions"
        )
    rhs = np.concatenate([np.zeros(R - 2), root_w * inp.modes])
    mean = Vt.T @ ((U.T @ rhs) / s)
    half = Vt / s[:, None]           # posterior covariance is half' @ half
    post_var = np.einsum("ir,ir->r", half, half)
    return SmoothedHyperField(post_mean=mean, post_sd=np.sqrt(post_var),
                              tau_u=float(tau_u))


def spatial_smooth(inp: SmoothingInput, tau_u_tilde: float,
                   range_fixed: float) -> SmoothedHyperField:
    """Smooth modes over 2-D centroids with a Matérn field plus free level.

    The field is ``alpha + u(s)`` with ``u`` zero-mean Matérn (nu=1,
    variance ``1/tau_u_tilde``, range ``range_fixed``) and ``alpha`` given a
    flat prior; observations add heteroscedastic noise ``1/obs_prec``.
    Everything reduces to solves against ``K = C + diag(1/obs_prec)``,
    which stays well-conditioned thanks to the noise nugget.
    """
    if inp.coords is None:
        raise ValueError("spatial smoothing needs centroid coordinates")
    if not tau_u_tilde > 0 or not range_fixed > 0:
        raise ValueError("tau_u_tilde and range_fixed must be positive")
    R = inp.n_regions
    if R < 3:
        raise ValueError("spatial smoothing needs at least 3 regions")
    diff = inp.coords[:, None, :] - inp.coords[None, :, :]
    dists = np.sqrt((diff ** 2).sum(-1))
    prior_var = 1.0 / tau_u_tilde
    C = prior_var * matern_correlation(dists, range_fixed)
    K = C + np.diag(1.0 / inp.obs_prec)
    L = chol_spd(K)

    ones = np.ones(R)
    k_inv_y = cho_solve((L, True), inp.modes)
    k_inv_1 = cho_solve((L, True), ones)
    denom = float(ones @ k_inv_1)
    alpha = float(ones @ k_inv_y) / denom

    resid_smooth = cho_solve((L, True), inp.modes - alpha * ones)
    mean = alpha + C @ resid_smooth

    # var(alpha + u_r | data): plain kriging variance plus the level's
    # uncertainty propagated through q = 1 - C K^-1 1
    half = solve_triangular(L, C, lower=True)
    kriging_var = np.diag(C) - np.einsum("ij,ij->j", half, half)
    q = ones - C @ k_inv_1
    post_var = kriging_var + q ** 2 / denom
    return SmoothedHyperField(post_mean=mean,
                              post_sd=np.sqrt(np.maximum(post_var, 1e-300)),
                              tau_u=float(tau_u_tilde))


@dataclass
class NormalizationInfo:
    """Affine parameters that map each component back to its raw scale."""

    means: np.ndarray
    sds: np.ndarray
    constant: np.ndarray   # bool per component: sd was zero, passed through

    def denormalize_mean(self, values: np.ndarray, k: int) -> np.ndarray:
        return np.asarray(values) * self.sds[k] + self.means[k]

    def denormalize_sd(self, sds: np.ndarray, k: int) -> np.ndarray:
        return np.asarray(sds) * self.sds[k]

    def scale_obs_prec(self, obs_prec: np.ndarray, k: int) -> np.ndarray:
        """Observation precisions on the normalized scale."""
        return np.asarray(obs_prec) * self.sds[k] ** 2


def normalize_modes(
    modes_by_component: np.ndarray,
) -> tuple[np.ndarray, NormalizationInfo]:
    """Standardize each component of a (K, R) mode matrix to mean 0, sd 1.

    A component with zero spread cannot be scaled; it is passed through
    unchanged and flagged, and its stored affine map is the identity.
    """
    modes = np.atleast_2d(np.asarray(modes_by_component, dtype=float))
    if modes.shape[1] < 2:
        raise ValueError("normalization needs at least 2 regions")
    means = modes.mean(axis=1)
    sds = modes.std(axis=1)
    constant = sds == 0.0
    means = np.where(constant, 0.0, means)
    sds = np.where(constant, 1.0, sds)
    normalized = (modes - means[:, None]) / sds[:, None]
    return normalized, NormalizationInfo(means=means, sds=sds,
                                         constant=constant)
