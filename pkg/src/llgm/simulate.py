"""Synthetic data generators for the two experiment modes.

The 1-D mode draws a panel of latent-plus-noise autoregressive series whose
lag coefficient drifts smoothly across regions, so neighbouring regions
genuinely share information and cross-region smoothing has something to
recover.

The 2-D mode draws one non-stationary Gaussian field over a coordinate box:
the Matérn range and marginal variance vary smoothly with position (the
scalar-kernel convolution construction of Paciorek & Schervish, which keeps
the covariance positive definite for any smooth range surface).  Observed
values are on the modeling scale already — the generator simulates the
transformed-response model directly, so no transform is applied on ingest.
The roughness of the range/variance surfaces is synthetic and configurable;
it is not calibrated to any particular data set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import kv

from .ar1 import Ar1Config, simulate_ar1
from .data import ObservationTable

__all__ = [
    "Ar1ExperimentDesign",
    "SpatialFieldDesign",
    "phi_schedule",
    "nonstationary_matern_cov",
    "simulate_ar1_experiment",
    "simulate_spatial_field",
]


# ---------------------------------------------------------------------------
# 1-D panel: smoothly varying lag coefficient
# ---------------------------------------------------------------------------

def phi_schedule(n_regions: int, offset: float = 0.3,
                 amplitude: float = 0.67, humps: float = 2.0) -> np.ndarray:
    """Lag coefficients 0.3..0.97 tracing ``humps`` sine-squared arches.

    The defaults put two full arches across the region index, so the
    coefficient path has interior maxima that naive per-region estimates
    scatter around.
    """
    if n_regions < 2:
        raise ValueError("need at least two regions")
    lo, hi = offset, offset + amplitude
    if not (-1.0 < lo < 1.0 and -1.0 < hi < 1.0):
        raise ValueError("schedule must stay inside the stationary "
                         "region (-1, 1)")
    r = np.arange(n_regions)
    return offset + amplitude * np.sin(np.pi * humps * r
                                       / (n_regions - 1)) ** 2


@dataclass(frozen=True)
class Ar1ExperimentDesign:
    """Panel design: R series of length T sharing one noise precision."""

    n_regions: int = 100
    series_length: int = 50
    tau: float = 2.0
    phi_offset: float = 0.3
    phi_amplitude: float = 0.67
    phi_humps: float = 2.0

    def __post_init__(self):
        if self.series_length < 2:
            raise ValueError("series_length must be at least 2")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        phi_schedule(self.n_regions, self.phi_offset, self.phi_amplitude,
                     self.phi_humps)   # validates the remaining fields

    def schedule(self) -> np.ndarray:
        return phi_schedule(self.n_regions, self.phi_offset,
                            self.phi_amplitude, self.phi_humps)


def simulate_ar1_experiment(
    design: Ar1ExperimentDesign, seed: int
) -> tuple[ObservationTable, np.ndarray]:
    """Draw the panel; returns the long-format table and the true φ_r."""
    rng = np.random.default_rng(seed)
    phis = design.schedule()
    R, T = design.n_regions, design.series_length
    region_seeds = rng.integers(np.iinfo(np.int64).max, size=R)
    series = np.empty((R, T))
    for r in range(R):
        y, _ = simulate_ar1(Ar1Config(phi=float(phis[r]), tau=design.tau,
                                      T=T), seed=int(region_seeds[r]))
        series[r] = y
    return ObservationTable.from_series_matrix(series), phis


# ---------------------------------------------------------------------------
# 2-D field: smoothly varying Matérn range and variance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpatialFieldDesign:
    """One non-stationary field over the square [0, box]².

    ``rho_base`` anchors the range surface; the two amplitudes set how far
    (in log units) the range and variance surfaces swing across the box.
    ``beta`` are regression coefficients, intercept first, matching two
    generated smooth covariates.  ``companion_frac`` places that share of
    the points as close companions of other points, mimicking the dense
    pockets of real monitoring networks; the short-distance contrast they
    provide is what identifies the noise variance within a region.

    The default surfaces swing on a length scale comparable to one cell of
    a ~100-region partition of the box, so a single stationary fit per
    region is a genuine compromise rather than exactly correct — the regime
    the local-fitting approach is meant for.
    """

    n_points: int = 5000
    box: float = 50.0
    rho_base: float = 2.0
    rho_amplitude: float = 0.45
    sigma2_amplitude: float = 0.6
    frequency: float = 2.0
    beta: tuple[float, ...] = (2.0, 0.5, -0.3)
    noise_sd: float = 0.35
    noise_amplitude: float = 0.6
    companion_frac: float = 0.12

    def __post_init__(self):
        if self.n_points < 10:
            raise ValueError("n_points must be at least 10")
        if not (self.box > 0 and self.rho_base > 0 and self.noise_sd > 0):
            raise ValueError("box, rho_base and noise_sd must be positive")
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be non-negative")
        if len(self.beta) != 3:
            raise ValueError("beta must be (intercept, cov1, cov2)")
        if not 0.0 <= self.companion_frac <= 0.5:
            raise ValueError("companion_frac must be in [0, 0.5]")

    def log_rho(self, locations: np.ndarray) -> np.ndarray:
        x, y = locations[:, 0], locations[:, 1]
        w = 2.0 * np.pi * self.frequency / self.box
        return (np.log(self.rho_base)
                + self.rho_amplitude * np.sin(w * x) * np.cos(0.5 * w * y))

    def log_sigma2(self, locations: np.ndarray) -> np.ndarray:
        x, y = locations[:, 0], locations[:, 1]
        w = 2.0 * np.pi * self.frequency / self.box
        return self.sigma2_amplitude * np.cos(0.5 * w * x) * np.sin(w * y)

    def log_noise_sd(self, locations: np.ndarray) -> np.ndarray:
        x, y = locations[:, 0], locations[:, 1]
        w = 2.0 * np.pi * (self.frequency + 1.0) / self.box
        return (np.log(self.noise_sd)
                + self.noise_amplitude * np.sin(w * x) * np.sin(w * y))

    def covariates(self, locations: np.ndarray) -> np.ndarray:
        """Two smooth standardized surfaces (a ridge and a radial bowl)."""
        x, y = locations[:, 0], locations[:, 1]
        w = 2.0 * np.pi / self.box
        c1 = np.sin(w * x) + np.cos(w * y)
        c2 = np.sqrt((x - 0.5 * self.box) ** 2 + (y - 0.5 * self.box) ** 2)
        Z = np.column_stack([c1, c2])
        return (Z - Z.mean(axis=0)) / Z.std(axis=0)


def nonstationary_matern_cov(locations: np.ndarray, log_rho: np.ndarray,
                             log_sigma2: np.ndarray) -> np.ndarray:
    """Covariance with position-dependent range and variance (smoothness 1).

    Each site i carries a scalar kernel a_i = ρ(s_i)²/8; the pair (i, j)
    is evaluated at the averaged kernel:

        C_ij = σ_i σ_j · √(a_i a_j) / ((a_i+a_j)/2) · g(h_ij·√(2/(a_i+a_j)))

    with g(t) = t·K₁(t).  When the surfaces are constant this collapses to
    the stationary Matérn used by the fitting code.
    """
    locations = np.asarray(locations, dtype=float)
    a = np.exp(log_rho) ** 2 / 8.0
    sigma = np.exp(0.5 * np.asarray(log_sigma2, dtype=float))
    # squared-distance expansion keeps peak memory at a few (N, N) buffers
    sq = (locations ** 2).sum(axis=1)
    t = sq[:, None] + sq[None, :] - 2.0 * (locations @ locations.T)
    np.maximum(t, 0.0, out=t)
    np.sqrt(t, out=t)
    np.fill_diagonal(t, 0.0)     # clear cancellation residue exactly
    a_mean = 0.5 * (a[:, None] + a[None, :])
    t /= np.sqrt(a_mean)
    with np.errstate(invalid="ignore"):
        g = kv(1, t)
        g *= t
    g[t == 0.0] = 1.0            # kv diverges at 0 but t·K₁(t) → 1
    g *= np.sqrt(np.outer(a, a))
    g /= a_mean
    g *= np.outer(sigma, sigma)
    return 0.5 * (g + g.T)


def simulate_spatial_field(
    design: SpatialFieldDesign, seed: int
) -> tuple[ObservationTable, dict[str, np.ndarray]]:
    """Draw one field realization on a jittered grid.

    Returns the observation table (locations, two covariates, noisy values)
    and the ground truth per point: latent field ``u``, ``log_rho`` and
    ``log_sigma2`` surface values, plus the noiseless signal.
    """
    rng = np.random.default_rng(seed)
    n_companion = int(round(design.companion_frac * design.n_points))
    n_base = design.n_points - n_companion
    side = int(np.ceil(np.sqrt(n_base)))
    step = design.box / side
    centers = (np.arange(side) + 0.5) * step
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    keep = rng.choice(cells.shape[0], size=n_base, replace=False)
    keep.sort()
    locations = cells[keep] + rng.uniform(-0.4 * step, 0.4 * step,
                                          size=(n_base, 2))
    if n_companion:
        anchors = rng.choice(n_base, size=n_companion, replace=False)
        offsets = rng.uniform(-0.05 * step, 0.05 * step,
                              size=(n_companion, 2))
        locations = np.vstack([locations, locations[anchors] + offsets])

    log_rho = design.log_rho(locations)
    log_sigma2 = design.log_sigma2(locations)
    cov = nonstationary_matern_cov(locations, log_rho, log_sigma2)
    cov[np.diag_indices_from(cov)] += 1e-8
    u = np.linalg.cholesky(cov) @ rng.standard_normal(design.n_points)

    Z = design.covariates(locations)
    signal = design.beta[0] + Z @ np.asarray(design.beta[1:]) + u
    noise_sd = np.exp(design.log_noise_sd(locations))
    values = signal + noise_sd * rng.standard_normal(design.n_points)

    table = ObservationTable(values=values, locations=locations,
                             covariates=Z, covariate_names=("cov1", "cov2"))
    truth = {"u": u, "log_rho": log_rho, "log_sigma2": log_sigma2,
             "signal": signal}
    return table, truth
