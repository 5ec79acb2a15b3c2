"""Local latent Gaussian models on partitioned domains.

Three-step workflow: fit small latent Gaussian models independently per
region, smooth the hyperparameter posteriors across regions, then refit
each region with the smoothed posterior propagated as a point mass or a
Gauss-Hermite product mixture.  Model quality is scored by per-region KL
divergence against exact posteriors (simulations) and by leave-one-out
conditional predictive ordinates.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .gaussians import (
    GaussHermiteRule,
    GaussianDist,
    canonical_to_moment,
    gauss_hermite_rule,
    gaussian_kl,
    gaussian_logpdf,
    moment_to_canonical,
)
from .data import ObservationTable, Region
from .partition import KMeansPartitioner, Partition, kmeans_partition, region_view
from .ar1 import (
    Ar1Config,
    Ar1Context,
    GridSpec,
    HyperPosterior,
    hyper_posterior,
    latent_conditional,
    phi_to_theta,
    retrieve_prior,
    simulate_ar1,
    theta_to_phi,
)
from .spatial import (
    GridSpec3,
    HyperPosterior3,
    PcPriorSpec,
    SpatialContext,
    matern_correlation,
    matern_cov,
    spatial_hyper_posterior,
)
from .smoothing import (
    AR1_SWEEP_LOG_TAU,
    SPATIAL_SWEEP_LOG_TAU,
    SmoothedHyperField,
    SmoothingInput,
    normalize_modes,
    rw2_smooth,
    spatial_smooth,
)
from .refit import (
    MixturePosterior,
    MixturePredictive,
    PredictionTarget,
    mixture_predictive,
    refit_gh_mixture,
    refit_point_mass,
)
from .scoring import (
    ScoreReport,
    cpo_region,
    emlcpo,
    emlkl,
    grid_posterior_moments,
    kl_region,
)
from .simulate import (
    Ar1ExperimentDesign,
    SpatialFieldDesign,
    nonstationary_matern_cov,
    phi_schedule,
    simulate_ar1_experiment,
    simulate_spatial_field,
)
from .config import ExperimentConfig, load_config, resolve_workers
from .pipeline import (
    RunPaths,
    run_experiment,
    run_fit,
    run_refit,
    run_score,
    run_simulate,
    run_smooth,
)

__all__ = [
    "__version__",
    # gaussians
    "GaussianDist",
    "GaussHermiteRule",
    "canonical_to_moment",
    "moment_to_canonical",
    "gaussian_kl",
    "gaussian_logpdf",
    "gauss_hermite_rule",
    # data / partition
    "ObservationTable",
    "Region",
    "Partition",
    "KMeansPartitioner",
    "kmeans_partition",
    "region_view",
    # per-region models
    "Ar1Config",
    "Ar1Context",
    "GridSpec",
    "HyperPosterior",
    "hyper_posterior",
    "latent_conditional",
    "phi_to_theta",
    "theta_to_phi",
    "retrieve_prior",
    "simulate_ar1",
    "GridSpec3",
    "HyperPosterior3",
    "PcPriorSpec",
    "SpatialContext",
    "matern_correlation",
    "matern_cov",
    "spatial_hyper_posterior",
    # smoothing
    "AR1_SWEEP_LOG_TAU",
    "SPATIAL_SWEEP_LOG_TAU",
    "SmoothingInput",
    "SmoothedHyperField",
    "normalize_modes",
    "rw2_smooth",
    "spatial_smooth",
    # refit
    "MixturePosterior",
    "MixturePredictive",
    "PredictionTarget",
    "mixture_predictive",
    "refit_gh_mixture",
    "refit_point_mass",
    # scoring
    "ScoreReport",
    "kl_region",
    "emlkl",
    "cpo_region",
    "emlcpo",
    "grid_posterior_moments",
    # simulation designs
    "Ar1ExperimentDesign",
    "SpatialFieldDesign",
    "phi_schedule",
    "nonstationary_matern_cov",
    "simulate_ar1_experiment",
    "simulate_spatial_field",
    # configuration and pipeline
    "ExperimentConfig",
    "load_config",
    "resolve_workers",
    "RunPaths",
    "run_simulate",
    "run_fit",
    "run_smooth",
    "run_refit",
    "run_score",
    "run_experiment",
]
