"""File-based experiment pipeline: simulate, fit, smooth, refit, score.

Each stage writes one artifact into ``out_dir/seed_<s>/`` and reads only
the artifacts of earlier stages, so any stage can be re-run or inspected in
isolation::

    simulate -> data.csv  (+ truth.json / truth.csv)
    fit      -> fit.json      per-region grid posteriors (+ partition.json)
    smooth   -> smooth.json   hyperparameter fields, one record per level
    refit    -> refit.csv     per-observation posterior / predictive moments
    score    -> scores.csv    EMLCPO / EMLKL / MAE per (level, variant)

Conventions shared by the artifacts:

* ``smooth.json`` always carries a pass-through record with ``level: null``
  holding the raw per-region modes and sds, so the refit stage reads
  hyperparameter values from exactly one place regardless of smoothing.
* Score rows are labeled by ``(level, variant)``.  Variant ``step1`` is the
  dense-grid posterior itself (harmonic-mean CPO, moment-matched KL);
  ``plugin`` conditions on the single smoothed mean; ``mixture`` spreads it
  over a Gauss-Hermite product rule.  Level ``none`` marks rows built from
  the unsmoothed step-one summaries.
* Floats are written with ``repr`` so re-running a stage on unchanged
  inputs reproduces its output byte for byte (manifests, which carry
  timings, are exempt).
* In ``refit.csv`` the ``obs`` column is the time index for series data and
  the row index into ``data.csv`` for spatial data.

The experiment driver loops seeds over all five stages and aggregates every
score table into ``out_dir/summary.csv``.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .ar1 import Ar1Context, GridSpec, HyperPosterior, hyper_posterior, \
    latent_conditional, theta_to_phi
from .config import ExperimentConfig, resolve_workers
from .data import ObservationTable
from .exceptions import GridBoundaryError, NumericalError
from .gaussians import canonical_to_moment
from .partition import Partition, kmeans_partition, region_view
from .refit import refit_gh_mixture
from .scoring import ScoreReport, cpo_region, grid_posterior_moments, \
    kl_region
from .simulate import simulate_ar1_experiment, simulate_spatial_field
from .smoothing import SmoothingInput, normalize_modes, rw2_smooth, \
    spatial_smooth
from .spatial import GridSpec3, HyperPosterior3, PcPriorSpec, \
    SpatialContext, spatial_hyper_posterior

__all__ = [
    "RunPaths",
    "run_simulate",
    "run_fit",
    "run_smooth",
    "run_refit",
    "run_score",
    "run_experiment",
]

SCORE_HEADER = ("level", "variant", "n_regions", "emlcpo", "emlkl", "mae")
REFIT_HEADER = ("level", "variant", "region", "obs",
                "post_mean", "post_sd", "pred_sd")


# ---------------------------------------------------------------------------
# artifact locations and small I/O helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunPaths:
    """Locations of every artifact for one seed."""

    out: Path
    seed: int

    @property
    def seed_dir(self) -> Path:
        return Path(self.out) / f"seed_{self.seed}"

    @property
    def data_csv(self) -> Path:
        return self.seed_dir / "data.csv"

    @property
    def truth_json(self) -> Path:
        return self.seed_dir / "truth.json"

    @property
    def truth_csv(self) -> Path:
        return self.seed_dir / "truth.csv"

    @property
    def partition_json(self) -> Path:
        return self.seed_dir / "partition.json"

    @property
    def fit_json(self) -> Path:
        return self.seed_dir / "fit.json"

    @property
    def smooth_json(self) -> Path:
        return self.seed_dir / "smooth.json"

    @property
    def refit_csv(self) -> Path:
        return self.seed_dir / "refit.csv"

    @property
    def scores_csv(self) -> Path:
        return self.seed_dir / "scores.csv"

    @property
    def manifest_json(self) -> Path:
        return self.seed_dir / "manifest.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(obj, path: Path) -> None:
    with Path(path).open("w") as handle:
        json.dump(obj, handle, sort_keys=True, indent=1)
        handle.write("\n")


def _load_json(path: Path) -> dict:
    with Path(path).open() as handle:
        return json.load(handle)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(path: Path, header, rows) -> None:
    with Path(path).open("w") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(_fmt(v) for v in row) + "\n")


def _record_stage(paths: RunPaths, stage: str, t0: float, files,
                  **extra) -> None:
    """Append one stage's summary to the per-seed manifest."""
    manifest = (_load_json(paths.manifest_json)
                if paths.manifest_json.exists()
                else {"seed": paths.seed, "stages": {}})
    manifest["stages"][stage] = {
        "seconds": round(time.perf_counter() - t0, 3),
        "files": {Path(p).name: _sha256(p) for p in files},
        **extra,
    }
    _dump_json(manifest, paths.manifest_json)


def _level_label(level) -> str:
    return "none" if level is None else repr(float(level))


# ---------------------------------------------------------------------------
# stage: simulate
# ---------------------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, seed: int) -> RunPaths:
    """Draw one data set (and its ground truth) into the seed directory."""
    paths = RunPaths(cfg.out_dir, seed)
    paths.seed_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if cfg.mode == "ar1":
        table, phis = simulate_ar1_experiment(cfg.ar1, seed)
        table.write_csv(paths.data_csv)
        _dump_json({"tau": cfg.ar1.tau, "phi": [float(p) for p in phis]},
                   paths.truth_json)
        files = [paths.data_csv, paths.truth_json]
    else:
        table, truth = simulate_spatial_field(cfg.spatial, seed)
        table.write_csv(paths.data_csv)
        cols = ("u", "log_rho", "log_sigma2", "signal")
        rows = zip(table.locations[:, 0], table.locations[:, 1],
                   *(truth[c] for c in cols))
        _write_rows(paths.truth_csv, ("x", "y") + cols, rows)
        files = [paths.data_csv, paths.truth_csv]
    _record_stage(paths, "simulate", t0, files)
    return paths


# ---------------------------------------------------------------------------
# stage: fit
# ---------------------------------------------------------------------------

def _fit_one_series(y: np.ndarray, tau: float, grid: GridSpec) -> dict:
    try:
        hp = hyper_posterior(y, tau, grid_spec=grid)
    except GridBoundaryError as exc:
        return {"error": str(exc)}
    return {"theta_mode": float(hp.mode), "theta_sd": float(hp.sd),
            "log_weights": hp.log_weights.tolist()}


def _fit_one_region(region, grid_n: int) -> dict:
    pc = PcPriorSpec.for_region(region)
    spec = GridSpec3.for_region(region, n=grid_n)
    try:
        hp = spatial_hyper_posterior(region, pc, spec)
    except GridBoundaryError as exc:
        return {"error": str(exc)}
    return {"axes": [a.tolist() for a in hp.axes],
            "log_weights": hp.log_weights_flat.tolist(),
            "theta_mode": hp.modes.tolist(),
            "theta_sd": hp.sds.tolist()}


def run_fit(cfg: ExperimentConfig, seed: int) -> RunPaths:
    """Fit every region's grid posterior; regions whose posterior runs into
    a grid boundary are recorded with the error and excluded downstream."""
    paths = RunPaths(cfg.out_dir, seed)
    table = ObservationTable.read_csv(paths.data_csv)
    workers = resolve_workers(cfg)
    t0 = time.perf_counter()
    files = [paths.fit_json]
    if cfg.mode == "ar1":
        series = table.series_matrix()
        grid = cfg.ar1_grid
        recs = Parallel(n_jobs=workers)(
            delayed(_fit_one_series)(series[r], cfg.ar1.tau, grid)
            for r in range(series.shape[0]))
        payload = {"mode": "ar1", "tau": cfg.ar1.tau,
                   "grid": {"lo": grid.lo, "hi": grid.hi, "n": grid.n},
                   "regions": [{"id": r, **rec}
                               for r, rec in enumerate(recs)]}
    else:
        part = kmeans_partition(table.locations, cfg.spatial_regions,
                                seed=seed)
        _dump_json({"assignments": part.assignments.tolist(),
                    "centroids": part.centroids.tolist(),
                    "region_sizes": part.region_sizes.tolist(),
                    "wcss": float(part.wcss)}, paths.partition_json)
        files.append(paths.partition_json)
        recs = Parallel(n_jobs=workers)(
            delayed(_fit_one_region)(region_view(part, r, table),
                                     cfg.spatial_grid_n)
            for r in range(part.n_regions))
        payload = {"mode": "spatial",
                   "regions": [{"id": r, **rec}
                               for r, rec in enumerate(recs)]}
    excluded = [rec["id"] for rec in payload["regions"] if "error" in rec]
    _dump_json(payload, paths.fit_json)
    _record_stage(paths, "fit", t0, files, workers=workers,
                  excluded_regions=excluded)
    return paths


def _load_partition(paths: RunPaths) -> Partition:
    raw = _load_json(paths.partition_json)
    return Partition(assignments=np.array(raw["assignments"]),
                     centroids=np.array(raw["centroids"]),
                     region_sizes=np.array(raw["region_sizes"]),
                     wcss=raw["wcss"])


# ---------------------------------------------------------------------------
# stage: smooth
# ---------------------------------------------------------------------------

def run_smooth(cfg: ExperimentConfig, seed: int) -> RunPaths:
    """Smooth the per-region modes across the domain at every level.

    The output always includes a ``level: null`` pass-through record with
    the unsmoothed modes and sds, so downstream stages read hyperparameter
    summaries from this one file no matter the smoothing level.
    """
    paths = RunPaths(cfg.out_dir, seed)
    fit = _load_json(paths.fit_json)
    ok = [rec for rec in fit["regions"] if "error" not in rec]
    excluded = [rec["id"] for rec in fit["regions"] if "error" in rec]
    if len(ok) < 3:
        raise NumericalError(
            f"only {len(ok)} fittable regions; smoothing needs at least 3")
    t0 = time.perf_counter()
    modes = np.array([rec["theta_mode"] for rec in ok])
    sds = np.array([rec["theta_sd"] for rec in ok])
    records = [{"level": None,
                "post_mean": modes.tolist(), "post_sd": sds.tolist()}]
    payload = {"mode": fit["mode"],
               "region_ids": [rec["id"] for rec in ok],
               "excluded_regions": excluded,
               "levels": records}
    if fit["mode"] == "ar1":
        # Excluded regions (if any) are simply collapsed out of the chain;
        # the walk prior then spans the surviving sequence.
        inp = SmoothingInput(modes, 1.0 / sds ** 2)
        for level in cfg.levels:
            field = rw2_smooth(inp, tau_u=float(np.exp(level)))
            records.append({"level": level,
                            "post_mean": field.post_mean.tolist(),
                            "post_sd": field.post_sd.tolist()})
    else:
        part = _load_partition(paths)
        coords = part.centroids[[rec["id"] for rec in ok]]
        diff = coords[:, None, :] - coords[None, :, :]
        range_fixed = 0.5 * float(np.sqrt((diff ** 2).sum(-1)).max())
        payload["range_fixed"] = range_fixed
        normed, info = normalize_modes(modes.T)
        for level in cfg.levels:
            post_mean = np.empty_like(modes)
            post_sd = np.empty_like(sds)
            for k in range(modes.shape[1]):
                inp = SmoothingInput(
                    normed[k], info.scale_obs_prec(1.0 / sds[:, k] ** 2, k),
                    coords=coords)
                field = spatial_smooth(inp, float(np.exp(level)),
                                       range_fixed)
                post_mean[:, k] = info.denormalize_mean(field.post_mean, k)
                post_sd[:, k] = info.denormalize_sd(field.post_sd, k)
            records.append({"level": level,
                            "post_mean": post_mean.tolist(),
                            "post_sd": post_sd.tolist()})
    _dump_json(payload, paths.smooth_json)
    _record_stage(paths, "smooth", t0, [paths.smooth_json],
                  excluded_regions=excluded)
    return paths


# ---------------------------------------------------------------------------
# stage: refit
# ---------------------------------------------------------------------------

def _site_summaries(mix, region=None):
    """Per-observation signal and predictive moments of a mixture posterior.

    For series data the latent state is the signal.  For spatial data the
    signal at observed site i is ``u_i + Z_i beta``, read off each
    component with one quadratic form per site.  Mixture variances follow
    the law of total variance; the predictive adds each component's own
    noise variance inside the mixture.
    """
    w = mix.weights
    if region is None:
        means = np.stack([d.mean for d in mix.dists])
        varis = np.stack([np.diagonal(d.mat) for d in mix.dists])
    else:
        Z = region.Z
        n = region.y.size
        means = np.empty((w.size, n))
        varis = np.empty((w.size, n))
        for i, d in enumerate(mix.dists):
            S = d.mat
            means[i] = d.mean[:n] + Z @ d.mean[n:]
            varis[i] = (np.diagonal(S)[:n]
                        + 2.0 * (S[:n, n:] * Z).sum(axis=1)
                        + np.einsum("ij,jk,ik->i", Z, S[n:, n:], Z))
    post_mean = w @ means
    post_var = w @ (varis + means ** 2) - post_mean ** 2
    pred_var = post_var + w @ mix.noise_vars
    return (post_mean, np.sqrt(np.maximum(post_var, 0.0)),
            np.sqrt(pred_var))


def _refit_region_rows(ctx, region, obs_ids, rid, level_values, gh_order):
    """All refit.csv rows for one region: every level, both variants."""
    rows = []
    for label, mu, sd in level_values:
        for variant, order in (("plugin", 1), ("mixture", gh_order)):
            mix = refit_gh_mixture(ctx, mu, sd, order=order)
            post_mean, post_sd, pred_sd = _site_summaries(mix, region)
            rows.extend(
                (label, variant, rid, obs_ids[i],
                 post_mean[i], post_sd[i], pred_sd[i])
                for i in range(len(obs_ids)))
    return rows


def run_refit(cfg: ExperimentConfig, seed: int) -> RunPaths:
    """Re-fit each region at its smoothed hyperparameter summaries.

    Hyperparameter values come exclusively from ``smooth.json`` (the
    manifest records that provenance); the data file only supplies the
    observations being conditioned on.
    """
    paths = RunPaths(cfg.out_dir, seed)
    smooth = _load_json(paths.smooth_json)
    theta_sha = _sha256(paths.smooth_json)
    table = ObservationTable.read_csv(paths.data_csv)
    region_ids = smooth["region_ids"]
    t0 = time.perf_counter()

    if smooth["mode"] == "ar1":
        series = table.series_matrix()
        contexts = {rid: Ar1Context(y=series[rid], tau=cfg.ar1.tau)
                    for rid in region_ids}
        regions = {rid: None for rid in region_ids}
        obs_ids = {rid: np.arange(series.shape[1]) for rid in region_ids}
    else:
        part = _load_partition(paths)
        regions = {rid: region_view(part, rid, table) for rid in region_ids}
        contexts = {rid: SpatialContext(region=regions[rid])
                    for rid in region_ids}
        obs_ids = {rid: part.members(rid) for rid in region_ids}

    def _levels_for(idx: int):
        out = []
        for rec in smooth["levels"]:
            mu = np.asarray(rec["post_mean"][idx], dtype=float)
            sd = np.asarray(rec["post_sd"][idx], dtype=float)
            out.append((_level_label(rec["level"]), mu, sd))
        return out

    workers = resolve_workers(cfg)
    per_region = Parallel(n_jobs=workers)(
        delayed(_refit_region_rows)(
            contexts[rid], regions[rid], obs_ids[rid], rid,
            _levels_for(idx), cfg.gh_order)
        for idx, rid in enumerate(region_ids))
    rows = [row for region_rows in per_region for row in region_rows]
    _write_rows(paths.refit_csv, REFIT_HEADER, rows)
    _record_stage(paths, "refit", t0, [paths.refit_csv], workers=workers,
                  provenance={"theta_source": paths.smooth_json.name,
                              "theta_sha256": theta_sha})
    return paths


# ---------------------------------------------------------------------------
# stage: score
# ---------------------------------------------------------------------------

def _grid_posteriors_ar1(fit: dict) -> dict:
    grid = GridSpec(fit["grid"]["lo"], fit["grid"]["hi"],
                    fit["grid"]["n"]).points()
    return {rec["id"]: HyperPosterior(
                grid=grid, log_weights=np.array(rec["log_weights"]),
                mode=rec["theta_mode"], sd=rec["theta_sd"])
            for rec in fit["regions"] if "error" not in rec}


def _grid_posteriors_spatial(fit: dict) -> dict:
    out = {}
    for rec in fit["regions"]:
        if "error" in rec:
            continue
        axes = tuple(np.array(a) for a in rec["axes"])
        shape = tuple(a.size for a in axes)
        out[rec["id"]] = HyperPosterior3(
            axes=axes,
            log_weights=np.array(rec["log_weights"]).reshape(shape),
            modes=np.array(rec["theta_mode"]),
            sds=np.array(rec["theta_sd"]))
    return out


def run_score(cfg: ExperimentConfig, seed: int) -> list[dict]:
    """Score every (level, variant) pair and write the scores table.

    Rows, in order: the step-one grid posterior itself (level ``none``),
    the unsmoothed plug-in (level ``none``), then plug-in and mixture
    variants at each smoothing level.  KL and hyperparameter MAE need the
    simulation truth and a scalar hyperparameter per region, so they are
    reported for series data only.
    """
    paths = RunPaths(cfg.out_dir, seed)
    fit = _load_json(paths.fit_json)
    smooth = _load_json(paths.smooth_json)
    region_ids = smooth["region_ids"]
    t0 = time.perf_counter()

    if fit["mode"] == "ar1":
        table = ObservationTable.read_csv(paths.data_csv)
        series = table.series_matrix()
        tau = fit["tau"]
        truth = _load_json(paths.truth_json)
        phis = np.array(truth["phi"])
        contexts = {rid: Ar1Context(y=series[rid], tau=tau)
                    for rid in region_ids}
        regions = {rid: None for rid in region_ids}
        hypers = _grid_posteriors_ar1(fit)
        exact = {rid: canonical_to_moment(
                     latent_conditional(series[rid], phis[rid], tau))
                 for rid in region_ids}
    else:
        table = ObservationTable.read_csv(paths.data_csv)
        part = _load_partition(paths)
        regions = {rid: region_view(part, rid, table) for rid in region_ids}
        contexts = {rid: SpatialContext(region=regions[rid])
                    for rid in region_ids}
        hypers = _grid_posteriors_spatial(fit)
        exact = None

    def _aggregate(level, variant, cpos, kls, theta_means):
        kl_list = None if kls is None else [float(k) for k in kls]
        report = ScoreReport.from_scores(
            float("nan") if level is None else float(level),
            variant, cpos, kl_per_region=kl_list)
        row = {"level": _level_label(level), "variant": variant,
               "n_regions": len(region_ids), "emlcpo": report.emlcpo,
               "emlkl": "" if report.emlkl is None else report.emlkl,
               "mae": ""}
        if theta_means is not None:
            err = np.abs(theta_to_phi(np.asarray(theta_means)) - phis[region_ids])
            row["mae"] = float(err.mean())
        return row

    rows = []

    # -- the step-one grid posterior, scored as-is ---------------------
    cpos = [cpo_region(contexts[rid], hypers[rid], region=rid)
            for rid in region_ids]
    if fit["mode"] == "ar1":
        kls = [kl_region(exact[rid],
                         grid_posterior_moments(contexts[rid], hypers[rid]))
               for rid in region_ids]
        modes = [hypers[rid].mode for rid in region_ids]
    else:
        kls, modes = None, None
    rows.append(_aggregate(None, "step1", cpos, kls, modes))

    # -- plug-in / mixture rows from the smoothed summaries -------------
    for rec in smooth["levels"]:
        post_mean = np.asarray(rec["post_mean"], dtype=float)
        post_sd = np.asarray(rec["post_sd"], dtype=float)
        variants = (("plugin", 1),) if rec["level"] is None \
            else (("plugin", 1), ("mixture", cfg.gh_order))
        for variant, order in variants:
            cpos, kls = [], [] if fit["mode"] == "ar1" else None
            for idx, rid in enumerate(region_ids):
                mix = refit_gh_mixture(contexts[rid], post_mean[idx],
                                       post_sd[idx], order=order)
                cpos.append(cpo_region(contexts[rid], mix, region=rid))
                if kls is not None:
                    kls.append(kl_region(exact[rid], mix))
            theta_means = (post_mean if fit["mode"] == "ar1" else None)
            rows.append(_aggregate(rec["level"], variant, cpos, kls,
                                   theta_means))

    _write_rows(paths.scores_csv, SCORE_HEADER,
                [tuple(row[c] for c in SCORE_HEADER) for row in rows])
    _record_stage(paths, "score", t0, [paths.scores_csv],
                  provenance={name: _sha256(getattr(paths, name))
                              for name in ("data_csv", "fit_json",
                                           "smooth_json")})
    return rows


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

_STAGES = (("simulate", run_simulate), ("fit", run_fit),
           ("smooth", run_smooth), ("refit", run_refit),
           ("score", run_score))


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run all stages for every seed and aggregate the score tables."""
    t0 = time.perf_counter()
    all_rows: list[dict] = []
    per_seed: dict[str, float] = {}
    for seed in cfg.seeds:
        t_seed = time.perf_counter()
        for name, stage in _STAGES:
            try:
                result = stage(cfg, seed)
            except NumericalError as exc:
                raise type(exc)(
                    f"stage '{name}' failed for seed {seed}: {exc}"
                ) from exc
        all_rows.extend({"seed": seed, **row} for row in result)
        per_seed[str(seed)] = round(time.perf_counter() - t_seed, 3)

    header = ("seed",) + SCORE_HEADER
    _write_rows(cfg.out_dir / "summary.csv", header,
                [tuple(row[c] for c in header) for row in all_rows])
    _dump_json({
        "mode": cfg.mode,
        "seeds": list(cfg.seeds),
        "levels": list(cfg.levels),
        "gh_order": cfg.gh_order,
        "versions": {"python": sys.version.split()[0],
                     "numpy": np.__version__,
                     "scipy": __import__("scipy").__version__,
                     "llgm": __version__},
        "seconds_total": round(time.perf_counter() - t0, 3),
        "seconds_per_seed": per_seed,
    }, cfg.out_dir / "manifest.json")
    return all_rows
