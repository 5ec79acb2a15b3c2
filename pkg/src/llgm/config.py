"""Experiment configuration.

One declarative TOML file describes an entire run; every knob has a default
so an empty file (or none at all) is a valid AR(1) experiment.  CLI flags
override config keys; unknown keys are rejected rather than ignored so
typos fail loudly.

Schema (all keys optional)::

    mode = "ar1"            # or "spatial"
    seeds = [0, 1, 2]
    out_dir = "runs"
    workers = 0             # 0 -> LLGM_THREADS env var, else all cores
    gh_order = 5
    levels = [-5.0, -1.0, 3.0, 7.0, 11.0, 15.0]   # log smoothing precisions

    [ar1]
    n_regions = 100
    series_length = 50
    tau = 2.0
    phi_offset = 0.3
    phi_amplitude = 0.67
    phi_humps = 2.0
    grid_lo = -12.0
    grid_hi = 12.0
    grid_n = 601

    [spatial]
    n_points = 5000
    n_regions = 100
    box = 50.0
    rho_base = 5.0
    rho_amplitude = 0.5
    sigma2_amplitude = 0.5
    noise_sd = 0.5
    beta = [2.0, 0.5, -0.3]
    grid_n = 15
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                           # Python < 3.11
    import tomli as tomllib

from .ar1 import GridSpec
from .exceptions import ConfigError
from .simulate import Ar1ExperimentDesign, SpatialFieldDesign
from .smoothing import AR1_SWEEP_LOG_TAU, SPATIAL_SWEEP_LOG_TAU

__all__ = ["ExperimentConfig", "load_config", "resolve_workers"]

_MODES = ("ar1", "spatial")


@dataclass
class ExperimentConfig:
    """Fully resolved settings for one experiment."""

    mode: str = "ar1"
    seeds: tuple[int, ...] = (0,)
    out_dir: Path = Path("runs")
    workers: int = 0
    gh_order: int = 5
    levels: tuple[float, ...] = ()
    ar1: Ar1ExperimentDesign = field(default_factory=Ar1ExperimentDesign)
    ar1_grid: GridSpec = field(
        default_factory=lambda: GridSpec(-12.0, 12.0, 601))
    spatial: SpatialFieldDesign = field(default_factory=SpatialFieldDesign)
    spatial_regions: int = 100
    spatial_grid_n: int = 15

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, "
                              f"got {self.mode!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        self.out_dir = Path(self.out_dir)
        if self.workers < 0:
            raise ConfigError("workers must be >= 0 (0 = auto)")
        if not 1 <= self.gh_order <= 10:
            raise ConfigError("gh_order must be in 1..10")
        if not self.levels:
            self.levels = (AR1_SWEEP_LOG_TAU if self.mode == "ar1"
                           else SPATIAL_SWEEP_LOG_TAU)
        self.levels = tuple(float(v) for v in self.levels)
        if not self.spatial_regions >= 2:
            raise ConfigError("spatial.n_regions must be at least 2")
        if not 3 <= self.spatial_grid_n <= 41:
            raise ConfigError("spatial.grid_n must be in 3..41")


def _pop_table(raw: dict, name: str) -> dict:
    table = raw.pop(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    return table


def _build_from_keys(cls, table: dict, context: str):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    try:
        return cls(**table)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {context} settings: {exc}") from exc


def load_config(path: str | Path | None = None, **overrides
                ) -> ExperimentConfig:
    """Parse a TOML config file and apply keyword overrides.

    ``overrides`` accepts any top-level key (``mode``, ``seeds``,
    ``out_dir``, ``workers``, ``gh_order``, ``levels``); a value of None
    means "not overridden".
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML in {path}: {exc}") from exc

    ar1_table = _pop_table(raw, "ar1")
    spatial_table = _pop_table(raw, "spatial")

    top = dict(raw)
    for key, value in overrides.items():
        if value is not None:
            top[key] = value
    if "seed" in top:                      # CLI convenience: one seed
        top["seeds"] = [top.pop("seed")]

    allowed = {"mode", "seeds", "out_dir", "workers", "gh_order", "levels"}
    unknown = set(top) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    grid_keys = {"grid_lo": -12.0, "grid_hi": 12.0, "grid_n": 601}
    grid_vals = {k: ar1_table.pop(k, default)
                 for k, default in grid_keys.items()}
    try:
        ar1_grid = GridSpec(grid_vals["grid_lo"], grid_vals["grid_hi"],
                            int(grid_vals["grid_n"]))
    except ValueError as exc:
        raise ConfigError(f"invalid ar1 grid: {exc}") from exc
    ar1 = _build_from_keys(Ar1ExperimentDesign, ar1_table, "[ar1]")

    spatial_regions = int(spatial_table.pop("n_regions", 100))
    spatial_grid_n = int(spatial_table.pop("grid_n", 15))
    if "beta" in spatial_table:
        spatial_table["beta"] = tuple(spatial_table["beta"])
    spatial = _build_from_keys(SpatialFieldDesign, spatial_table,
                               "[spatial]")

    return ExperimentConfig(ar1=ar1, ar1_grid=ar1_grid, spatial=spatial,
                            spatial_regions=spatial_regions,
                            spatial_grid_n=spatial_grid_n, **top)


def resolve_workers(cfg: ExperimentConfig) -> int:
    """Worker count: config value, else LLGM_THREADS, else all cores."""
    if cfg.workers > 0:
        return cfg.workers
    env = os.environ.get("LLGM_THREADS", "")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"LLGM_THREADS must be an integer, "
                              f"got {env!r}") from exc
        if n < 1:
            raise ConfigError("LLGM_THREADS must be positive")
        return n
    return os.cpu_count() or 1
