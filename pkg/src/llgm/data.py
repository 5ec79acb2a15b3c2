"""Observation tables, per-region data views, and CSV round-tripping.

Two on-disk schemas are supported, both UTF-8 with ``.`` as the decimal
separator:

* spatial: header ``x,y,value[,cov1,cov2,...]`` — one row per location;
* series (1-D): header ``region,t,value`` — one row per observation of a
  per-region time series.

Floats are written with ``repr``, so ``parse(write(table))`` reproduces the
exact same binary values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

__all__ = ["ObservationTable", "Region"]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass
class ObservationTable:
    """Flat table of observations for either pipeline mode.

    Spatial tables carry ``locations`` (and optionally ``covariates``);
    series tables carry ``region`` and ``time`` indices instead.
    """

    values: np.ndarray
    locations: np.ndarray | None = None
    covariates: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()
    region: np.ndarray | None = None
    time: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _require(self.values.ndim == 1 and self.values.size > 0,
                 "observation table needs at least one row")
        _require(np.all(np.isfinite(self.values)),
                 "missing or non-finite values in 'value' column")
        if self.locations is not None:
            self.locations = np.asarray(self.locations, dtype=float)
            _require(self.locations.shape == (self.values.size, 2),
                     "locations must be an (n, 2) array")
            _require(bool(np.all(np.isfinite(self.locations))),
                     "non-finite coordinates")
        if self.covariates is not None:
            self.covariates = np.asarray(self.covariates, dtype=float)
            _require(
                self.covariates.ndim == 2
                and self.covariates.shape[0] == self.values.size,
                "covariates must have one row per observation",
            )
            if not self.covariate_names:
                self.covariate_names = tuple(
                    f"cov{i + 1}" for i in range(self.covariates.shape[1])
                )
            _require(len(self.covariate_names) == self.covariates.shape[1],
                     "covariate_names length mismatch")
        if self.region is not None:
            self.region = np.asarray(self.region, dtype=int)
            _require(self.region.shape == self.values.shape,
                     "region column length mismatch")
        if self.time is not None:
            self.time = np.asarray(self.time, dtype=int)
            _require(self.time.shape == self.values.shape,
                     "time column length mismatch")

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def is_series(self) -> bool:
        return self.region is not None

    # ------------------------------------------------------------------
    # series helpers
    # ------------------------------------------------------------------

    def series_matrix(self) -> np.ndarray:
        """Return series data as an (R, T) matrix.

        Requires contiguous region ids 0..R-1, each with the same time
        points 0..T-1 (the simulator always writes them that way).
        """
        _require(self.is_series and self.time is not None,
                 "series_matrix requires a series table")
        regions = np.unique(self.region)
        _require(bool(np.array_equal(regions, np.arange(regions.size))),
                 "region ids must be contiguous and 0-based")
        times = np.unique(self.time)
        _require(bool(np.array_equal(times, np.arange(times.size))),
                 "time ids must be contiguous and 0-based")
        n_regions, n_time = regions.size, times.size
        _require(self.n == n_regions * n_time,
                 "series table is ragged; expected a full R x T layout")
        out = np.full((n_regions, n_time), np.nan)
        out[self.region, self.time] = self.values
        _require(bool(np.all(np.isfinite(out))), "duplicate or missing series rows")
        return out

    @classmethod
    def from_series_matrix(cls, series: np.ndarray) -> "ObservationTable":
        series = np.asarray(series, dtype=float)
        n_regions, n_time = series.shape
        region = np.repeat(np.arange(n_regions), n_time)
        time = np.tile(np.arange(n_time), n_regions)
        return cls(values=series.ravel(), region=region, time=time)

    # ------------------------------------------------------------------
    # CSV round trip
    # ------------------------------------------------------------------

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            if self.is_series:
                writer.writerow(["region", "t", "value"])
                for r, t, v in zip(self.region, self.time, self.values):
                    writer.writerow([int(r), int(t), repr(float(v))])
            else:
                header = ["x", "y", "value", *self.covariate_names]
                writer.writerow(header)
                for i in range(self.n):
                    row = [repr(float(self.locations[i, 0])),
                           repr(float(self.locations[i, 1])),
                           repr(float(self.values[i]))]
                    if self.covariates is not None:
                        row.extend(repr(float(c)) for c in self.covariates[i])
                    writer.writerow(row)

    @classmethod
    def read_csv(cls, path: str | Path) -> "ObservationTable":
        path = Path(path)
        _require(path.exists(), f"input file not found: {path}")
        with path.open(newline="") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise ConfigError(f"{path}: empty file") from None
            rows = list(reader)
        _require(len(rows) > 0, f"{path}: no data rows")
        header = [h.strip() for h in header]
        try:
            if header[:3] == ["region", "t", "value"] and len(header) == 3:
                data = np.array(rows, dtype=float)
                return cls(values=data[:, 2],
                           region=data[:, 0].astype(int),
                           time=data[:, 1].astype(int))
            if header[:3] == ["x", "y", "value"]:
                data = np.array(rows, dtype=float)
                cov = data[:, 3:] if data.shape[1] > 3 else None
                return cls(values=data[:, 2], locations=data[:, :2],
                           covariates=cov,
                           covariate_names=tuple(header[3:]))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}: non-numeric cell ({exc})") from exc
        raise ConfigError(
            f"{path}: unrecognized header {header!r}; expected "
            "'x,y,value[,cov...]' or 'region,t,value'"
        )


@dataclass
class Region:
    """Data for one partition cell: responses, design matrix, locations.

    The design matrix ``Z`` includes a leading intercept column on top of
    whatever covariates the table supplies, so ``p = 1 + n_covariates``.
    """

    y: np.ndarray
    Z: np.ndarray
    locations: np.ndarray
    id: int = 0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        self.locations = np.asarray(self.locations, dtype=float)
        n = self.y.size
        if self.Z.ndim != 2 or self.Z.shape[0] != n:
            raise ValueError("Z must have one row per observation")
        if self.locations.shape != (n, 2):
            raise ValueError("locations must be (n, 2)")
        if n < self.Z.shape[1]:
            raise ValueError(
                f"region {self.id}: {n} observations cannot support "
                f"{self.Z.shape[1]} design columns"
            )
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.Z))
                and np.all(np.isfinite(self.locations))):
            raise ValueError(f"region {self.id}: non-finite entries")
        uniq = np.unique(self.locations, axis=0)
        if uniq.shape[0] != n:
            raise ValueError(f"region {self.id}: duplicate locations")

    @property
    def n_obs(self) -> int:
        return int(self.y.size)

    @property
    def max_distance(self) -> float:
        """Largest pairwise distance among the region's locations."""
        diff = self.locations[:, None, :] - self.locations[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())
