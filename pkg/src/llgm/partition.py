"""Partitioning of spatial locations into regions via k-means.

The clustering is deliberately self-contained rather than delegated to a
library so its tie-breaking and empty-cluster behaviour are pinned down:

* initial centroids come from k-means++ seeding driven by a caller-supplied
  seed, so a (data, seed) pair always yields the same partition;
* nearest-centroid ties go to the lowest region index;
* a cluster that loses all its members is reseeded at the data point
  currently farthest from its assigned centroid.

Only the partition itself is computed here; per-region model fitting
consumes the output through :func:`region_view`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .data import ObservationTable, Region

__all__ = ["Partition", "kmeans_partition", "region_view", "KMeansPartitioner"]


@dataclass
class Partition:
    """Result of clustering N locations into ``n_regions`` cells."""

    assignments: np.ndarray          # (N,) int, region index per location
    centroids: np.ndarray            # (n_regions, 2)
    region_sizes: np.ndarray         # (n_regions,) int
    wcss: float                      # within-cluster sum of squares
    wcss_history: list[float] = field(default_factory=list)

    @property
    def n_regions(self) -> int:
        return int(self.centroids.shape[0])

    def members(self, r: int) -> np.ndarray:
        """Indices (in input order) of the locations assigned to region r."""
        return np.flatnonzero(self.assignments == r)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (n_points, n_centroids)."""
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: subsequent centers drawn ∝ squared distance."""
    n = points.shape[0]
    centroids = np.empty((k, 2))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = _sq_distances(points, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[j] = points[idx]
        closest = np.minimum(closest, _sq_distances(points, centroids[j:j + 1])[:, 0])
    return centroids


def _assign_with_repair(points: np.ndarray,
                        centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid assignment, reviving any emptied clusters.

    An empty cluster's centroid is moved onto the data point currently
    farthest from its own centroid; stealing that point may in turn empty
    its former cluster, so the sweep repeats (each pass retires at least
    one point, so it terminates) until every cluster has a member.
    ``centroids`` is updated in place.
    """
    k = centroids.shape[0]
    taken: set[int] = set()
    for _ in range(points.shape[0]):
        d2 = _sq_distances(points, centroids)
        assignments = d2.argmin(axis=1)   # argmin takes the lowest index on ties
        counts = np.bincount(assignments, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size == 0:
            return assignments
        gaps = d2[np.arange(points.shape[0]), assignments].copy()
        if taken:
            gaps[list(taken)] = -np.inf
        for j in empties:
            far = int(gaps.argmax())
            taken.add(far)
            gaps[far] = -np.inf
            centroids[j] = points[far]
    raise RuntimeError("empty-cluster repair failed to converge")  # pragma: no cover


def _lloyd(points: np.ndarray, centroids: np.ndarray,
           max_iter: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations from given initial centroids.

    Returns (assignments, centroids, wcss_history); the history records the
    objective after each assignment step and is non-increasing.
    """
    centroids = centroids.copy()
    k = centroids.shape[0]
    assignments = None
    history: list[float] = []
    for _ in range(max_iter):
        new_assignments = _assign_with_repair(points, centroids)
        history.append(float(
            ((points - centroids[new_assignments]) ** 2).sum()
        ))
        if assignments is not None and np.array_equal(new_assignments, assignments):
            return assignments, centroids, history
        assignments = new_assignments
        for j in range(k):
            mask = assignments == j
            if mask.any():
                centroids[j] = points[mask].mean(axis=0)
    # iteration budget exhausted: realign assignments with the last update
    assignments = _assign_with_repair(points, centroids)
    history.append(float(((points - centroids[assignments]) ** 2).sum()))
    return assignments, centroids, history


def kmeans_partition(locations: np.ndarray, n_regions: int, seed: int = 0,
                     max_iter: int = 100, n_restarts: int = 1) -> Partition:
    """Cluster ``locations`` into ``n_regions`` cells.

    With ``n_restarts > 1`` the whole procedure is repeated from fresh
    k-means++ seedings (all driven by the one generator, so still
    deterministic) and the lowest-objective run wins.
    """
    points = np.asarray(locations, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("locations must be an (n, 2) array")
    n = points.shape[0]
    if not 1 <= n_regions <= n:
        raise ValueError(f"need 1 <= n_regions <= {n}, got {n_regions}")
    n_distinct = np.unique(points, axis=0).shape[0]
    if n_regions > n_distinct:
        raise ValueError(
            f"{n_regions} regions requested but only {n_distinct} distinct locations"
        )
    if max_iter < 1 or n_restarts < 1:
        raise ValueError("max_iter and n_restarts must be positive")

    rng = np.random.default_rng(seed)
    best: tuple[np.ndarray, np.ndarray, list[float]] | None = None
    for _ in range(n_restarts):
        init = _kmeanspp_init(points, n_regions, rng)
        run = _lloyd(points, init, max_iter)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    assignments, centroids, history = best
    sizes = np.bincount(assignments, minlength=n_regions)
    return Partition(assignments=assignments, centroids=centroids,
                     region_sizes=sizes, wcss=history[-1],
                     wcss_history=history)


def region_view(partition: Partition, r: int, table: ObservationTable) -> Region:
    """Extract region ``r``'s data (with an intercept column in Z)."""
    if not 0 <= r < partition.n_regions:
        raise ValueError(f"region index {r} out of range")
    if table.locations is None:
        raise ValueError("region_view requires a spatial observation table")
    if partition.assignments.size != table.n:
        raise ValueError("partition and table disagree on the number of rows")
    idx = partition.members(r)
    if idx.size == 0:
        raise ValueError(f"region {r} is empty")
    y = table.values[idx]
    if table.covariates is not None:
        Z = np.column_stack([np.ones(idx.size), table.covariates[idx]])
    else:
        Z = np.ones((idx.size, 1))
    return Region(y=y, Z=Z, locations=table.locations[idx], id=r)


class KMeansPartitioner(BaseEstimator):
    """Estimator-style wrapper around :func:`kmeans_partition`.

    Parameters mirror the function; after :meth:`fit`, ``labels_``,
    ``cluster_centers_`` and ``partition_`` are available and
    :meth:`predict` maps new locations onto the learned regions.
    """

    def __init__(self, n_regions: int = 100, seed: int = 0,
                 max_iter: int = 100, n_restarts: int = 1):
        self.n_regions = n_regions
        self.seed = seed
        self.max_iter = max_iter
        self.n_restarts = n_restarts

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        self.partition_ = kmeans_partition(
            X, self.n_regions, seed=self.seed,
            max_iter=self.max_iter, n_restarts=self.n_restarts,
        )
        self.labels_ = self.partition_.assignments
        self.cluster_centers_ = self.partition_.centroids
        return self

    def predict(self, X):
        if not hasattr(self, "partition_"):
            raise ValueError("KMeansPartitioner must be fitted before predict")
        X = np.asarray(X, dtype=float)
        return _sq_distances(X, self.cluster_centers_).argmin(axis=1)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_
