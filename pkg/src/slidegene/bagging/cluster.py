"""Spatial k-means over tile coordinates and magnitude-based cluster ordering."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .mask import TileCoord

MAX_ITERATIONS = 300


@dataclass
class ClusterAssignment:
    centers: np.ndarray  # (k, 2) float
    membership: np.ndarray  # (n_tiles,) int, tile index -> cluster id
    sorted_order: np.ndarray  # (k,) permutation of cluster ids
    tiles: list[TileCoord]
    objective_trace: list[float]

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.membership == cluster)


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centers by squared-distance sampling."""
    n = points.shape[0]
    centers = np.empty((k, 2), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i] = points[rng.integers(n)]
            continue
        probs = d2 / total
        centers[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def _assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, float]:
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    cost = float(d2[np.arange(len(points)), labels].sum())
    return labels, cost


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list[float]]:
    centers = _kmeans_pp_seed(points, k, rng)
    labels, cost = _assign(points, centers)
    trace = [cost]
    for _ in range(MAX_ITERATIONS):
        repaired = False
        for c in range(k):
            chosen = labels == c
            if chosen.any():
                centers[c] = points[chosen].mean(axis=0)
            else:
                # relocate an empty cluster's center to the point currently worst
                # served; its own distance drops to zero, so cost cannot rise
                d2 = ((points - centers[labels]) ** 2).sum(axis=1)
                far = int(d2.argmax())
                centers[c] = points[far]
                labels[far] = c
                repaired = True
        new_labels, new_cost = _assign(points, centers)
        trace.append(new_cost)
        if not repaired and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return centers, labels, trace


def cluster_tiles(coords: list[TileCoord], k: int = 49, seed=0) -> ClusterAssignment:
    """Group tile coordinates into exactly k non-empty spatial clusters.

    Slides with fewer than k tiles are padded by resampling tiles with
    replacement (duplicate coordinates allowed, with a warning) so every
    cluster can own at least one tile.
    """
    if not coords:
        raise InputError("cannot cluster an empty tile list")
    rng = np.random.default_rng(seed)
    tiles = list(coords)
    if len(tiles) < k:
        warnings.warn(
            f"slide has {len(tiles)} tiles for k={k}; padding by sampling with replacement",
            stacklevel=2,
        )
        extra = rng.integers(len(tiles), size=k - len(tiles))
        tiles = tiles + [tiles[i] for i in extra]
    points = np.array([[t.row, t.col] for t in tiles], dtype=np.float64)

    distinct = np.unique(points, axis=0)
    if distinct.shape[0] <= k:
        # degenerate slide: give each distinct coordinate its own cluster and
        # spread duplicates round-robin over the remaining cluster slots
        centers = np.empty((k, 2), dtype=np.float64)
        membership = np.empty(len(tiles), dtype=np.int64)
        buckets: dict[tuple, list[int]] = {}
        for i, p in enumerate(points):
            buckets.setdefault((p[0], p[1]), []).append(i)
        cluster = 0
        for key in sorted(buckets):
            idxs = buckets[key]
            centers[cluster] = key
            membership[idxs[0]] = cluster
            cluster += 1
        # padding above guarantees len(tiles) >= k, so duplicates can fill
        # every remaining slot; leftovers rejoin their own coordinate's cluster
        spare = [i for key in sorted(buckets) for i in buckets[key][1:]]
        for i in spare:
            if cluster < k:
                centers[cluster] = points[i]
                membership[i] = cluster
                cluster += 1
            else:
                membership[i] = int(((centers - points[i]) ** 2).sum(axis=1).argmin())
        labels = membership
        trace = [float(((points - centers[labels]) ** 2).sum())]
        return ClusterAssignment(centers, labels, sort_clusters(centers), list(tiles), trace)

    centers, labels, trace = _lloyd(points, k, rng)
    return ClusterAssignment(centers, labels, sort_clusters(centers), list(tiles), trace)


def sort_clusters(centers: np.ndarray, origin: str = "zero") -> np.ndarray:
    """Cluster order by ascending center magnitude, ties by (row, col).

    `origin` picks the reference point for the magnitude: "zero" measures from
    the image origin, "centroid" from the mean of the centers.
    """
    centers = np.asarray(centers, dtype=np.float64)
    ref = centers.mean(axis=0) if origin == "centroid" else np.zeros(2)
    shifted = centers - ref
    norms = np.sqrt((shifted**2).sum(axis=1))
    keys = list(zip(norms, centers[:, 0], centers[:, 1], range(len(centers))))
    return np.array([idx for _, _, _, idx in sorted(keys)], dtype=np.int64)
