"""Two-component PCA projection of slide embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError


@dataclass
class PCAProjection:
    points: np.ndarray  # (n, dims)
    explained_variance: np.ndarray  # (dims,)
    components: np.ndarray  # (dims, D)
    mean: np.ndarray  # (D,)

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


def pca_project(embeddings, dims: int = 2) -> PCAProjection:
    """Center and project onto the top eigenvectors of the sample covariance.

    Component signs are fixed so each eigenvector's largest-magnitude entry is
    positive, making the projection deterministic across LAPACK builds.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError(f"need an (n>=2, D) matrix, got {x.shape}")
    if dims < 1 or dims > x.shape[1]:
        raise InputError(f"dims={dims} outside [1, {x.shape[1]}]")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    idx = np.argsort(eigvals)[::-1][:dims]
    components = eigvecs[:, idx].T
    for row in components:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1.0
    return PCAProjection(
        points=centered @ components.T,
        explained_variance=np.maximum(eigvals[idx], 0.0),
        components=components,
        mean=mean,
    )


def mean_projection_per_slide(
    projection: PCAProjection, slide_ids: list[str]
) -> dict[str, np.ndarray]:
    """Average the projected points of each slide's bags into one point."""
    if len(slide_ids) != projection.points.shape[0]:
        raise InputError(
            f"{len(slide_ids)} slide ids for {projection.points.shape[0]} points"
        )
    out: dict[str, np.ndarray] = {}
    ids = np.array(slide_ids)
    for sid in dict.fromkeys(slide_ids):
        out[sid] = projection.points[ids == sid].mean(axis=0)
    return out
