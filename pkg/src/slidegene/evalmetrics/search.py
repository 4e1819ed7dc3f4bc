"""Leave-one-patient-out slide retrieval scored with MAP@K."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .correlation import pearson


@dataclass
class SearchSubset:
    """One embedding per slide: a single bag's class token drawn per slide."""

    embeddings: np.ndarray  # (n_slides, D)
    labels: np.ndarray  # (n_slides,) int
    patient_ids: list[str]

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.embeddings.shape[0]
        if self.labels.shape[0] != n or len(self.patient_ids) != n:
            raise InputError("embeddings, labels, and patient ids must align")


def build_search_subsets(
    embeddings: np.ndarray,
    labels: np.ndarray,
    slide_ids: list[str],
    patient_ids: list[str],
    num_subsets: int = 100,
) -> list[SearchSubset]:
    """Slice per-bag embeddings into subsets holding one bag per slide.

    Subset i takes the i-th bag of every slide (bag order as loaded), so the
    number of subsets is capped by the smallest per-slide bag count.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    per_slide: dict[str, list[int]] = {}
    for i, sid in enumerate(slide_ids):
        per_slide.setdefault(sid, []).append(i)
    slides = list(per_slide)
    available = min(len(v) for v in per_slide.values())
    count = min(num_subsets, available)
    if count < num_subsets:
        warnings.warn(
            f"only {available} bags per slide; building {count} subsets",
            stacklevel=2,
        )
    patient_of = {sid: patient_ids[per_slide[sid][0]] for sid in slides}
    label_of = {sid: int(labels[per_slide[sid][0]]) for sid in slides}
    subsets = []
    for i in range(count):
        rows = [per_slide[sid][i] for sid in slides]
        subsets.append(
            SearchSubset(
                embeddings=embeddings[rows],
                labels=np.array([label_of[sid] for sid in slides]),
                patient_ids=[patient_of[sid] for sid in slides],
            )
        )
    return subsets


def pearson_distance_matrix(embeddings: np.ndarray) -> np.ndarray:
    """Pairwise 1 - pearson_r, giving distances in [0, 2]."""
    n = embeddings.shape[0]
    dist = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            r, _ = pearson(embeddings[i], embeddings[j])
            dist[i, j] = dist[j, i] = 1.0 - r
    return dist


def precision_at_k(relevant: np.ndarray, k: int) -> float:
    return float(relevant[:k].sum()) / k


def average_precision_at_k(relevant, k: int, normalize_by_relevant: bool = False) -> float:
    """AP@K = (1/K) * sum over i<=K of P@i * rel_i over a ranked relevance list.

    `normalize_by_relevant` swaps the divisor for min(K, #relevant in top K),
    the stricter form used by some retrieval benchmarks.
    """
    relevant = np.asarray(relevant, dtype=np.float64).ravel()
    if k < 1:
        raise InputError(f"K must be >= 1, got {k}")
    if relevant.size == 0:
        return 0.0
    top = relevant[:k]
    hits = np.cumsum(top)
    ranks = np.arange(1, top.size + 1, dtype=np.float64)
    weighted = float(((hits / ranks) * top).sum())
    if normalize_by_relevant:
        denom = min(k, int(top.sum()))
    else:
        # divisor clips to the candidate count so a perfect ranking over a
        # short list still scores 1
        denom = min(k, relevant.size)
    return weighted / denom if denom > 0 else 0.0


def _subset_map_at_k(
    subset: SearchSubset, k: int, normalize_by_relevant: bool
) -> float | None:
    patients = np.array(subset.patient_ids)
    if len(set(subset.patient_ids)) < 2:
        return None
    dist = pearson_distance_matrix(subset.embeddings)
    n = dist.shape[0]
    aps = []
    for q in range(n):
        candidates = np.flatnonzero(patients != patients[q])
        order = candidates[np.argsort(dist[q, candidates], kind="stable")]
        relevant = (subset.labels[order] == subset.labels[q]).astype(np.float64)
        aps.append(average_precision_at_k(relevant, k, normalize_by_relevant))
    return float(np.mean(aps))


def search_eval(
    subsets: list[SearchSubset],
    k_values: tuple[int, ...] = (5, 10),
    normalize_by_relevant: bool = False,
) -> dict[int, float]:
    """MAP@K per K: mean AP over queries within a subset, then over subsets.

    Ranking is leave-one-patient-out: a query never retrieves slides from its
    own patient. Subsets with fewer than two patients are skipped.
    """
    if not subsets:
        raise InputError("no search subsets given")
    out = {}
    for k in k_values:
        per_subset = []
        for idx, subset in enumerate(subsets):
            value = _subset_map_at_k(subset, k, normalize_by_relevant)
            if value is None:
                warnings.warn(f"subset {idx} has <2 patients; skipped", stacklevel=2)
                continue
            per_subset.append(value)
        if not per_subset:
            raise InputError("every subset was skipped (need >=2 patients)")
        out[k] = float(np.mean(per_subset))
    return out
