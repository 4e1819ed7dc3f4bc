"""Pearson and Spearman correlation with t-based significance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputError, UndefinedCorrelationError
from .multitest import benjamini_hochberg, holm_sidak
from .special import student_t_two_sided_p


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size < 3:
        raise InputError(f"{name} needs at least 3 samples, got {arr.size}")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite values")
    return arr


def _p_from_r(r: float, n: int) -> float:
    df = n - 2
    denom = 1.0 - r * r
    if denom <= 0.0:
        return 0.0
    t = abs(r) * math.sqrt(df / denom)
    return student_t_two_sided_p(t, df)


def pearson(x, y) -> tuple[float, float]:
    """Sample Pearson r and its two-sided p-value via the t transform."""
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.size != y.size:
        raise InputError(f"length mismatch: {x.size} vs {y.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return r, _p_from_r(r, x.size)


def rankdata_average(x) -> np.ndarray:
    """Ranks starting at 1; tied values share the average of their ranks."""
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    sorted_x = x[order]
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> tuple[float, float]:
    """Spearman rho: Pearson correlation of average-tied ranks."""
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.size != y.size:
        raise InputError(f"length mismatch: {x.size} vs {y.size}")
    return pearson(rankdata_average(x), rankdata_average(y))


@dataclass
class GeneEvalRow:
    gene_id: str
    pearson_r: float
    pearson_p: float
    spearman_rho: float
    spearman_p: float
    significant_hs: bool = False
    significant_bh: bool = False


def gene_correlation_table(
    pred: np.ndarray,
    truth: np.ndarray,
    gene_ids: list[str],
    alpha: float = 0.01,
) -> list[GeneEvalRow]:
    """Per-gene correlation rows with HS and BH flags at level alpha.

    Genes with zero variance in either column get r = 0, p = 1 rather than
    aborting the whole table; they can never reach significance.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise InputError(f"need matching 2-D matrices, got {pred.shape} vs {truth.shape}")
    if len(gene_ids) != pred.shape[1]:
        raise InputError(f"{len(gene_ids)} gene ids for {pred.shape[1]} columns")
    rows = []
    for g, gene in enumerate(gene_ids):
        try:
            r, rp = pearson(pred[:, g], truth[:, g])
            rho, sp = spearman(pred[:, g], truth[:, g])
        except UndefinedCorrelationError:
            r, rp, rho, sp = 0.0, 1.0, 0.0, 1.0
        rows.append(GeneEvalRow(gene, r, rp, rho, sp))
    hs = holm_sidak(np.array([row.pearson_p for row in rows]), alpha)
    bh = benjamini_hochberg(np.array([row.pearson_p for row in rows]), alpha)
    for row, h, b in zip(rows, hs, bh):
        row.significant_hs = bool(h)
        row.significant_bh = bool(b)
    return rows
