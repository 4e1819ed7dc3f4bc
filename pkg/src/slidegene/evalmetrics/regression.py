"""Per-gene prediction error metrics: MAE, RMSE, RRMSE."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import InputError


@dataclass
class ErrorReport:
    gene_ids: list[str]
    mae: np.ndarray
    rmse: np.ndarray
    rrmse: np.ndarray
    excluded: list[str]  # constant-truth genes with an undefined RRMSE

    def summary(self) -> dict:
        """Mean and std across genes for each metric."""
        out = {}
        for name, arr in (("mae", self.mae), ("rmse", self.rmse), ("rrmse", self.rrmse)):
            out[name] = {"mean": float(arr.mean()), "std": float(arr.std())}
        return out


def prediction_errors(pred, truth, gene_ids=None) -> ErrorReport:
    """Column-wise MAE, RMSE, and RRMSE against the mean-prediction baseline.

    RRMSE divides the squared error sum by the squared deviation of the truth
    from its own mean, so a constant predictor at the test mean scores exactly
    one. Genes with constant truth have no baseline error and are excluded
    with a warning.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
        truth = np.asarray(truth, dtype=np.float64)[:, None]
    if pred.shape != truth.shape or pred.ndim != 2:
        raise InputError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    n, g = pred.shape
    if n < 2:
        raise InputError(f"need at least 2 samples, got {n}")
    if gene_ids is None:
        gene_ids = [f"g{i}" for i in range(g)]
    if len(gene_ids) != g:
        raise InputError(f"{len(gene_ids)} gene ids for {g} columns")

    diff = pred - truth
    mae = np.abs(diff).mean(axis=0)
    sq = (diff**2).sum(axis=0)
    rmse = np.sqrt(sq / n)
    baseline = ((truth.mean(axis=0)[None, :] - truth) ** 2).sum(axis=0)
    defined = baseline > 0
    if not defined.all():
        bad = [gene_ids[i] for i in np.flatnonzero(~defined)]
        warnings.warn(
            f"excluding {len(bad)} constant-truth gene(s) from RRMSE: {bad[:5]}",
            stacklevel=2,
        )
    rrmse = np.sqrt(sq[defined] / baseline[defined])
    return ErrorReport(
        gene_ids=[gene_ids[i] for i in np.flatnonzero(defined)],
        mae=mae[defined],
        rmse=rmse[defined],
        rrmse=rrmse,
        excluded=[gene_ids[i] for i in np.flatnonzero(~defined)],
    )
