"""Slide-level voting, classification scores, and micro-averaged ROC."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, InputError


def slide_vote(bag_predictions) -> int:
    """Most common bag label; ties resolve to the smallest class index."""
    votes = list(bag_predictions)
    if not votes:
        raise ContractError("cannot vote over zero bags")
    counts = Counter(int(v) for v in votes)
    best = max(counts.values())
    return min(label for label, c in counts.items() if c == best)


@dataclass
class ClassificationReport:
    accuracy: float
    f1_macro: float
    f1_weighted: float
    confusion: np.ndarray  # (C, C), rows are truth
    roc_fpr: np.ndarray
    roc_tpr: np.ndarray
    auc: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "f1_weighted": self.f1_weighted,
            "confusion": self.confusion.tolist(),
            "auc": self.auc,
        }


def confusion_matrix(truth, predicted, num_classes: int) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise InputError(f"shape mismatch {truth.shape} vs {predicted.shape}")
    if truth.min() < 0 or truth.max() >= num_classes:
        raise InputError("truth label outside [0, num_classes)")
    if predicted.min() < 0 or predicted.max() >= num_classes:
        raise InputError("predicted label outside [0, num_classes)")
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(mat, (truth, predicted), 1)
    return mat


def _f1_scores(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class F1 and true-class support from a confusion matrix."""
    tp = np.diag(confusion).astype(np.float64)
    support = confusion.sum(axis=1).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    denom = support + predicted
    f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1e-300), 0.0)
    return f1, support


def micro_roc(scores: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """One-vs-rest flattened ROC with trapezoid AUC.

    Flattens the (n, C) score matrix and a one-hot truth matrix into single
    vectors, then sweeps thresholds over the distinct scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    n, c = scores.shape
    onehot = np.zeros((n, c), dtype=bool)
    onehot[np.arange(n), truth] = True
    flat_scores = scores.ravel()
    flat_truth = onehot.ravel()
    order = np.argsort(-flat_scores, kind="stable")
    sorted_truth = flat_truth[order]
    sorted_scores = flat_scores[order]
    tps = np.cumsum(sorted_truth)
    fps = np.cumsum(~sorted_truth)
    # keep only the last point of each tied-score run so ties move diagonally
    last_of_run = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tps = tps[last_of_run]
    fps = fps[last_of_run]
    total_pos = int(flat_truth.sum())
    total_neg = flat_truth.size - total_pos
    if total_pos == 0 or total_neg == 0:
        raise InputError("micro ROC needs both positive and negative entries")
    tpr = np.r_[0.0, tps / total_pos]
    fpr = np.r_[0.0, fps / total_neg]
    auc = float(np.trapezoid(tpr, fpr))
    return fpr, tpr, auc


def classification_report(
    slide_predicted,
    slide_truth,
    slide_scores=None,
    num_classes: int | None = None,
) -> ClassificationReport:
    """Accuracy, macro and weighted F1, confusion matrix, and micro ROC.

    `slide_scores` holds one softmax-scale score row per slide (the mean over
    its bags); without it the ROC fields are empty and AUC is NaN.
    """
    predicted = np.asarray(slide_predicted, dtype=np.int64)
    truth = np.asarray(slide_truth, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(predicted.max(), truth.max())) + 1
    mat = confusion_matrix(truth, predicted, num_classes)
    accuracy = float(np.trace(mat)) / float(mat.sum())
    f1, support = _f1_scores(mat)
    seen = support > 0
    f1_macro = float(f1[seen].mean()) if seen.any() else 0.0
    f1_weighted = float((f1 * support).sum() / support.sum())
    if slide_scores is not None:
        scores = np.asarray(slide_scores, dtype=np.float64)
        if scores.shape != (truth.size, num_classes):
            raise InputError(
                f"score matrix {scores.shape} does not match "
                f"({truth.size}, {num_classes})"
            )
        fpr, tpr, auc = micro_roc(scores, truth)
    else:
        fpr, tpr, auc = np.array([]), np.array([]), float("nan")
    return ClassificationReport(
        accuracy=accuracy,
        f1_macro=f1_macro,
        f1_weighted=f1_weighted,
        confusion=mat,
        roc_fpr=fpr,
        roc_tpr=tpr,
        auc=auc,
    )
