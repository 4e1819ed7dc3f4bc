"""Majority voting, confusion/F1 scores, and micro-averaged ROC."""

import numpy as np
import pytest

from slidegene.errors import ContractError, InputError
from slidegene.evalmetrics import (
    classification_report,
    confusion_matrix,
    micro_roc,
    slide_vote,
)


# ---------------------------------------------------------------------------
# voting
# ---------------------------------------------------------------------------


def test_majority_vote():
    assert slide_vote([0, 0, 1]) == 0
    assert slide_vote([2, 2, 1]) == 2
    assert slide_vote([1]) == 1
    assert slide_vote(np.array([1, 1, 1, 0])) == 1


def test_vote_tie_resolves_to_smallest_label():
    assert slide_vote([0, 1]) == 0
    assert slide_vote([2, 0, 2, 0]) == 0
    assert slide_vote([2, 1, 2, 1]) == 1


def test_vote_over_zero_bags_rejected():
    with pytest.raises(ContractError):
        slide_vote([])


# ---------------------------------------------------------------------------
# confusion matrix and F1
# ---------------------------------------------------------------------------


def test_confusion_matrix_hand_fixture():
    truth = [0, 0, 1, 1, 2, 2, 2]
    pred = [0, 1, 1, 1, 2, 0, 2]
    mat = confusion_matrix(truth, pred, num_classes=3)
    np.testing.assert_array_equal(mat, [[1, 1, 0], [0, 2, 0], [1, 0, 2]])
    # rows sum to per-class truth counts
    np.testing.assert_array_equal(mat.sum(axis=1), [2, 2, 3])
    assert mat.sum() == 7


def test_confusion_matrix_validation():
    with pytest.raises(InputError, match="shape"):
        confusion_matrix([0, 1], [0], num_classes=2)
    with pytest.raises(InputError, match="truth"):
        confusion_matrix([0, 2], [0, 1], num_classes=2)
    with pytest.raises(InputError, match="predicted"):
        confusion_matrix([0, 1], [0, -1], num_classes=2)


def test_binary_f1_one_of_each_cell():
    # TP = FP = FN = TN = 1 for class 1 -> precision = recall = F1 = 0.5
    report = classification_report([1, 0, 1, 0], [1, 1, 0, 0])
    assert report.accuracy == 0.5
    assert report.f1_macro == pytest.approx(0.5)
    assert report.f1_weighted == pytest.approx(0.5)
    np.testing.assert_array_equal(report.confusion, [[1, 1], [1, 1]])


def test_perfect_prediction_report():
    truth = [0, 1, 2, 0, 1, 2]
    report = classification_report(truth, truth)
    assert report.accuracy == 1.0
    assert report.f1_macro == 1.0
    assert report.f1_weighted == 1.0
    np.testing.assert_array_equal(report.confusion, 2 * np.eye(3, dtype=np.int64))


def test_macro_f1_averages_seen_classes_only():
    # class 2 never occurs in the truth; one slide is predicted into it
    report = classification_report([0, 2, 1, 1], [0, 0, 1, 1], num_classes=3)
    # class 0: tp=1, support=2, predicted=1 -> f1 = 2/3
    # class 1: tp=2, support=2, predicted=2 -> f1 = 1
    assert report.f1_macro == pytest.approx((2 / 3 + 1.0) / 2)
    assert report.f1_weighted == pytest.approx((2 / 3 * 2 + 1.0 * 2) / 4)
    assert report.accuracy == 0.75


def test_num_classes_inferred_from_labels():
    report = classification_report([0, 3], [3, 0])
    assert report.confusion.shape == (4, 4)
    assert report.accuracy == 0.0


# ---------------------------------------------------------------------------
# micro ROC
# ---------------------------------------------------------------------------


def brute_force_roc(scores, truth):
    """Independent oracle: sweep every distinct score as a >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    n, c = scores.shape
    onehot = np.zeros((n, c), dtype=bool)
    onehot[np.arange(n), truth] = True
    flat = scores.ravel()
    pos = onehot.ravel()
    pts = [(0.0, 0.0)]
    for t in sorted(set(flat.tolist()), reverse=True):
        called = flat >= t
        tpr = float((called & pos).sum()) / float(pos.sum())
        fpr = float((called & ~pos).sum()) / float((~pos).sum())
        pts.append((fpr, tpr))
    fpr = np.array([p[0] for p in pts])
    tpr = np.array([p[1] for p in pts])
    return fpr, tpr, float(np.trapezoid(tpr, fpr))


def test_micro_roc_matches_brute_force_sweep():
    rng = np.random.default_rng(0)
    for trial in range(10):
        n, c = int(rng.integers(3, 20)), int(rng.integers(2, 5))
        scores = rng.normal(size=(n, c))
        if trial % 2:
            scores = np.round(scores, 1)  # force tied scores
        truth = rng.integers(0, c, size=n)
        fpr, tpr, auc = micro_roc(scores, truth)
        efpr, etpr, eauc = brute_force_roc(scores, truth)
        np.testing.assert_allclose(fpr, efpr, atol=1e-15)
        np.testing.assert_allclose(tpr, etpr, atol=1e-15)
        assert auc == pytest.approx(eauc, abs=1e-12)


def test_micro_roc_perfect_and_inverted():
    truth = np.array([0, 1, 2])
    perfect = np.eye(3)
    _, _, auc = micro_roc(perfect, truth)
    assert auc == 1.0
    _, _, auc = micro_roc(1.0 - perfect, truth)
    assert auc == 0.0


def test_micro_roc_constant_scores_diagonal():
    scores = np.full((6, 3), 0.5)
    truth = np.array([0, 1, 2, 0, 1, 2])
    fpr, tpr, auc = micro_roc(scores, truth)
    np.testing.assert_array_equal(fpr, [0.0, 1.0])
    np.testing.assert_array_equal(tpr, [0.0, 1.0])
    assert auc == 0.5


def test_micro_roc_random_scores_near_half():
    rng = np.random.default_rng(7)
    scores = rng.uniform(size=(2000, 3))
    truth = rng.integers(0, 3, size=2000)
    _, _, auc = micro_roc(scores, truth)
    assert abs(auc - 0.5) < 0.05


def test_micro_roc_curve_is_monotone():
    rng = np.random.default_rng(9)
    scores = rng.normal(size=(50, 4))
    truth = rng.integers(0, 4, size=50)
    fpr, tpr, _ = micro_roc(scores, truth)
    assert (np.diff(fpr) >= 0).all()
    assert (np.diff(tpr) >= 0).all()
    assert fpr[0] == 0.0 and fpr[-1] == 1.0
    assert tpr[0] == 0.0 and tpr[-1] == 1.0


def test_micro_roc_needs_both_polarities():
    with pytest.raises(InputError):
        micro_roc(np.array([[0.2], [0.7]]), np.array([0, 0]))


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------


def test_report_with_scores_carries_roc():
    rng = np.random.default_rng(1)
    truth = rng.integers(0, 3, size=30)
    scores = rng.uniform(size=(30, 3))
    scores[np.arange(30), truth] += 1.0  # mostly right
    pred = scores.argmax(axis=1)
    report = classification_report(pred, truth, slide_scores=scores, num_classes=3)
    _, _, auc = micro_roc(scores, truth)
    assert report.auc == pytest.approx(auc)
    assert report.roc_fpr.size == report.roc_tpr.size > 2
    d = report.to_dict()
    assert d["accuracy"] == report.accuracy
    assert d["confusion"] == report.confusion.tolist()


def test_report_without_scores_has_nan_auc():
    report = classification_report([0, 1], [0, 1])
    assert np.isnan(report.auc)
    assert report.roc_fpr.size == 0


def test_report_score_shape_checked():
    with pytest.raises(InputError, match="score matrix"):
        classification_report([0, 1], [0, 1], slide_scores=np.zeros((2, 3)), num_classes=2)
