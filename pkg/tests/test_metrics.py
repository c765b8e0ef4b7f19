"""Evaluation metrics against hand values and brute-force threshold sweeps."""

import numpy as np
import pytest

from thermadapt.errors import ShapeError
from thermadapt.metrics import (
    MetricsReport,
    accuracy_from,
    binary_pr,
    binary_roc,
    compute_report,
    confusion,
    format_confusion,
    format_curve,
    pr_ap,
    prf1,
    roc_auc,
)


# -- brute-force oracles -----------------------------------------------------
# Independent reconstruction: classify by score >= t for every distinct
# score t, count hits directly, no cumulative trick.


def brute_roc(scores, positives):
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    fpr, tpr = [0.0], [0.0]
    for t in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= t
        tpr.append(float((pred & pos).sum()) / n_pos)
        fpr.append(float((pred & ~pos).sum()) / n_neg)
    fpr, tpr = np.array(fpr), np.array(tpr)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))
    return fpr, tpr, auc


def brute_pr(scores, positives):
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    recall, precision = [], []
    for t in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= t
        tp = float((pred & pos).sum())
        recall.append(tp / n_pos)
        precision.append(tp / float(pred.sum()))
    recall, precision = np.array(recall), np.array(precision)
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return recall, precision, ap


# -- confusion, accuracy, precision/recall/f1 --------------------------------


def test_confusion_hand_case():
    m = confusion([0, 0, 1], [0, 1, 1], num_classes=2)
    np.testing.assert_array_equal(m, [[1, 1], [0, 1]])
    assert accuracy_from(m) == pytest.approx(2.0 / 3.0)


def test_confusion_validation():
    with pytest.raises(ShapeError):
        confusion([0, 1], [0], num_classes=2)
    with pytest.raises(ValueError):
        confusion([], [], num_classes=2)
    with pytest.raises(ValueError):
        confusion([0, 2], [0, 1], num_classes=2)


def test_prf1_hand_case():
    p, r, f1, mp, mr, mf = prf1(np.array([[8, 2], [1, 9]]))
    assert p[0] == pytest.approx(8.0 / 9.0)
    assert r[0] == pytest.approx(0.8)
    assert p[1] == pytest.approx(9.0 / 11.0)
    assert r[1] == pytest.approx(0.9)
    assert f1[0] == pytest.approx(2 * (8 / 9) * 0.8 / ((8 / 9) + 0.8))
    assert mp == pytest.approx((8 / 9 + 9 / 11) / 2)


def test_prf1_zero_denominators_score_zero():
    # class 1 never predicted and never present
    p, r, f1, mp, mr, mf = prf1(np.array([[5, 0], [0, 0]]))
    assert p[1] == 0.0 and r[1] == 0.0 and f1[1] == 0.0
    assert p[0] == 1.0 and r[0] == 1.0 and f1[0] == 1.0


def test_perfect_predictions_score_one():
    y = np.array([0, 1, 2, 3, 4, 5, 6, 7] * 3)
    report = compute_report(y, y)
    assert report.accuracy == 1.0
    assert report.macro_f1 == 1.0
    np.testing.assert_array_equal(report.per_class_precision, np.ones(8))


def test_report_order_independence():
    rng = np.random.default_rng(30)
    y = rng.integers(0, 8, size=100)
    pred = rng.integers(0, 8, size=100)
    perm = rng.permutation(100)
    a = compute_report(y, pred)
    b = compute_report(y[perm], pred[perm])
    np.testing.assert_array_equal(a.confusion, b.confusion)
    assert a.macro_f1 == b.macro_f1


# -- ROC ----------------------------------------------------------------------


def test_roc_perfect_and_inverted():
    pos = np.array([1, 1, 0, 0], dtype=bool)
    assert binary_roc([0.9, 0.8, 0.2, 0.1], pos).auc == 1.0
    assert binary_roc([0.1, 0.2, 0.8, 0.9], pos).auc == 0.0


def test_roc_single_class_returns_none():
    assert binary_roc([0.3, 0.5], [True, True]) is None
    assert binary_roc([0.3, 0.5], [False, False]) is None


def test_roc_all_equal_scores_is_diagonal():
    curve = binary_roc([0.4] * 6, [1, 0, 1, 0, 0, 1])
    np.testing.assert_array_equal(curve.fpr, [0.0, 1.0])
    np.testing.assert_array_equal(curve.tpr, [0.0, 1.0])
    assert curve.auc == 0.5


def test_roc_matches_brute_force_on_small_instances():
    rng = np.random.default_rng(31)
    for trial in range(50):
        n = int(rng.integers(2, 51))
        pos = rng.random(n) < rng.uniform(0.2, 0.8)
        if pos.all() or not pos.any():
            continue
        # duplicated scores exercise the distinct-threshold grouping
        scores = np.round(rng.random(n), 2)
        curve = binary_roc(scores, pos)
        fpr, tpr, auc = brute_roc(scores, pos)
        np.testing.assert_array_equal(curve.fpr, fpr)
        np.testing.assert_array_equal(curve.tpr, tpr)
        assert curve.auc == pytest.approx(auc, abs=1e-12)


def test_roc_random_scores_near_half():
    rng = np.random.default_rng(32)
    scores = rng.random(2000)
    pos = rng.random(2000) < 0.5
    assert abs(binary_roc(scores, pos).auc - 0.5) < 0.05


def test_roc_invariant_under_monotone_transforms():
    rng = np.random.default_rng(33)
    scores = np.round(rng.random(200), 2)
    pos = rng.random(200) < 0.4
    base = binary_roc(scores, pos).auc
    assert binary_roc(2.0 * scores + 1.0, pos).auc == base
    assert binary_roc(np.exp(scores), pos).auc == base


# -- PR -----------------------------------------------------------------------


def test_pr_matches_brute_force_on_small_instances():
    rng = np.random.default_rng(34)
    for trial in range(50):
        n = int(rng.integers(2, 51))
        pos = rng.random(n) < rng.uniform(0.2, 0.8)
        if not pos.any():
            continue
        scores = np.round(rng.random(n), 2)
        curve = binary_pr(scores, pos)
        recall, precision, ap = brute_pr(scores, pos)
        np.testing.assert_array_equal(curve.recall, recall)
        np.testing.assert_array_equal(curve.precision, precision)
        assert curve.ap == pytest.approx(ap, abs=1e-12)


def test_pr_all_equal_scores_gives_prevalence():
    curve = binary_pr([0.7] * 8, [1, 0, 0, 1, 0, 0, 0, 0])
    assert curve.ap == 0.25
    assert binary_pr([0.7, 0.7], [False, False]) is None


def test_pr_perfect_ranking_gives_one():
    assert binary_pr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).ap == 1.0


# -- multiclass wrappers -------------------------------------------------------


def test_roc_auc_micro_pools_all_decisions():
    rng = np.random.default_rng(35)
    y = rng.integers(0, 4, size=40)
    scores = rng.random((40, 4))
    per_class, micro = roc_auc(scores, y)
    onehot = np.zeros((40, 4), dtype=bool)
    onehot[np.arange(40), y] = True
    fpr, tpr, auc = brute_roc(scores.ravel(), onehot.ravel())
    np.testing.assert_array_equal(micro.fpr, fpr)
    assert micro.auc == pytest.approx(auc, abs=1e-12)
    for c in range(4):
        ref = brute_roc(scores[:, c], y == c)[2]
        assert per_class[c].auc == pytest.approx(ref, abs=1e-12)


def test_roc_auc_handles_absent_class():
    y = np.array([0, 0, 1, 1])
    scores = np.random.default_rng(36).random((4, 3))
    per_class, micro = roc_auc(scores, y)
    assert per_class[2] is None
    assert micro is not None


def test_score_shape_validation():
    with pytest.raises(ShapeError):
        roc_auc(np.zeros((3, 2)), [0, 1])
    with pytest.raises(ShapeError):
        pr_ap(np.zeros(3), [0, 1, 0])


def test_compute_report_attaches_curves():
    rng = np.random.default_rng(37)
    y = rng.integers(0, 8, size=64)
    scores = rng.random((64, 8))
    report = compute_report(y, scores.argmax(axis=1), scores=scores)
    assert isinstance(report, MetricsReport)
    assert len(report.per_class_roc) == 8
    assert report.micro_auc is not None
    d = report.to_dict()
    assert set(d) >= {"accuracy", "confusion", "per_class_auc", "micro_auc", "per_class_ap"}


# -- text formatting -----------------------------------------------------------


def test_format_confusion_layout():
    text = format_confusion(np.array([[1, 2], [3, 4]]), class_names=("A", "B"))
    lines = text.strip().split("\n")
    assert lines[0] == "true\\pred\tA\tB"
    assert lines[1] == "A\t1\t2"
    assert lines[2] == "B\t3\t4"


def test_format_curve_round_trips_values():
    xs = np.array([0.0, 0.5, 1.0])
    ys = np.array([0.0, 0.75, 1.0])
    text = format_curve(xs, ys, header="fpr\ttpr")
    rows = [line.split("\t") for line in text.strip().split("\n")[1:]]
    back = np.array([[float(a), float(b)] for a, b in rows])
    np.testing.assert_array_equal(back[:, 0], xs)
    np.testing.assert_array_equal(back[:, 1], ys)
