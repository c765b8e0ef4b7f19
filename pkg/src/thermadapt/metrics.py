"""Evaluation artifacts: confusion matrix, precision/recall/F1, ROC/AUC, PR/AP.

Curves come from a one-vs-rest sweep over all distinct score thresholds;
areas use the trapezoid rule (ROC) and step interpolation (PR). No
smoothing, so results are exactly reproducible and checkable against a
brute-force sweep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .model import CLASS_NAMES, NUM_CLASSES

logger = logging.getLogger(__name__)


@dataclass
class RocCurve:
    """False/true positive rates from (0,0) to (1,1), plus trapezoid area."""

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


@dataclass
class PrCurve:
    """(recall, precision) sweep points and the step-interpolated area."""

    recall: np.ndarray
    precision: np.ndarray
    ap: float


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_roc: List[Optional[RocCurve]] = field(default_factory=list)
    micro_roc: Optional[RocCurve] = None
    per_class_pr: List[Optional[PrCurve]] = field(default_factory=list)
    class_names: Tuple[str, ...] = CLASS_NAMES

    @property
    def per_class_auc(self) -> List[Optional[float]]:
        return [c.auc if c else None for c in self.per_class_roc]

    @property
    def micro_auc(self) -> Optional[float]:
        return self.micro_roc.auc if self.micro_roc else None

    @property
    def per_class_ap(self) -> List[Optional[float]]:
        return [c.ap if c else None for c in self.per_class_pr]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "class_names": list(self.class_names),
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class_auc": self.per_class_auc,
            "micro_auc": self.micro_auc,
            "per_class_ap": self.per_class_ap,
        }


def confusion(labels, predictions, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    p = np.asarray(predictions, dtype=np.int64).ravel()
    if y.shape != p.shape:
        raise ShapeError(f"labels ({y.size}) and predictions ({p.size}) differ in length")
    if y.size == 0:
        raise ValueError("need at least one labeled sample")
    if y.min() < 0 or y.max() >= num_classes or p.min() < 0 or p.max() >= num_classes:
        raise ValueError(f"class indices must lie in 0..{num_classes - 1}")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (y, p), 1)
    return m


def accuracy_from(matrix: np.ndarray) -> float:
    return float(np.trace(matrix) / matrix.sum())


def prf1(matrix: np.ndarray):
    """Per-class (precision, recall, f1) arrays plus unweighted macro means.

    A zero denominator yields 0 for that entry (logged), keeping sweep
    tables finite.
    """
    m = np.asarray(matrix, dtype=np.float64)
    diag = np.diag(m)
    col = m.sum(axis=0)
    row = m.sum(axis=1)
    zero_cols = int((col == 0).sum())
    zero_rows = int((row == 0).sum())
    if zero_cols or zero_rows:
        logger.debug(
            "prf1: %d never-predicted and %d absent classes score 0", zero_cols, zero_rows
        )
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0)
    return precision, recall, f1, float(precision.mean()), float(recall.mean()), float(f1.mean())


def _sweep(scores: np.ndarray, positives: np.ndarray):
    """Cumulative TP/FP at each distinct threshold, highest first."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = positives[order].astype(np.float64)
    tps = np.cumsum(y)
    fps = np.cumsum(1.0 - y)
    cut = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    return tps[cut], fps[cut]


def _trapezoid(xs: np.ndarray, ys: np.ndarray) -> float:
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) * 0.5))


def binary_roc(scores, positives) -> Optional[RocCurve]:
    """One-vs-rest ROC; None when only one class is present."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives).ravel().astype(bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    tps, fps = _sweep(scores, positives)
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return RocCurve(fpr, tpr, _trapezoid(fpr, tpr))


def binary_pr(scores, positives) -> Optional[PrCurve]:
    """One-vs-rest PR sweep; None when no positives exist."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives).ravel().astype(bool)
    n_pos = int(positives.sum())
    if n_pos == 0:
        return None
    tps, fps = _sweep(scores, positives)
    recall = tps / n_pos
    precision = tps / (tps + fps)
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return PrCurve(recall, precision, ap)


def _check_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.ndim != 2 or s.shape[0] != y.size:
        raise ShapeError(f"scores {s.shape} do not match {y.size} labels")
    return s, y


def roc_auc(scores, labels):
    """Per-class ROC curves plus the micro-average over pooled decisions.

    Returns (per_class: list of RocCurve or None, micro: RocCurve or None).
    """
    s, y = _check_scores(scores, labels)
    per_class = [binary_roc(s[:, c], y == c) for c in range(s.shape[1])]
    onehot = np.zeros_like(s, dtype=bool)
    onehot[np.arange(y.size), y] = True
    micro = binary_roc(s.ravel(), onehot.ravel())
    return per_class, micro


def pr_ap(scores, labels):
    """Per-class PR curves with step-interpolated average precision."""
    s, y = _check_scores(scores, labels)
    return [binary_pr(s[:, c], y == c) for c in range(s.shape[1])]


def compute_report(labels, predictions, scores=None, class_names=CLASS_NAMES) -> MetricsReport:
    m = confusion(labels, predictions, num_classes=len(class_names))
    p, r, f1, mp, mr, mf = prf1(m)
    report = MetricsReport(
        confusion=m,
        accuracy=accuracy_from(m),
        per_class_precision=p,
        per_class_recall=r,
        per_class_f1=f1,
        macro_precision=mp,
        macro_recall=mr,
        macro_f1=mf,
        class_names=tuple(class_names),
    )
    if scores is not None:
        report.per_class_roc, report.micro_roc = roc_auc(scores, labels)
        report.per_class_pr = pr_ap(scores, labels)
    return report


# ---------------------------------------------------------------------------
# Text exports.


def format_confusion(matrix: np.ndarray, class_names: Sequence[str] = CLASS_NAMES) -> str:
    """Delimited grid with a header row of class names."""
    lines = ["true\\pred\t" + "\t".join(class_names)]
    for name, row in zip(class_names, np.asarray(matrix)):
        lines.append(name + "\t" + "\t".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def format_curve(xs: np.ndarray, ys: np.ndarray, header: str = "x\ty") -> str:
    """Two-column delimited text."""
    lines = [header]
    for x, y in zip(np.asarray(xs).ravel(), np.asarray(ys).ravel()):
        lines.append(f"{x:.10g}\t{y:.10g}")
    return "\n".join(lines) + "\n"
