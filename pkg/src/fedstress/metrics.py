"""Binary classification metrics and ROC analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(predictions, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts at a fixed threshold; a prediction is positive when p >= threshold."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    pos = p >= threshold
    actual = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pos & actual)),
        fp=int(np.sum(pos & ~actual)),
        tn=int(np.sum(~pos & ~actual)),
        fn=int(np.sum(~pos & actual)),
    )


@dataclass(frozen=True)
class ClassificationMetrics:
    """Accuracy/precision/recall/F1 with zero-denominator cases flagged.

    ``degenerate`` names the metrics whose denominator was zero and were
    reported as 0 by convention, so reports can flag rather than silently
    zero them.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()


def classification_metrics(c: ConfusionCounts) -> ClassificationMetrics:
    if c.total == 0:
        raise ValueError("no evaluated samples")
    degenerate = []
    accuracy = (c.tp + c.tn) / c.total
    if c.tp + c.fp == 0:
        precision = 0.0
        degenerate.append("precision")
    else:
        precision = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall = 0.0
        degenerate.append("recall")
    else:
        recall = c.tp / (c.tp + c.fn)
    if precision + recall == 0.0:
        f1 = 0.0
        degenerate.append("f1")
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return ClassificationMetrics(accuracy, precision, recall, f1, tuple(degenerate))


@dataclass(frozen=True)
class RocCurve:
    """Operating points from (0,0) to (1,1) and the trapezoidal area."""

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self) -> np.ndarray:
        return np.column_stack([self.fpr, self.tpr])


def roc(predictions, labels) -> RocCurve:
    """ROC curve over the distinct prediction values, ties grouped.

    All samples sharing a score move together between operating points,
    so the trapezoidal area equals the Mann-Whitney statistic with ties
    counted one half.
    """
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions but {y.size} labels")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present; AUC is undefined otherwise")

    order = np.argsort(-p, kind="stable")
    y_sorted = y[order]
    p_sorted = p[order]
    # Last index of each tie group of equal scores.
    boundaries = np.flatnonzero(np.diff(p_sorted) != 0.0)
    boundaries = np.concatenate([boundaries, [p.size - 1]])
    tps = np.cumsum(y_sorted == 1)[boundaries]
    fps = np.cumsum(y_sorted == 0)[boundaries]
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, auc)
