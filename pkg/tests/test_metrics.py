import numpy as np
import pytest

from fedstress.errors import DataError
from fedstress.metrics import (ConfusionCounts, classification_metrics, confusion,
                               roc)


def mann_whitney_auc(predictions, labels):
    """Brute-force pairwise ranking statistic; ties count one half."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels)
    pos = p[y == 1]
    neg = p[y == 0]
    wins = 0.0
    for a in pos:
        wins += np.sum(a > neg) + 0.5 * np.sum(a == neg)
    return wins / (len(pos) * len(neg))


# -- confusion -----------------------------------------------------------------


def test_perfect_predictions():
    c = confusion([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 0, 2, 0)


def test_always_positive_predictor_on_balanced_data():
    preds = np.full(100, 0.99)
    labels = np.array([1, 0] * 50)
    c = confusion(preds, labels)
    assert (c.tp, c.fp, c.tn, c.fn) == (50, 50, 0, 0)


def test_threshold_tie_counts_as_positive():
    c = confusion([0.6, 0.4, 0.5], [1, 0, 0], threshold=0.5)
    assert (c.tp, c.tn, c.fp, c.fn) == (1, 1, 1, 0)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="2 predictions but 3 labels"):
        confusion([0.5, 0.5], [1, 0, 1])


def test_nonbinary_labels_rejected():
    with pytest.raises(ValueError, match="binary"):
        confusion([0.5], [2])


def test_total_adds_up():
    c = confusion(np.random.default_rng(0).random(37),
                  np.random.default_rng(1).integers(0, 2, 37))
    assert c.total == 37


# -- headline metrics -------------------------------------------------------------


def test_metric_formulas():
    m = classification_metrics(ConfusionCounts(tp=3, fp=1, tn=4, fn=2))
    assert m.accuracy == pytest.approx(0.7)
    assert m.precision == pytest.approx(0.75)
    assert m.recall == pytest.approx(0.6)
    assert m.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)
    assert m.degenerate == ()


def test_perfect_counts_give_ones():
    m = classification_metrics(ConfusionCounts(tp=5, fp=0, tn=7, fn=0))
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)


def test_zero_denominators_flagged_not_silent():
    m = classification_metrics(ConfusionCounts(tp=0, fp=0, tn=5, fn=3))
    assert m.recall == 0.0 and m.f1 == 0.0
    assert "precision" in m.degenerate and "f1" in m.degenerate


def test_empty_counts_rejected():
    with pytest.raises(ValueError):
        classification_metrics(ConfusionCounts(0, 0, 0, 0))


def test_metrics_invariant_under_monotone_transform():
    rng = np.random.default_rng(2)
    p = rng.random(200)
    y = rng.integers(0, 2, 200)
    base = confusion(p, y, threshold=0.5)
    squeezed = confusion(np.exp(p), y, threshold=np.exp(0.5))
    assert base == squeezed
    assert roc(p, y).auc == pytest.approx(roc(np.exp(p), y).auc, abs=1e-12)


# -- ROC ---------------------------------------------------------------------------


def test_perfectly_ranked_auc_is_one():
    curve = roc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert curve.auc == 1.0


def test_all_equal_scores_collapse_to_diagonal():
    curve = roc(np.full(10, 0.7), [1, 0] * 5)
    assert np.array_equal(curve.points(), [[0.0, 0.0], [1.0, 1.0]])
    assert curve.auc == 0.5


def test_null_ranking_auc_near_half():
    rng = np.random.default_rng(3)
    p = rng.random(10_000)
    y = rng.integers(0, 2, 10_000)
    assert abs(roc(p, y).auc - 0.5) < 0.03


def test_single_class_is_an_error():
    with pytest.raises(DataError, match="both classes"):
        roc([0.1, 0.9], [1, 1])


def test_curve_endpoints_and_monotonicity():
    rng = np.random.default_rng(4)
    p = np.round(rng.random(300), 2)  # force plenty of ties
    y = rng.integers(0, 2, 300)
    curve = roc(p, y)
    assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
    assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(curve.fpr) >= 0)
    assert np.all(np.diff(curve.tpr) >= 0)


def test_auc_equals_pairwise_statistic():
    rng = np.random.default_rng(5)
    for trial in range(100):
        n = int(rng.integers(10, 500))
        # Mix continuous and heavily tied score patterns.
        if trial % 3 == 0:
            p = np.round(rng.random(n), 1)
        else:
            p = rng.random(n)
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        assert roc(p, y).auc == pytest.approx(mann_whitney_auc(p, y), abs=1e-9)
