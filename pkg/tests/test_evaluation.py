import numpy as np
import pytest

from microfacies.evaluation import confusion_matrix, format_pm, macro_stats, metrics_from_cm, topk_accuracy


def test_hand_counted_matrix():
    cm = confusion_matrix([0, 1, 1], [0, 0, 1], 2)
    np.testing.assert_array_equal(cm.counts, [[1, 0], [1, 1]])
    rep = metrics_from_cm(cm)
    assert rep.precision[0] == 0.5 and rep.recall[0] == 1.0 and rep.f1[0] == pytest.approx(2 / 3)
    assert rep.accuracy == pytest.approx(2 / 3)


def test_perfect_predictions():
    y = [0, 1, 2, 2, 1]
    cm = confusion_matrix(y, y, 3)
    assert np.trace(cm.counts) == 5 and np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    rep = metrics_from_cm(cm)
    assert rep.precision == rep.recall == rep.f1 == [1.0, 1.0, 1.0] and rep.accuracy == 1.0


def test_undefined_metrics_flagged():
    rep = metrics_from_cm(confusion_matrix([0, 1], [0, 1], 3))
    assert rep.precision[2] is None and rep.recall[2] is None and rep.f1[2] is None
    assert rep.macro()["recall"] == (1.0, 0.0)


def test_label_range_and_empty():
    with pytest.raises(ValueError):
        confusion_matrix([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        metrics_from_cm(confusion_matrix([], [], 3))


def test_random_matrix_matches_pairwise_tally(rng):
    t = rng.integers(0, 22, 500)
    p = rng.integers(0, 22, 500)
    cm = confusion_matrix(t, p, 22).counts
    for i in range(22):
        for j in range(22):
            assert cm[i, j] == sum(1 for a, b in zip(t, p) if a == i and b == j)


def test_support_weighted_recall_equals_accuracy(rng):
    cm = confusion_matrix(rng.integers(0, 5, 200), rng.integers(0, 5, 200), 5)
    rep = metrics_from_cm(cm)
    weighted = sum(r * s for r, s in zip(rep.recall, rep.support) if r is not None) / sum(rep.support)
    assert weighted == pytest.approx(rep.accuracy, abs=1e-12)


def test_topk():
    assert topk_accuracy([[0.5, 0.3, 0.2]], [2], (1, 3)) == {1: 0.0, 3: 1.0}
    with pytest.raises(ValueError):
        topk_accuracy([[0.5, 0.5]], [0], (3,))


def test_topk_oracle_and_monotone(rng):
    probs = rng.dirichlet(np.ones(22), size=500)
    y = rng.integers(0, 22, 500)
    acc = topk_accuracy(probs, y, range(1, 23))
    for k in range(1, 23):
        oracle = np.mean([y[i] in np.argsort(-probs[i], kind="stable")[:k] for i in range(500)])
        assert acc[k] == pytest.approx(oracle)
        if k > 1:
            assert acc[k] >= acc[k - 1]
    assert acc[22] == 1.0


def test_macro_stats():
    assert format_pm(macro_stats([0.9, 0.9, 0.9])) == "0.90 ± 0.00"
    assert format_pm(macro_stats([0.8, 1.0])) == "0.90 ± 0.10"
    assert macro_stats([0.8, None, 1.0]) == macro_stats([0.8, 1.0])
    with pytest.raises(ValueError):
        macro_stats([None])
