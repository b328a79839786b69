"""Confusion matrices, per-class metrics, top-k accuracy and macro statistics.

Metrics that would divide by zero are reported as ``None`` (undefined) and
are left out of macro averages.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import topk_indices


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[true, pred]
    classes: list = field(default_factory=list)

    @property
    def k(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def row_normalized(self, decimals=2):
        """Each cell divided by its row total, rounded; empty rows stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        frac = np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)
        return np.round(frac, decimals)


def confusion_matrix(true_labels, pred_labels, k, classes=None) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(pred_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"label lists differ in length: {t.size} vs {p.size}")
    for name, v in (("true", t), ("predicted", p)):
        if v.size and (v.min() < 0 or v.max() >= k):
            raise ValueError(f"{name} labels must lie in [0, {k})")
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, list(classes) if classes is not None else [str(i) for i in range(k)])


@dataclass
class MetricsReport:
    precision: list
    recall: list
    f1: list
    support: list
    accuracy: float
    classes: list = field(default_factory=list)
    topk: dict = field(default_factory=dict)

    def macro(self):
        return {name: macro_stats(getattr(self, name)) for name in ("precision", "recall", "f1")
                if any(v is not None for v in getattr(self, name))}


def _ratio(a, b):
    return None if b == 0 else a / b


def metrics_from_cm(cm: ConfusionMatrix) -> MetricsReport:
    """One-vs-rest precision TP/(TP+FP), recall TP/(TP+FN), F1 = 2PR/(P+R)."""
    c = np.asarray(cm.counts)
    if c.size == 0 or c.sum() == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    actual = c.sum(axis=1)
    precision, recall, f1 = [], [], []
    for i in range(c.shape[0]):
        p = _ratio(int(tp[i]), int(predicted[i]))
        r = _ratio(int(tp[i]), int(actual[i]))
        precision.append(p)
        recall.append(r)
        if p is None or r is None:
            f1.append(None)
        else:
            f1.append(_ratio(2 * p * r, p + r) if p + r > 0 else 0.0)
    return MetricsReport(precision, recall, f1, [int(a) for a in actual],
                         float(np.trace(c) / c.sum()), list(cm.classes))


def topk_accuracy(probs, labels, k_values=(1, 3)):
    """Fraction of rows whose label is among the ``k`` highest probabilities."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, classes = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got {labels.shape}")
    out = {}
    for k in k_values:
        if not 1 <= k <= classes:
            raise ValueError(f"k={k} outside [1, {classes}]")
        hits = sum(int(labels[i] in topk_indices(probs[i], k)) for i in range(n))
        out[k] = hits / n if n else 0.0
    return out


def macro_stats(values):
    """Mean and population standard deviation over the defined entries."""
    v = np.array([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        raise ValueError("no defined values to summarize")
    return float(v.mean()), float(v.std())


def format_pm(mean_std):
    return f"{mean_std[0]:.2f} ± {mean_std[1]:.2f}"
