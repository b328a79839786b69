"""CSV and image exports: training curves, confusion matrices, embeddings, feature maps."""
from __future__ import annotations

import csv
import os

import numpy as np

from .data import write_image
from .evaluation import ConfusionMatrix

CURVE_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "test_top1", "test_top3")
# full-epoch training averages, logged next to the single-batch samples
CURVE_EXTRA_COLUMNS = ("train_loss_avg", "train_acc_avg")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def write_curves(rows, path):
    """``rows`` are dicts keyed by the curve columns; missing test values stay blank."""
    if not rows:
        raise ValueError("curve log is empty")
    _ensure_dir(path)
    cols = CURVE_COLUMNS + CURVE_EXTRA_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in cols])


def read_curves(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append({k: (None if v == "" else int(v) if k == "epoch" else float(v)) for k, v in row.items()})
    return out


def write_confusion(cm: ConfusionMatrix, raw_path, normalized_path=None):
    """Raw counts, and optionally row-normalized fractions with two decimals."""
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    _ensure_dir(raw_path)
    with open(raw_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *cm.classes])
        for name, row in zip(cm.classes, cm.counts):
            w.writerow([name, *map(int, row)])
    if normalized_path:
        _ensure_dir(normalized_path)
        with open(normalized_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred", *cm.classes])
            for name, row in zip(cm.classes, cm.row_normalized(2)):
                w.writerow([name, *(f"{v:.2f}" for v in row)])


def write_metrics(report, path):
    """Per-class precision/recall/F1 (blank when undefined) plus macro mean and std."""
    _ensure_dir(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        fmt = lambda v: "" if v is None else f"{v:.4f}"
        for i, name in enumerate(report.classes):
            w.writerow([name, fmt(report.precision[i]), fmt(report.recall[i]), fmt(report.f1[i]), report.support[i]])
        macro = report.macro()
        # population standard deviation across classes
        for stat, idx in (("macro_mean", 0), ("macro_std", 1)):
            w.writerow([stat, *(fmt(macro[m][idx]) if m in macro else "" for m in ("precision", "recall", "f1")), ""])
        w.writerow(["accuracy", f"{report.accuracy:.4f}", "", "", sum(report.support)])
        for k, v in sorted(report.topk.items()):
            w.writerow([f"top{k}_accuracy", f"{v:.4f}", "", "", ""])


def write_embedding(coords, labels, path, ids=None):
    coords = np.asarray(coords)
    if coords.size == 0:
        raise ValueError("no points to export")
    _ensure_dir(path)
    ids = range(len(coords)) if ids is None else ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "class", "x", "y"])
        for i, lab, (x, y) in zip(ids, labels, coords):
            w.writerow([i, lab, repr(float(x)), repr(float(y))])


def write_features(features, labels, path, ids=None):
    features = np.asarray(features)
    _ensure_dir(path)
    ids = range(len(features)) if ids is None else ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "class", *(f"f{j}" for j in range(features.shape[1]))])
        for i, lab, row in zip(ids, labels, features):
            w.writerow([i, lab, *(repr(float(v)) for v in row)])


def read_features(path):
    ids, labels, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ids.append(row[0])
            labels.append(row[1])
            rows.append([float(v) for v in row[2:]])
    return ids, labels, np.array(rows)


def write_feature_maps(act, directory, prefix="map"):
    """Write each channel of ``act [c, h, w]`` as an 8-bit PGM, min-max scaled per map.

    Constant maps are written as all-zero images.  Returns the file paths.
    """
    act = np.asarray(act, dtype=np.float64)
    if act.ndim != 3 or act.size == 0:
        raise ValueError(f"expected a non-empty [c, h, w] activation, got {act.shape}")
    os.makedirs(directory, exist_ok=True)
    paths = []
    for c, fmap in enumerate(act):
        lo, hi = fmap.min(), fmap.max()
        scaled = (fmap - lo) / (hi - lo) if hi > lo else np.zeros_like(fmap)
        path = os.path.join(directory, f"{prefix}_{c:03d}.pgm")
        write_image(path, scaled[None])
        paths.append(path)
    return paths
