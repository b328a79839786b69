import csv

import numpy as np

from microfacies.data import read_image
from microfacies.evaluation import confusion_matrix, metrics_from_cm
from microfacies.export import (CURVE_COLUMNS, read_curves, read_features, write_confusion, write_curves,
                                write_embedding, write_feature_maps, write_features, write_metrics)
from microfacies.layers import conv2d_forward


def test_curves_row_count_and_blank_test_columns(tmp_path):
    rows = [{"epoch": e, "train_loss": 1.0 / e, "train_acc": 0.5, "val_loss": 0.7, "val_acc": 0.6,
             "test_top1": 0.5 if e % 2 == 0 else None, "test_top3": 0.9 if e % 2 == 0 else None}
            for e in range(1, 41)]
    write_curves(rows, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert len(lines) == 41
    assert lines[0].split(",")[:7] == list(CURVE_COLUMNS)
    back = read_curves(tmp_path / "c.csv")
    assert back[0]["test_top1"] is None and back[1]["test_top1"] == 0.5 and back[2]["train_loss"] == 1 / 3


def test_normalized_cm_rows_sum_near_one(tmp_path, rng):
    # two-decimal rounding moves each cell by at most 0.005
    for trial in range(200):
        k = int(rng.integers(2, 23))
        cm = confusion_matrix(rng.integers(0, k, 400), rng.integers(0, k, 400), k)
        sums = cm.row_normalized(2).sum(axis=1)
        assert np.all(np.abs(sums - 1) <= 0.005 * k + 1e-9)
        if k <= 4:
            assert np.all(np.abs(sums - 1) <= 0.02 + 1e-9)
    write_confusion(cm, tmp_path / "raw.csv", tmp_path / "norm.csv")
    rows = list(csv.reader(open(tmp_path / "norm.csv")))
    assert all(len(c.split(".")[1]) == 2 for c in rows[1][1:])
    raw = list(csv.reader(open(tmp_path / "raw.csv")))
    assert sum(int(v) for r in raw[1:] for v in r[1:]) == 400


def test_metrics_and_embedding_exports(tmp_path):
    rep = metrics_from_cm(confusion_matrix([0, 1, 1], [0, 0, 1], 3, ["a", "b", "c"]))
    write_metrics(rep, tmp_path / "m.csv")
    text = (tmp_path / "m.csv").read_text()
    assert "macro_std" in text and "c,,,,0" in text
    write_embedding(np.array([[0.0, 1.0], [2.0, 3.0]]), ["a", "b"], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "id,class,x,y"


def test_features_roundtrip(tmp_path, rng):
    f = rng.normal(size=(3, 4))
    write_features(f, ["a", "b", "a"], tmp_path / "f.csv")
    ids, labels, back = read_features(tmp_path / "f.csv")
    assert labels == ["a", "b", "a"] and np.array_equal(back, f)


def test_feature_maps_nonconstant_on_edge_image(tmp_path, rng):
    img = np.zeros((1, 3, 16, 16))
    img[:, :, :, 8:] = 1.0
    act, _ = conv2d_forward(img, rng.normal(size=(4, 3, 3, 3)), np.zeros(4), 1, 1)
    paths = write_feature_maps(act[0], tmp_path / "maps")
    assert len(paths) == 4
    for p in paths:
        m = read_image(p)
        assert m.shape == (1, 16, 16) and m.max() > m.min()
