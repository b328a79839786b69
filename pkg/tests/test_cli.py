import json

from microfacies.cli import main


def test_cli_end_to_end(small_shapes_dir, tmp_path, capsys):
    m = str(small_shapes_dir / "manifest.csv")
    assert main(["split", "--manifest", m, "--infer-classes", "--out", str(tmp_path / "split.csv")]) == 0
    assert "total" in capsys.readouterr().out
    cfg = {"arch": "vgg16", "manifest": m, "output_dir": str(tmp_path / "run"), "class_vocabulary": "inferred",
           "split": str(tmp_path / "split.csv"), "batch_size": 16, "epochs": 2,
           "scale": {"input_side": 16, "width_multiplier": 0.0625, "blocks_per_stage": 1}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", str(tmp_path / "cfg.json")]) == 0
    ck = str(tmp_path / "run/best.ckpt")
    assert main(["eval", "--checkpoint", ck, "--manifest", m, "--infer-classes",
                 "--split", str(tmp_path / "split.csv"), "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev/metrics_validation.csv").exists()
    assert main(["predict", "--checkpoint", ck, str(small_shapes_dir / "square/square_0001.ppm"), "-k", "2"]) == 0
    out = capsys.readouterr().out
    assert "square_0001.ppm" in out
    assert main(["features", "--checkpoint", ck, "--manifest", m, "--infer-classes", "--partition", "train",
                 "--out", str(tmp_path / "f.csv"), "--maps-dir", str(tmp_path / "maps")]) == 0
    assert main(["tsne", str(tmp_path / "f.csv"), "--out", str(tmp_path / "e.csv"), "--perplexity", "5",
                 "--iterations", "300"]) == 0
    assert (tmp_path / "e.csv").read_text().startswith("id,class,x,y")
    (tmp_path / "suite.json").write_text(json.dumps([cfg, dict(cfg, epochs=0)]))
    assert main(["suite", str(tmp_path / "suite.json"), "--out", str(tmp_path / "s.csv")]) == 0
    assert "1/2 runs succeeded" in capsys.readouterr().out


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "--arch", "vgg16"]) == 0
    assert "vgg16: max relative error" in capsys.readouterr().out


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["split", "--manifest", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "s.csv")]) == 2
    assert "error" in capsys.readouterr().err
