import numpy as np
import pytest

from microfacies.augment import (PRESETS, apply_method, apply_pipeline, build_preset, dataset_channel_mean, flip,
                                 grayscale_to_rgb, make_pipeline, resize, rotate, sample_crop_box)
from microfacies.tensor import SeededRng


def test_presets_match_table():
    assert build_preset(3, "vgg_resnet").method_ids == (1, 3, 5)
    assert build_preset(4, "vgg_resnet").method_ids == (1, 3, 4, 5)
    assert build_preset(4, "inception").method_ids == (1, 3, 5, 6)
    assert build_preset(5, "inception").method_ids == (1, 3, 4, 5, 6)
    assert build_preset(3, "vgg_resnet").side == 224 and build_preset(5, "inception").side == 299
    for bad in [(5, "vgg_resnet"), (3, "inception"), (4, "alexnet")]:
        with pytest.raises(ValueError):
            build_preset(*bad)


def test_forced_flip_is_involution(rng):
    img = rng.random((3, 5, 7))
    for axis in ("horizontal", "vertical"):
        once = apply_method(img, 1, {"force": axis})
        assert not np.array_equal(once, img)
        assert np.array_equal(apply_method(once, 1, {"force": axis}), img)


def test_crop_ratios_within_bounds():
    r = SeededRng(0, "crop")
    ratios = [h * w / (50 * 70) for _, _, h, w in (sample_crop_box(50, 70, r) for _ in range(10_000))]
    assert min(ratios) >= 0.05 and max(ratios) <= 1.0


def test_per_image_mean_subtraction(rng):
    out = apply_method(rng.random((3, 9, 9)), 5, {"per_image": True})
    assert np.abs(out.mean(axis=(1, 2))).max() < 1e-9


def test_color_adjust_stays_in_unit_range(rng):
    out = apply_method(rng.random((3, 8, 8)), 6, {"brightness": 0.5, "contrast": (0.5, 2.0)}, SeededRng(1))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        make_pipeline([4], 32, crop={"min_area": 0.01})
    with pytest.raises(ValueError):
        make_pipeline([2], 32, rotate={"max_degrees": 200})
    with pytest.raises(ValueError):
        make_pipeline([1, 1], 32)


def test_resize_identity_and_constant(rng):
    img = rng.random((3, 6, 6))
    assert np.array_equal(resize(img, 6), img)
    np.testing.assert_allclose(resize(np.full((3, 5, 5), 0.3), 11, 7), 0.3)


def test_rotate_zero_is_identity(rng):
    img = rng.random((3, 6, 8))
    np.testing.assert_allclose(rotate(img, 0.0), img)
    np.testing.assert_allclose(rotate(rotate(img, 90.0), -90.0)[:, 1:-1, 2:-2], img[:, 1:-1, 2:-2], atol=1e-12)


def test_eval_mode_deterministic(rng):
    p = build_preset(5, "inception").with_side(24).with_mean((0.5, 0.5, 0.5))
    img = rng.random((3, 40, 30))
    assert np.array_equal(apply_pipeline(img, p, None, "eval"), apply_pipeline(img, p, None, "eval"))


def test_train_mode_reproducible(rng):
    p = build_preset(5, "inception").with_side(24)
    img = rng.random((3, 40, 30))
    a = apply_pipeline(img, p, SeededRng(3, "img"), "train")
    b = apply_pipeline(img, p, SeededRng(3, "img"), "train")
    assert np.array_equal(a, b)


def test_output_shape_fuzz():
    r = np.random.default_rng(0)
    for i in range(1000):
        fam, n = list(PRESETS)[i % 4]
        p = build_preset(n, fam).with_side(12)
        h, w = r.integers(1, 30, size=2)
        c = 1 if i % 3 == 0 else 3
        out = apply_pipeline(r.random((c, h, w)), p, SeededRng(i), "train" if i % 2 else "eval")
        assert out.shape == (3, 12, 12)


def test_grayscale_to_rgb():
    g = np.arange(6, dtype=float).reshape(1, 2, 3)
    rgb = grayscale_to_rgb(g)
    assert rgb.shape == (3, 2, 3) and all(np.array_equal(rgb[i], g[0]) for i in range(3))
    assert rgb.sum() == 3 * g.sum()
    assert grayscale_to_rgb(rgb) is rgb


def test_dataset_channel_mean():
    imgs = [np.zeros((3, 2, 2)), np.ones((3, 4, 4))]
    assert dataset_channel_mean(imgs) == (0.5, 0.5, 0.5)
