"""Image pre-processing: the six augmentation methods and the preset table.

Method ids:

1. random horizontal / vertical flip (p = 0.5 each)
2. random rotation, bilinear resampling
3. resize (bilinear)
4. random crop, area ratio in [0.05, 1] and aspect ratio in [3/4, 4/3],
   resized to the target side
5. per-channel mean subtraction (dataset mean, or per-image as a fallback)
6. brightness shift / contrast scaling, clamped to [0, 1]

Images are ``[3, h, w]`` arrays with values in [0, 1] until method 5 runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import SeededRng

METHOD_NAMES = {1: "flip", 2: "rotate", 3: "resize", 4: "crop", 5: "mean", 6: "color"}

DEFAULT_PARAMS = {
    1: {"horizontal": True, "vertical": True},
    2: {"max_degrees": 15.0},
    3: {},
    4: {"min_area": 0.05, "max_area": 1.0, "min_aspect": 3 / 4, "max_aspect": 4 / 3},
    5: {"per_image": False},
    6: {"brightness": 0.125, "contrast": (0.8, 1.2)},
}

FAMILY_SIDE = {"vgg_resnet": 224, "inception": 299}
PRESETS = {
    ("vgg_resnet", 3): (1, 3, 5),
    ("vgg_resnet", 4): (1, 3, 4, 5),
    ("inception", 4): (1, 3, 5, 6),
    ("inception", 5): (1, 3, 4, 5, 6),
}

# canonical application order: geometry first, mean subtraction last
_ORDER = (1, 2, 4, 3, 6, 5)


@dataclass(frozen=True)
class AugmentPipeline:
    methods: tuple  # ((id, params), ...)
    side: int
    channel_mean: tuple | None = None

    def __post_init__(self):
        ids = [m for m, _ in self.methods]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate augmentation methods: {ids}")
        for m, params in self.methods:
            if m not in METHOD_NAMES:
                raise ValueError(f"unknown augmentation method {m}")
            _validate(m, params)
        if self.side < 1:
            raise ValueError("target side must be positive")

    @property
    def method_ids(self):
        return tuple(sorted(m for m, _ in self.methods))

    def params(self, method):
        return dict(self.methods)[method]

    def with_side(self, side):
        return AugmentPipeline(self.methods, int(side), self.channel_mean)

    def with_mean(self, mean):
        return AugmentPipeline(self.methods, self.side, None if mean is None else tuple(float(v) for v in mean))


def _validate(method, params):
    if method == 2 and not 0 <= params["max_degrees"] <= 180:
        raise ValueError("rotation range must be within [0, 180] degrees")
    if method == 3 and "scale" in params and not params["scale"] > 0:
        raise ValueError("resize scale must be positive")
    if method == 4:
        if not 0.05 <= params["min_area"] <= params["max_area"] <= 1.0:
            raise ValueError("crop area ratios must satisfy 0.05 <= min <= max <= 1")
        if not 0 < params["min_aspect"] <= params["max_aspect"]:
            raise ValueError("invalid crop aspect-ratio range")
    if method == 6:
        lo, hi = params["contrast"]
        if not 0 <= params["brightness"] <= 1 or not 0 < lo <= hi:
            raise ValueError("brightness delta must be in [0, 1] and contrast range positive")


def make_pipeline(method_ids, side, channel_mean=None, **overrides):
    """Pipeline of the given method ids with default parameters.

    ``overrides`` maps method names (``crop=...``) to parameter dicts.
    """
    by_name = {v: k for k, v in METHOD_NAMES.items()}
    methods = []
    for m in method_ids:
        params = dict(DEFAULT_PARAMS[m])
        params.update(overrides.get(METHOD_NAMES[m], {}))
        methods.append((m, params))
    unknown = set(overrides) - set(by_name)
    if unknown:
        raise ValueError(f"unknown method names {sorted(unknown)}")
    return AugmentPipeline(tuple(methods), int(side), channel_mean)


def build_preset(num_aug, arch_family) -> AugmentPipeline:
    """Method set encoded by the ``Num aug.`` column for an architecture family."""
    try:
        ids = PRESETS[(arch_family, int(num_aug))]
    except KeyError:
        raise ValueError(f"no augmentation preset {num_aug} for family {arch_family!r}; "
                         f"valid: {sorted(PRESETS)}") from None
    return make_pipeline(ids, FAMILY_SIDE[arch_family])


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def _bilinear_sample(img, ys, xs):
    """Sample ``img [c, h, w]`` at float coordinates, clamping to the border."""
    c, h, w = img.shape
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None]
    wx = (xs - x0)[None]
    top = img[:, y0, x0] * (1 - wx) + img[:, y0, x1] * wx
    bottom = img[:, y1, x0] * (1 - wx) + img[:, y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def resize(img, out_h, out_w=None):
    """Bilinear resize with half-pixel centres."""
    out_w = out_h if out_w is None else out_w
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    return _bilinear_sample(img, ys[:, None], xs[None, :]).astype(img.dtype)


def rotate(img, degrees):
    """Rotate about the centre; uncovered corners take the nearest border value."""
    c, h, w = img.shape
    t = math.radians(degrees)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ys = cy + (yy - cy) * math.cos(t) - (xx - cx) * math.sin(t)
    xs = cx + (yy - cy) * math.sin(t) + (xx - cx) * math.cos(t)
    return _bilinear_sample(img, ys, xs).astype(img.dtype)


def flip(img, axis):
    """``axis`` is ``"horizontal"`` (mirror columns) or ``"vertical"`` (mirror rows)."""
    if axis == "horizontal":
        return img[:, :, ::-1].copy()
    if axis == "vertical":
        return img[:, ::-1, :].copy()
    raise ValueError(f"unknown flip axis {axis!r}")


def sample_crop_box(h, w, rng: SeededRng, min_area=0.05, max_area=1.0,
                    min_aspect=3 / 4, max_aspect=4 / 3, attempts=10):
    """Random ``(top, left, ch, cw)`` covering between ``min_area`` and
    ``max_area`` of the image.  Falls back to the whole image when ten draws
    fail to fit."""
    area = h * w
    for _ in range(attempts):
        target = rng.uniform((), min_area, max_area) if min_area < max_area else min_area
        log_lo, log_hi = math.log(min_aspect), math.log(max_aspect)
        aspect = math.exp(rng.uniform((), log_lo, log_hi)) if log_lo < log_hi else min_aspect
        cw = int(math.ceil(math.sqrt(target * area * aspect)))
        ch = int(math.ceil(math.sqrt(target * area / aspect)))
        if 1 <= cw <= w and 1 <= ch <= h and ch * cw <= max_area * area:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    return 0, 0, h, w


def apply_method(img, method, params, rng: SeededRng | None = None, side=None, channel_mean=None):
    """Apply one augmentation method to ``img [3, h, w]``."""
    params = {**DEFAULT_PARAMS[method], **(params or {})}
    _validate(method, params)
    if method == 1:
        out = img
        if params.get("force"):
            return flip(img, params["force"])
        if params["horizontal"] and rng.random() < 0.5:
            out = flip(out, "horizontal")
        if params["vertical"] and rng.random() < 0.5:
            out = flip(out, "vertical")
        return out if out is not img else img.copy()
    if method == 2:
        m = params["max_degrees"]
        return rotate(img, float(rng.uniform((), -m, m)) if m > 0 else 0.0)
    if method == 3:
        if side is None:
            s = params.get("scale", 1.0)
            return resize(img, max(1, round(img.shape[1] * s)), max(1, round(img.shape[2] * s)))
        return resize(img, side, side)
    if method == 4:
        top, left, ch, cw = sample_crop_box(img.shape[1], img.shape[2], rng, params["min_area"],
                                            params["max_area"], params["min_aspect"], params["max_aspect"])
        crop = img[:, top:top + ch, left:left + cw]
        return resize(crop, side, side) if side else crop.copy()
    if method == 5:
        if params["per_image"] or channel_mean is None:
            mean = img.mean(axis=(1, 2), keepdims=True)
        else:
            mean = np.asarray(channel_mean, dtype=img.dtype).reshape(-1, 1, 1)
        return img - mean
    if method == 6:
        lo, hi = params["contrast"]
        b = params["brightness"]
        out = img + (rng.uniform((), -b, b) if b > 0 else 0.0)
        factor = rng.uniform((), lo, hi) if lo < hi else lo
        mean = out.mean(axis=(1, 2), keepdims=True)
        out = (out - mean) * factor + mean
        return np.clip(out, 0.0, 1.0).astype(img.dtype)
    raise ValueError(f"unknown augmentation method {method}")


def apply_pipeline(img, pipeline: AugmentPipeline, rng: SeededRng | None = None, mode="train"):
    """Train mode runs every method; eval mode only resizes and subtracts the mean."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    img = grayscale_to_rgb(np.asarray(img))
    methods = dict(pipeline.methods)
    side = pipeline.side
    if mode == "eval":
        out = resize(img, side, side)
        if 5 in methods:
            out = apply_method(out, 5, methods[5], channel_mean=pipeline.channel_mean)
        return out
    out = img
    resized = False
    for m in _ORDER:
        if m not in methods:
            continue
        if m in (3, 4):
            if resized:
                continue
            out = apply_method(out, m, methods[m], rng, side=side)
            resized = True
        else:
            if m == 5 and not resized:
                out = resize(out, side, side)
                resized = True
            out = apply_method(out, m, methods[m], rng, channel_mean=pipeline.channel_mean)
    if not resized:
        out = resize(out, side, side)
    return out


def grayscale_to_rgb(img):
    """Replicate a single channel into three; 3-channel input passes through."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.shape[0] == 3:
        return img
    if img.shape[0] != 1:
        raise ValueError(f"expected 1 or 3 channels, got shape {img.shape}")
    return np.repeat(img, 3, axis=0)


def dataset_channel_mean(images):
    """Per-channel mean over a collection of ``[3, h, w]`` images (each weighted equally)."""
    acc = np.zeros(3)
    n = 0
    for img in images:
        acc += grayscale_to_rgb(img).mean(axis=(1, 2))
        n += 1
    if n == 0:
        raise ValueError("cannot compute a mean over zero images")
    return tuple(float(v) for v in acc / n)
