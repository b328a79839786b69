"""A small separable image set (coloured geometric shapes) for desk-scale runs."""
from __future__ import annotations

import os

import numpy as np

from .data import Manifest, Record, write_image, write_manifest
from .tensor import SeededRng

SHAPES = ("circle", "cross", "square", "triangle")


def _mask(shape, side, cy, cx, r):
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    dy, dx = yy - cy, xx - cx
    if shape == "circle":
        return dy * dy + dx * dx <= r * r
    if shape == "square":
        return (np.abs(dy) <= r * 0.85) & (np.abs(dx) <= r * 0.85)
    if shape == "cross":
        arm = max(r * 0.3, 1.0)
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    if shape == "triangle":
        # apex up; base at cy + r
        t = (dy + r) / (2 * r)
        return (t >= 0) & (t <= 1) & (np.abs(dx) <= t * r)
    raise ValueError(f"unknown shape {shape!r}")


def render_shape(shape, rng: SeededRng, side=32):
    """One ``[3, side, side]`` image in [0, 1]: a randomly coloured, placed and
    sized shape over a noisy background."""
    r = float(rng.uniform((), side * 0.22, side * 0.38))
    cy = float(rng.uniform((), r + 1, side - r - 1))
    cx = float(rng.uniform((), r + 1, side - r - 1))
    fg = rng.uniform((3,), 0.45, 1.0)
    bg = rng.uniform((3,), 0.0, 0.3)
    img = bg[:, None, None] + rng.normal((3, side, side), 0.0, 0.04)
    m = _mask(shape, side, cy, cx, r)
    img[:, m] = fg[:, None]
    return np.clip(img, 0.0, 1.0)


def make_shapes_dataset(directory, n_per_class=200, side=32, seed=0, shapes=SHAPES) -> Manifest:
    """Write PPM images plus ``manifest.csv`` under ``directory``."""
    os.makedirs(directory, exist_ok=True)
    records = []
    for shape in shapes:
        for i in range(n_per_class):
            rel = f"{shape}/{shape}_{i:04d}.ppm"
            write_image(os.path.join(directory, rel), render_shape(shape, SeededRng(seed, "shape", shape, i), side))
            records.append(Record(rel, shape, "own"))
    manifest = Manifest(records, tuple(sorted(shapes)), str(directory))
    write_manifest(manifest, os.path.join(directory, "manifest.csv"))
    return manifest
