"""Builders for VGG-16, ResNet v1, Inception v4 and Inception-ResNet v2.

Each builder keeps the block topology of the full-size network (stage
layout, branch structure, skip connections, placement of reductions) and
exposes the parts that make the full models too large for desk-scale work
through :class:`ArchScale`: the input side, a channel width multiplier and
the number of block repeats per stage.

Top-level node names are stable and double as freeze prefixes:

=====================  ==========================================================
vgg16                  conv1 ... conv5, flatten, fc6, fc7, fc8 (head)
resnet_v1              stem, block1 ... block4, pool, dropout, logits (head)
inception_v4           stem, inception_a, reduction_a, inception_b, reduction_b,
                       inception_c, pool, dropout, logits (head)
inception_resnet_v2    stem, inception_resnet_a, reduction_a, inception_resnet_b,
                       reduction_b, inception_resnet_c, final_conv, pool,
                       dropout, logits (head)
=====================  ==========================================================
"""
from __future__ import annotations

from dataclasses import dataclass

from .blocks import (Sequential, conv_chain, conv_unit, inception_block,
                     inception_resnet_block, reduction_block, residual_block)
from .layers import Activation, BatchNorm, Conv2D, Dense, Dropout, Flatten, GlobalAvgPool, MaxPool2D
from .network import Network

ARCHITECTURES = ("vgg16", "resnet_v1", "inception_v4", "inception_resnet_v2")

FULL_INPUT_SIDE = {"vgg16": 224, "resnet_v1": 224, "inception_v4": 299, "inception_resnet_v2": 299}
FULL_REPEATS = {
    "vgg16": (2, 2, 3, 3, 3),
    "resnet_v1": (3, 8, 36, 3),  # ResNet-152
    "inception_v4": (4, 7, 3),
    "inception_resnet_v2": (5, 10, 5),
}

# trainable top-level nodes under the "half layers" policy
HALF_TRAINABLE = {
    "vgg16": ("conv4", "conv5", "fc6", "fc7", "fc8"),
    "resnet_v1": ("block3", "block4", "logits"),
    "inception_v4": ("inception_b", "reduction_b", "inception_c", "logits"),
    "inception_resnet_v2": ("inception_resnet_b", "reduction_b", "inception_resnet_c", "final_conv", "logits"),
}

FEATURE_NODE = {"vgg16": "conv5", "resnet_v1": "block4",
                "inception_v4": "inception_c", "inception_resnet_v2": "final_conv"}


@dataclass(frozen=True)
class ArchScale:
    """Size knobs.  ``blocks_per_stage`` is an int (same for every stage), a
    per-stage tuple, or None for the architecture's full repeat counts."""

    input_side: int = 32
    width_multiplier: float = 0.125
    blocks_per_stage: int | tuple | None = 1

    def __post_init__(self):
        if self.input_side < 16:
            raise ValueError(f"input_side must be >= 16, got {self.input_side}")
        if not 0 < self.width_multiplier <= 1:
            raise ValueError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")

    @classmethod
    def full(cls, arch):
        _check_arch(arch)
        return cls(FULL_INPUT_SIDE[arch], 1.0, None)

    def repeats(self, arch):
        full = FULL_REPEATS[arch]
        b = self.blocks_per_stage
        if b is None:
            return full
        if isinstance(b, int):
            return (b,) * len(full)
        b = tuple(b)
        if len(b) != len(full):
            raise ValueError(f"{arch} has {len(full)} stages, got repeats {b}")
        return b

    def ch(self, channels):
        return max(1, int(round(channels * self.width_multiplier)))

    def to_dict(self):
        b = self.blocks_per_stage
        return {"input_side": self.input_side, "width_multiplier": self.width_multiplier,
                "blocks_per_stage": list(b) if isinstance(b, tuple) else b}

    @classmethod
    def from_dict(cls, d):
        b = d.get("blocks_per_stage", 1)
        return cls(int(d.get("input_side", 32)), float(d.get("width_multiplier", 0.125)),
                   tuple(b) if isinstance(b, list) else b)


def _check_arch(arch):
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def build_network(arch, scale: ArchScale | None = None, n_classes=22, *, batch_norm=True,
                  keep_prob=1.0, seed=0, materialize=True, dtype=None) -> Network:
    """Build ``arch`` at ``scale``.  With ``materialize=False`` only shapes are
    resolved, which is how full-size presets are inspected without allocating."""
    _check_arch(arch)
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    scale = scale or ArchScale()
    layers = _BUILDERS[arch](scale, n_classes, batch_norm, keep_prob)
    head = "fc8" if arch == "vgg16" else "logits"
    net = Network(Sequential(layers), (3, scale.input_side, scale.input_side), n_classes,
                  arch=arch, head=head, half_trainable=HALF_TRAINABLE[arch],
                  info={"scale": scale.to_dict(), "batch_norm": batch_norm, "keep_prob": keep_prob,
                        "feature_node": FEATURE_NODE[arch]})
    if materialize:
        net.initialize(seed, dtype)
    return net


def _vgg16(s: ArchScale, k, bn, keep):
    widths = (64, 128, 256, 512, 512)
    layers = []
    for stage, (width, reps) in enumerate(zip(widths, s.repeats("vgg16")), 1):
        convs = [(f"conv{stage}_{i}", conv_unit(s.ch(width), 3, 1, 1, bn)) for i in range(1, reps + 1)]
        layers.append((f"conv{stage}", Sequential(convs + [("pool", MaxPool2D(2))])))
    fc = s.ch(4096)
    layers += [
        ("flatten", Flatten()),
        ("fc6", Sequential([("dense", Dense(fc)), ("relu", Activation("relu")), ("dropout", Dropout(keep))])),
        ("fc7", Sequential([("dense", Dense(fc)), ("relu", Activation("relu")), ("dropout", Dropout(keep))])),
        ("fc8", Sequential([("dense", Dense(k, init="lecun"))])),
    ]
    return layers


def _head(k, keep):
    return [("pool", GlobalAvgPool()), ("dropout", Dropout(keep)),
            ("logits", Sequential([("dense", Dense(k, init="lecun"))]))]


def _resnet_v1(s: ArchScale, k, bn, keep):
    stem = [("conv", Conv2D(s.ch(64), 7, 2, 3, bias=not bn))]
    if bn:
        stem.append(("bn", BatchNorm()))
    stem += [("relu", Activation("relu")), ("pool", MaxPool2D(2))]
    layers = [("stem", Sequential(stem))]
    for stage, (width, reps) in enumerate(zip((64, 128, 256, 512), s.repeats("resnet_v1")), 1):
        units = [(f"unit_{i}", residual_block(s.ch(width), 2 if (i == 1 and stage > 1) else 1, bn))
                 for i in range(1, reps + 1)]
        layers.append((f"block{stage}", Sequential(units)))
    return layers + _head(k, keep)


def _inception_stem(s: ArchScale, out_channels, bn):
    c = s.ch
    side = s.input_side
    if side % 8 == 0:
        first = conv_unit(c(32), 3, 1, 1, bn)
    else:
        # valid convolution landing on a multiple of 8 (299 -> 296), so the
        # three downstream reductions always see even sizes
        target = 8 * ((side - 2) // 8)
        first = conv_unit(c(32), side - target + 1, 1, 0, bn)
    return Sequential([
        ("conv1", first),
        ("conv2", conv_unit(c(64), 3, 1, 1, bn)),
        ("mixed", reduction_block([[(c(96), 3, 2)]], bn)),
        ("conv3", conv_unit(c(out_channels), 1, 1, 0, bn)),
    ])


def _inception_v4(s: ArchScale, k, bn, keep):
    c = s.ch
    ra, rb, rc = s.repeats("inception_v4")

    def block_a():
        return inception_block([
            [(c(96), 1)],
            [(c(64), 1), (c(96), 3)],
            [(c(64), 1), (c(96), 5)],
            [(c(64), 1), (c(96), 3), (c(96), 3)],
        ], bn)

    def block_b():
        return inception_block([
            [(c(384), 1)],
            [(c(192), 1), (c(224), (1, 7)), (c(256), (7, 1))],
            [(c(192), 1), (c(192), (7, 1)), (c(224), (1, 7)), (c(224), (7, 1)), (c(256), (1, 7))],
            [(c(128), 1)],
        ], bn)

    def block_c():
        split = [[(c(256), (1, 3))], [(c(256), (3, 1))]]
        return inception_block([
            [(c(256), 1)],
            [(c(384), 1), split],
            [(c(384), 1), (c(448), (1, 3)), (c(512), (3, 1)), split],
            [(c(256), 1)],
        ], bn)

    return [
        ("stem", _inception_stem(s, 384, bn)),
        ("inception_a", Sequential([(f"unit_{i}", block_a()) for i in range(1, ra + 1)])),
        ("reduction_a", reduction_block([
            [(c(384), 3, 2)],
            [(c(192), 1), (c(224), 3), (c(256), 3, 2)],
        ], bn)),
        ("inception_b", Sequential([(f"unit_{i}", block_b()) for i in range(1, rb + 1)])),
        ("reduction_b", reduction_block([
            [(c(192), 1), (c(192), 3, 2)],
            [(c(256), 1), (c(256), (1, 7)), (c(320), (7, 1)), (c(320), 3, 2)],
        ], bn)),
        ("inception_c", Sequential([(f"unit_{i}", block_c()) for i in range(1, rc + 1)])),
    ] + _head(k, keep)


def _inception_resnet_v2(s: ArchScale, k, bn, keep, residual_scale=0.2):
    c = s.ch
    ra, rb, rc = s.repeats("inception_resnet_v2")
    a_out = c(320)
    b_out = a_out + c(384) + c(384)
    c_out = b_out + c(384) + c(288) + c(320)

    def block_a():
        return inception_resnet_block([
            [(c(32), 1)],
            [(c(32), 1), (c(32), 3)],
            [(c(32), 1), (c(48), 3), (c(64), 3)],
        ], a_out, residual_scale, bn)

    def block_b():
        return inception_resnet_block([
            [(c(192), 1)],
            [(c(128), 1), (c(160), (1, 7)), (c(192), (7, 1))],
        ], b_out, residual_scale, bn)

    def block_c():
        return inception_resnet_block([
            [(c(192), 1)],
            [(c(192), 1), (c(224), (1, 3)), (c(256), (3, 1))],
        ], c_out, residual_scale, bn)

    return [
        ("stem", _inception_stem(s, 320, bn)),
        ("inception_resnet_a", Sequential([(f"unit_{i}", block_a()) for i in range(1, ra + 1)])),
        ("reduction_a", reduction_block([
            [(c(384), 3, 2)],
            [(c(256), 1), (c(256), 3), (c(384), 3, 2)],
        ], bn)),
        ("inception_resnet_b", Sequential([(f"unit_{i}", block_b()) for i in range(1, rb + 1)])),
        ("reduction_b", reduction_block([
            [(c(256), 1), (c(384), 3, 2)],
            [(c(256), 1), (c(288), 3, 2)],
            [(c(256), 1), (c(288), 3), (c(320), 3, 2)],
        ], bn)),
        ("inception_resnet_c", Sequential([(f"unit_{i}", block_c()) for i in range(1, rc + 1)])),
        ("final_conv", conv_unit(c(1536), 1, 1, 0, bn)),
    ] + _head(k, keep)


_BUILDERS = {
    "vgg16": _vgg16,
    "resnet_v1": _resnet_v1,
    "inception_v4": _inception_v4,
    "inception_resnet_v2": _inception_resnet_v2,
}


def arch_family(arch):
    """Augmentation family used by the preset table."""
    _check_arch(arch)
    return "inception" if arch.startswith("inception") else "vgg_resnet"
