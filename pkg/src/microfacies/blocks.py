"""Composite layers: sequential chains, branch-concatenate and skip-add blocks.

Containers name their children, so every parameter in a network ends up with
a dotted hierarchical name such as ``block2.unit_1.residual.branch.conv1.weight``.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .layers import Activation, BatchNorm, Conv2D, Layer, MaxPool2D


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)
        names = [n for n, _ in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate child names in {names}")

    def children(self):
        return self.layers

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        shape = self.in_shape
        for name, layer in self.layers:
            try:
                shape = layer.build(shape)
            except DimensionError as exc:
                raise DimensionError(f"{name}: {exc}") from None
        self.out_shape = shape
        return shape

    def child(self, name):
        for n, layer in self.layers:
            if n == name:
                return layer
        raise KeyError(name)

    def forward(self, x, train, rng):
        caches = []
        for _, layer in self.layers:
            x, cache = layer.forward(x, train, rng)
            caches.append(cache)
        return x, caches

    def backward(self, dy, caches):
        grads = {}
        for (name, layer), cache in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(dy, cache)
            for k, v in g.items():
                grads[f"{name}.{k}"] = v
        return dy, grads


class Concat(Layer):
    """Run every branch on the same input and concatenate along channels."""

    def __init__(self, branches):
        super().__init__()
        if len(branches) < 1:
            raise ValueError("Concat needs at least one branch")
        self.branches = list(branches)

    def children(self):
        return self.branches

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        shapes = [layer.build(self.in_shape) for _, layer in self.branches]
        spatial = {s[1:] for s in shapes}
        if len(spatial) != 1:
            raise DimensionError(f"branch outputs disagree spatially: "
                                 + ", ".join(f"{n}={s}" for (n, _), s in zip(self.branches, shapes)))
        self.channels = [s[0] for s in shapes]
        self.out_shape = (sum(self.channels),) + shapes[0][1:]
        return self.out_shape

    def forward(self, x, train, rng):
        outs, caches = [], []
        for _, layer in self.branches:
            y, cache = layer.forward(x, train, rng)
            outs.append(y)
            caches.append(cache)
        if len({y.shape[2:] for y in outs}) != 1:
            raise DimensionError(f"branch outputs disagree spatially: {[y.shape for y in outs]}")
        return np.concatenate(outs, axis=1), caches

    def backward(self, dy, caches):
        grads = {}
        dx = None
        splits = np.cumsum(self.channels)[:-1]
        for (name, layer), cache, part in zip(self.branches, caches, np.split(dy, splits, axis=1)):
            d, g = layer.backward(np.ascontiguousarray(part), cache)
            dx = d if dx is None else dx + d
            for k, v in g.items():
                grads[f"{name}.{k}"] = v
        return dx, grads


class Reduction(Concat):
    """Concatenating block that halves even spatial dimensions."""

    def build(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] % 2 or in_shape[2] % 2:
            raise ValueError(f"reduction block needs even spatial dims, got {tuple(in_shape)}")
        out = super().build(in_shape)
        if out[1:] != (in_shape[1] // 2, in_shape[2] // 2):
            raise DimensionError(f"reduction produced {out} from {tuple(in_shape)}")
        return out

    def forward(self, x, train, rng):
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"reduction block needs even spatial dims, got {x.shape}")
        return super().forward(x, train, rng)


class Residual(Layer):
    """``y = shortcut(x) + scale * branch(x)``.

    With ``project=True`` a 1x1 strided convolution is inserted on the shortcut
    whenever the branch changes the channel count or the resolution; otherwise
    any mismatch is an error.  ``scale == 0`` skips the branch entirely.
    """

    def __init__(self, branch, scale=1.0, project=True, batch_norm=False):
        super().__init__()
        self.branch = branch
        self.scale = float(scale)
        self.project = project
        self.batch_norm = batch_norm
        self.shortcut = None

    def children(self):
        out = [("branch", self.branch)]
        if self.shortcut is not None:
            out.append(("shortcut", self.shortcut))
        return out

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        out = self.branch.build(self.in_shape)
        if out != self.in_shape:
            if not self.project:
                raise DimensionError(f"branch output {out} must match block input {self.in_shape}")
            stride = -(-self.in_shape[1] // out[1])
            layers = [("conv", Conv2D(out[0], 1, stride, 0, bias=not self.batch_norm, init="lecun"))]
            if self.batch_norm:
                layers.append(("bn", BatchNorm()))
            self.shortcut = Sequential(layers)
            if self.shortcut.build(self.in_shape) != out:
                raise DimensionError(f"cannot project {self.in_shape} onto {out}")
        self.out_shape = out
        return out

    def forward(self, x, train, rng):
        if self.shortcut is None:
            s, s_cache = x, None
        else:
            s, s_cache = self.shortcut.forward(x, train, rng)
        if self.scale == 0.0:
            return s.copy(), (None, s_cache)
        b, b_cache = self.branch.forward(x, train, rng)
        if b.shape != s.shape:
            raise DimensionError(f"cannot add branch {b.shape} to shortcut {s.shape}")
        if self.scale != 1.0:
            b = b * np.asarray(self.scale, dtype=b.dtype)
        return s + b, (b_cache, s_cache)

    def backward(self, dy, cache):
        b_cache, s_cache = cache
        grads = {}
        if self.shortcut is None:
            dx = dy
        else:
            dx, g = self.shortcut.backward(dy, s_cache)
            grads.update({f"shortcut.{k}": v for k, v in g.items()})
        if b_cache is not None:
            db = dy * np.asarray(self.scale, dtype=dy.dtype) if self.scale != 1.0 else dy
            d, g = self.branch.backward(db, b_cache)
            dx = dx + d
            grads.update({f"branch.{k}": v for k, v in g.items()})
        elif self.scale == 0.0:
            # branch skipped: its parameters get exact zero gradients
            for name, shape in _param_shapes(self.branch):
                grads[f"branch.{name}"] = np.zeros(shape, dtype=dy.dtype)
        return dx, grads


def _param_shapes(layer, prefix=""):
    for name, shape in layer.param_shapes.items():
        yield prefix + name, shape
    for cname, child in layer.children():
        yield from _param_shapes(child, f"{prefix}{cname}.")


# --------------------------------------------------------------------------
# Block factories
# --------------------------------------------------------------------------

def conv_unit(out_channels, kernel=3, stride=1, pad=None, batch_norm=True, activation="relu"):
    """Convolution, optional batch norm (before the activation), activation."""
    layers = [("conv", Conv2D(out_channels, kernel, stride, pad, bias=not batch_norm,
                              init="he" if activation == "relu" else "lecun"))]
    if batch_norm:
        layers.append(("bn", BatchNorm()))
    if activation:
        layers.append((activation, Activation(activation)))
    return Sequential(layers)


def conv_chain(specs, batch_norm=True):
    """Chain of conv units from ``(channels, kernel[, stride])`` tuples."""
    layers = []
    for i, spec in enumerate(specs, 1):
        c, k = spec[0], spec[1]
        stride = spec[2] if len(spec) > 2 else 1
        layers.append((f"conv{i}", conv_unit(c, k, stride, None, batch_norm)))
    return Sequential(layers)


def residual_block(channels, stride=1, batch_norm=True, bottleneck=True, expansion=4):
    """ResNet v1 unit: the residual add followed by ReLU.

    ``bottleneck`` selects 1x1 -> 3x3 -> 1x1 (``channels`` -> ``expansion * channels``);
    otherwise two 3x3 convolutions of ``channels`` each.
    """
    if bottleneck:
        branch = Sequential([
            ("conv1", conv_unit(channels, 1, 1, 0, batch_norm)),
            ("conv2", conv_unit(channels, 3, stride, 1, batch_norm)),
            ("conv3", conv_unit(channels * expansion, 1, 1, 0, batch_norm, activation=None)),
        ])
    else:
        branch = Sequential([
            ("conv1", conv_unit(channels, 3, stride, 1, batch_norm)),
            ("conv2", conv_unit(channels, 3, 1, 1, batch_norm, activation=None)),
        ])
    return Sequential([("residual", Residual(branch, batch_norm=batch_norm)),
                       ("relu", Activation("relu"))])


def inception_block(branches, batch_norm=True):
    """Multi-scale block; each branch is a list of ``(channels, kernel)`` specs,
    or a nested list of such lists to split a branch into parallel heads."""
    return Concat([(f"branch{i}", _branch(spec, batch_norm)) for i, spec in enumerate(branches)])


def _branch(spec, batch_norm):
    if isinstance(spec, Layer):
        return spec
    if spec and isinstance(spec[-1], list):
        stem = conv_chain(spec[:-1], batch_norm)
        heads = Concat([(f"head{j}", conv_chain(h, batch_norm)) for j, h in enumerate(spec[-1])])
        return Sequential(stem.layers + [("split", heads)])
    return conv_chain(spec, batch_norm)


def inception_resnet_block(branches, channels, scale=0.2, batch_norm=True):
    """Inception branches, a linear 1x1 projection back to ``channels`` and a
    scaled residual add, followed by ReLU."""
    body = Sequential([
        ("mixed", inception_block(branches, batch_norm)),
        ("project", Conv2D(channels, 1, 1, 0, bias=True, init="lecun")),
    ])
    return Sequential([("residual", Residual(body, scale=scale, project=False)),
                       ("relu", Activation("relu"))])


def reduction_block(conv_branches, batch_norm=True):
    """Max-pool branch plus strided convolution branches, concatenated."""
    return Reduction([("pool", MaxPool2D(2))] +
                     [(f"branch{i}", _branch(spec, batch_norm)) for i, spec in enumerate(conv_branches, 1)])
