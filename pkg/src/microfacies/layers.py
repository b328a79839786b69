"""Layer primitives with explicit forward and backward passes.

Each kernel exists in two forms: a functional one operating on arrays
(``conv2d_forward`` / ``conv2d_backward`` ...) and a :class:`Layer` subclass
that owns parameters and plugs into the network containers.

Layers follow one protocol:

* ``build(in_shape)`` receives the per-sample input shape, records the
  shapes of its parameters and returns the per-sample output shape;
* ``init_params(rng, dtype)`` allocates parameters;
* ``forward(x, train, rng)`` returns ``(y, cache)``;
* ``backward(dy, cache)`` returns ``(dx, grads)`` where ``grads`` maps local
  parameter names to gradient arrays.

Dropout takes a *keep* probability: 1.0 keeps every activation and 0.0 drops
them all.  This is the inverse of the common "drop rate" convention.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .tensor import _pair, center_crop2d, pad2d

BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5


# --------------------------------------------------------------------------
# Functional kernels
# --------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(xp, kh, kw, stride):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


def conv2d_forward(x, weight, bias=None, stride=1, pad=0):
    """Cross-correlate ``x [n, c, h, w]`` with ``weight [o, c, kh, kw]``.

    Returns ``(y, cache)``; the cache holds what :func:`conv2d_backward` needs.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects a rank-4 input, got shape {x.shape}")
    o, c, kh, kw = weight.shape
    if x.shape[1] != c:
        raise DimensionError(f"input has {x.shape[1]} channels but filters expect {c} "
                             f"(input {x.shape}, filters {weight.shape})")
    ph, pw = _pair(pad)
    n, _, h, w = x.shape
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise DimensionError(f"{kh}x{kw} kernel does not fit input {x.shape} with padding {pad}")
    if kh == 1 and kw == 1 and ph == 0 and pw == 0:
        xs = x[:, :, ::stride, ::stride]
        oh, ow = xs.shape[2:]
        cols = xs.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        cols, oh, ow = _im2col(pad2d(x, (ph, pw)), kh, kw, stride)
    out = cols @ weight.reshape(o, -1).T
    if bias is not None:
        out += bias
    y = np.ascontiguousarray(out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))
    return y, (cols, x.shape, stride, (ph, pw))


def conv2d_backward(dy, cache, weight, need_input_grad=True):
    """Gradients of ``sum(dy * y)`` with respect to input, filters and bias."""
    cols, x_shape, stride, (ph, pw) = cache
    o, c, kh, kw = weight.shape
    n, _, h, w = x_shape
    if dy.ndim != 4 or dy.shape[:2] != (n, o):
        raise DimensionError(f"gradient shape {dy.shape} does not match conv output for input {x_shape}")
    oh, ow = dy.shape[2:]
    dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, o)
    if dy2.shape[0] != cols.shape[0]:
        raise DimensionError(f"gradient shape {dy.shape} does not match cached forward pass")
    grad_w = (dy2.T @ cols).reshape(weight.shape)
    grad_b = dy2.sum(axis=0)
    if not need_input_grad:
        return None, grad_w, grad_b
    dcols = dy2 @ weight.reshape(o, -1)
    if kh == 1 and kw == 1 and ph == 0 and pw == 0:
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, ::stride, ::stride] = dcols.reshape(n, oh, ow, c).transpose(0, 3, 1, 2)
        return dx, grad_w, grad_b
    dcols = dcols.reshape(n, oh, ow, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return center_crop2d(dxp, (ph, pw)), grad_w, grad_b


def maxpool2d_forward(x, size=2, stride=2):
    """Non-overlapping max pooling; odd borders are padded with -inf.

    Ties resolve to the first maximum in row-major window order.
    """
    if size != stride:
        raise ValueError("only non-overlapping pooling (size == stride) is supported")
    n, c, h, w = x.shape
    oh, ow = -(-h // size), -(-w // size)
    ph, pw = oh * size - h, ow * size - w
    xp = x
    if ph or pw:
        xp = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    win = xp.reshape(n, c, oh, size, ow, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, size * size)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape, size)


def maxpool2d_backward(dy, cache):
    arg, x_shape, size = cache
    n, c, h, w = x_shape
    oh, ow = arg.shape[2:]
    win = np.zeros((n, c, oh, ow, size * size), dtype=dy.dtype)
    np.put_along_axis(win, arg[..., None], dy[..., None], axis=-1)
    dxp = win.reshape(n, c, oh, ow, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * size, ow * size)
    return np.ascontiguousarray(dxp[:, :, :h, :w])


def dense_forward(x, weight, bias=None):
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"dense layer expects [n, {weight.shape[0]}] input, got {x.shape}")
    y = x @ weight
    if bias is not None:
        y = y + bias
    return y, x


def dense_backward(dy, x, weight):
    return dy @ weight.T, x.T @ dy, dy.sum(axis=0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


ACTIVATIONS = ("relu", "sigmoid", "tanh")


def activation_forward(x, kind):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(dy, x, y, kind):
    # relu'(0) is taken as 0
    if kind == "relu":
        return dy * (x > 0)
    if kind == "sigmoid":
        return dy * y * (1 - y)
    if kind == "tanh":
        return dy * (1 - y * y)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def dropout_forward(x, keep_prob, training, rng=None):
    """Inverted dropout.  Returns ``(y, mask)``; ``mask`` is None for a no-op."""
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in [0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x, None
    if keep_prob == 0.0:
        return np.zeros_like(x), np.zeros(x.shape, dtype=bool)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = rng.random(x.shape) < keep_prob
    return x * mask / np.asarray(keep_prob, dtype=x.dtype), mask


def dropout_backward(dy, mask, keep_prob):
    if mask is None:
        return dy
    if keep_prob == 0.0:
        return np.zeros_like(dy)
    return dy * mask / np.asarray(keep_prob, dtype=dy.dtype)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training,
                      momentum=BN_MOMENTUM, eps=BN_EPSILON):
    """Per-channel batch normalisation of ``[n, c, h, w]`` (or ``[n, c]``) input.

    In training mode the running statistics are updated in place.
    """
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    if training:
        if x.shape[0] < 2:
            raise ValueError(f"batch norm in training mode needs at least 2 samples, got {x.shape[0]}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return y, (xhat, inv_std, training, axes, shape)


def batchnorm_backward(dy, cache, gamma):
    xhat, inv_std, training, axes, shape = cache
    grad_gamma = (dy * xhat).sum(axis=axes)
    grad_beta = dy.sum(axis=axes)
    dxhat = dy * gamma.reshape(shape)
    if not training:
        return dxhat * inv_std.reshape(shape), grad_gamma, grad_beta
    m = dy.size // dy.shape[1]
    dx = (inv_std.reshape(shape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return dx, grad_gamma, grad_beta


# --------------------------------------------------------------------------
# Layer objects
# --------------------------------------------------------------------------

class Layer:
    """Base class; stateless layers only override ``forward``/``backward``."""

    def __init__(self):
        self.param_shapes: dict[str, tuple] = {}
        self.buffer_shapes: dict[str, tuple] = {}
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.in_shape = None
        self.out_shape = None

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = self._output_shape(self.in_shape)
        return self.out_shape

    def _output_shape(self, in_shape):
        return in_shape

    def children(self):
        return []

    def init_param(self, name, rng, dtype):
        """Allocate one parameter from its default initializer."""
        raise KeyError(name)

    def init_buffers(self, dtype):
        pass

    def forward(self, x, train, rng):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError


def _he_or_lecun(shape, fan_in, init, rng, dtype):
    # variance 2/fan_in ahead of ReLU, 1/fan_in otherwise
    var = (2.0 if init == "he" else 1.0) / fan_in
    return np.asarray(rng.normal(shape, 0.0, math.sqrt(var)), dtype=dtype)


class Conv2D(Layer):
    def __init__(self, out_channels, kernel=3, stride=1, pad=None, bias=True, init="he"):
        super().__init__()
        self.out_channels = int(out_channels)
        self.kernel = _pair(kernel)
        if min(self.kernel) < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        self.stride = int(stride)
        self.pad = (self.kernel[0] // 2, self.kernel[1] // 2) if pad is None else _pair(pad)
        self.use_bias = bias
        self.init = init

    def _output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"Conv2D expects [c, h, w] samples, got {in_shape}")
        c, h, w = in_shape
        kh, kw = self.kernel
        if h + 2 * self.pad[0] < kh or w + 2 * self.pad[1] < kw:
            raise DimensionError(f"{kh}x{kw} kernel does not fit {in_shape} with padding {self.pad}")
        self.param_shapes = {"weight": (self.out_channels, c, kh, kw)}
        if self.use_bias:
            self.param_shapes["bias"] = (self.out_channels,)
        return (self.out_channels,
                conv_output_size(h, kh, self.stride, self.pad[0]),
                conv_output_size(w, kw, self.stride, self.pad[1]))

    def init_param(self, name, rng, dtype):
        shape = self.param_shapes[name]
        if name == "bias":
            return np.zeros(shape, dtype=dtype)
        return _he_or_lecun(shape, int(np.prod(shape[1:])), self.init, rng, dtype)

    def forward(self, x, train, rng):
        return conv2d_forward(x, self.params["weight"], self.params.get("bias"), self.stride, self.pad)

    def backward(self, dy, cache, need_input_grad=True):
        dx, gw, gb = conv2d_backward(dy, cache, self.params["weight"], need_input_grad)
        grads = {"weight": gw}
        if self.use_bias:
            grads["bias"] = gb
        return dx, grads


class Dense(Layer):
    def __init__(self, units, bias=True, init="he"):
        super().__init__()
        self.units = int(units)
        self.use_bias = bias
        self.init = init

    def _output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise DimensionError(f"Dense expects flat samples, got {in_shape}")
        self.param_shapes = {"weight": (in_shape[0], self.units)}
        if self.use_bias:
            self.param_shapes["bias"] = (self.units,)
        return (self.units,)

    def init_param(self, name, rng, dtype):
        shape = self.param_shapes[name]
        if name == "bias":
            return np.zeros(shape, dtype=dtype)
        return _he_or_lecun(shape, shape[0], self.init, rng, dtype)

    def forward(self, x, train, rng):
        return dense_forward(x, self.params["weight"], self.params.get("bias"))

    def backward(self, dy, cache):
        dx, gw, gb = dense_backward(dy, cache, self.params["weight"])
        grads = {"weight": gw}
        if self.use_bias:
            grads["bias"] = gb
        return dx, grads


class Activation(Layer):
    def __init__(self, kind="relu"):
        super().__init__()
        if kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
        self.kind = kind

    def forward(self, x, train, rng):
        y = activation_forward(x, self.kind)
        return y, (x, y)

    def backward(self, dy, cache):
        x, y = cache
        return activation_backward(dy, x, y, self.kind), {}


class MaxPool2D(Layer):
    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def _output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, -(-h // self.size), -(-w // self.size))

    def forward(self, x, train, rng):
        return maxpool2d_forward(x, self.size, self.size)

    def backward(self, dy, cache):
        return maxpool2d_backward(dy, cache), {}


class BatchNorm(Layer):
    def __init__(self, momentum=BN_MOMENTUM, eps=BN_EPSILON):
        super().__init__()
        if not 0 < momentum < 1:
            raise ValueError("momentum must be in (0, 1)")
        self.momentum = momentum
        self.eps = eps

    def _output_shape(self, in_shape):
        c = in_shape[0]
        self.param_shapes = {"gamma": (c,), "beta": (c,)}
        self.buffer_shapes = {"running_mean": (c,), "running_var": (c,)}
        return in_shape

    def init_param(self, name, rng, dtype):
        shape = self.param_shapes[name]
        return np.ones(shape, dtype=dtype) if name == "gamma" else np.zeros(shape, dtype=dtype)

    def init_buffers(self, dtype):
        c = self.buffer_shapes["running_mean"]
        self.buffers = {"running_mean": np.zeros(c, dtype=dtype), "running_var": np.ones(c, dtype=dtype)}

    def forward(self, x, train, rng):
        return batchnorm_forward(x, self.params["gamma"], self.params["beta"],
                                 self.buffers["running_mean"], self.buffers["running_var"],
                                 train, self.momentum, self.eps)

    def backward(self, dy, cache):
        dx, gg, gb = batchnorm_backward(dy, cache, self.params["gamma"])
        return dx, {"gamma": gg, "beta": gb}


class Dropout(Layer):
    def __init__(self, keep_prob=1.0):
        super().__init__()
        if not 0.0 <= keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in [0, 1], got {keep_prob}")
        self.keep_prob = float(keep_prob)

    def forward(self, x, train, rng):
        return dropout_forward(x, self.keep_prob, train, rng)

    def backward(self, dy, mask):
        return dropout_backward(dy, mask, self.keep_prob), {}


class Flatten(Layer):
    def _output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, shape):
        return dy.reshape(shape), {}


class GlobalAvgPool(Layer):
    """Spatial mean per channel, ``[n, c, h, w] -> [n, c]``."""

    def _output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"global pooling expects [c, h, w] samples, got {in_shape}")
        return (in_shape[0],)

    def forward(self, x, train, rng):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dy, shape):
        n, c, h, w = shape
        return np.broadcast_to((dy / (h * w))[:, :, None, None], shape).copy(), {}
