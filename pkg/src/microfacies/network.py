"""A built network: layer graph, named parameter registry and freeze flags."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .blocks import Sequential
from .errors import DimensionError, StateError
from .layers import GlobalAvgPool, Layer
from .tensor import SeededRng, get_dtype

_tokens = itertools.count(1)


def _walk(layer: Layer, prefix=""):
    yield prefix, layer
    for name, child in layer.children():
        yield from _walk(child, f"{prefix}{name}.")


class Network:
    """Owns the root :class:`Sequential` of an architecture.

    ``params`` and ``buffers`` are flat ordered dicts keyed by dotted names;
    their arrays are shared with the layers, so in-place updates (optimizer
    steps, checkpoint loads) are visible to the forward pass immediately.
    """

    def __init__(self, root: Sequential, input_shape, n_classes, arch="custom",
                 head="logits", half_trainable=(), info=None):
        self.root = root
        self.arch = arch
        self.input_shape = tuple(input_shape)
        self.n_classes = n_classes
        self.head = head
        self.half_trainable = tuple(half_trainable)
        self.info = dict(info or {})
        self.frozen: set[str] = set()
        self.dtype = None
        out = root.build(self.input_shape)
        if out != (n_classes,):
            raise DimensionError(f"network output {out} does not match {n_classes} classes")
        self._owners = {}
        for prefix, layer in _walk(root):
            for pname in layer.param_shapes:
                self._owners[prefix + pname] = (layer, pname, False)
            for bname in layer.buffer_shapes:
                self._owners[prefix + bname] = (layer, bname, True)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._token = next(_tokens)

    # ---- construction -----------------------------------------------------

    def param_shapes(self):
        return {name: layer.param_shapes[p] for name, (layer, p, buf) in self._owners.items() if not buf}

    def parameter_count(self):
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def top_level(self):
        return [name for name, _ in self.root.layers]

    def initialize(self, seed=0, dtype=None):
        """Allocate every parameter; each name draws from its own seeded stream."""
        self.dtype = np.dtype(dtype or get_dtype())
        for prefix, layer in _walk(self.root):
            layer.init_buffers(self.dtype)
            for pname in layer.param_shapes:
                layer.params[pname] = layer.init_param(pname, SeededRng(seed, "init", prefix + pname), self.dtype)
        self._collect()
        return self

    def reinitialize(self, names, seed=0):
        for name in names:
            layer, pname, _ = self._owners[name]
            fresh = layer.init_param(pname, SeededRng(seed, "init", name), self.dtype)
            layer.params[pname][...] = fresh

    def _collect(self):
        self.params = {}
        self.buffers = {}
        for name, (layer, p, buf) in self._owners.items():
            (self.buffers if buf else self.params)[name] = (layer.buffers if buf else layer.params)[p]
        self._token = next(_tokens)

    @property
    def materialized(self):
        return self.dtype is not None

    def astype(self, dtype):
        """Convert parameters and buffers in place to another float dtype."""
        self.dtype = np.dtype(dtype)
        for name, (layer, p, buf) in self._owners.items():
            store = layer.buffers if buf else layer.params
            store[p] = store[p].astype(self.dtype)
        self._collect()
        return self

    def state(self):
        """Parameters and buffers together (what a checkpoint persists)."""
        return {**self.params, **self.buffers}

    # ---- freezing ---------------------------------------------------------

    def resolve(self, prefix):
        names = [n for n in self.params if n == prefix or n.startswith(prefix + ".")]
        if not names:
            raise ValueError(f"prefix {prefix!r} matches no parameter")
        return names

    def freeze(self, prefixes):
        for p in prefixes:
            self.frozen.update(self.resolve(p))

    def unfreeze_all(self):
        self.frozen.clear()

    def trainable_names(self):
        return [n for n in self.params if n not in self.frozen]


@dataclass
class ForwardCache:
    token: int
    caches: list = field(repr=False)
    dtype: object = None


def _as_input(net, x):
    x = np.asarray(x)
    if tuple(x.shape[1:]) != net.input_shape:
        raise DimensionError(f"network expects input [n, {', '.join(map(str, net.input_shape))}], got {x.shape}")
    return x.astype(net.dtype, copy=False)


def network_forward(net: Network, x, mode="infer", rng=None, keep_cache=None):
    """Evaluate the network; returns ``(logits, cache)``.

    The cache is only kept in ``train`` mode unless ``keep_cache`` says otherwise.
    """
    if not net.materialized:
        raise StateError("network parameters have not been initialized")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    train = mode == "train"
    if keep_cache is None:
        keep_cache = train
    logits, caches = net.root.forward(_as_input(net, x), train, rng)
    return logits, (ForwardCache(net._token, caches, net.dtype) if keep_cache else None)


def network_backward(net: Network, cache: ForwardCache, grad_logits):
    """Gradient map over trainable parameters only."""
    if cache is None or not isinstance(cache, ForwardCache) or cache.caches is None:
        raise StateError("no forward cache available; run network_forward in train mode first")
    if cache.token != net._token:
        raise StateError("forward cache belongs to a different network or a stale parameter set")
    _, grads = net.root.backward(np.asarray(grad_logits, dtype=net.dtype), cache.caches)
    cache.caches = None
    return {n: grads[n] for n in net.params if n not in net.frozen}


def _locate(root, node_name):
    layer = root
    path = []
    for part in node_name.split("."):
        if not isinstance(layer, Sequential):
            raise ValueError(f"node {node_name!r} is not addressable")
        try:
            idx = [n for n, _ in layer.layers].index(part)
        except ValueError:
            raise ValueError(f"unknown node {node_name!r}") from None
        path.append((layer, idx))
        layer = layer.layers[idx][1]
    return path


def forward_to(net: Network, x, node_name, mode="infer", rng=None):
    """Output of the named node (dotted path through sequential containers)."""
    path = _locate(net.root, node_name)
    x = _as_input(net, x)
    train = mode == "train"

    def run(depth, x):
        seq, idx = path[depth]
        for _, layer in seq.layers[:idx]:
            x, _ = layer.forward(x, train, rng)
        target = seq.layers[idx][1]
        if depth + 1 == len(path):
            return target.forward(x, train, rng)[0]
        return run(depth + 1, x)

    return run(0, x)


def extract_features(net: Network, x, node_name):
    """Global-average-pooled activations of ``node_name``, shape ``[n, channels]``."""
    path = _locate(net.root, node_name)
    seq, idx = path[-1]
    shape = seq.layers[idx][1].out_shape
    if shape is None or len(shape) != 3:
        raise ValueError(f"node {node_name!r} output {shape} is not spatially poolable")
    act = forward_to(net, x, node_name)
    return GlobalAvgPool().forward(act, False, None)[0]


def node_output_shape(net: Network, node_name):
    seq, idx = _locate(net.root, node_name)[-1]
    return seq.layers[idx][1].out_shape
