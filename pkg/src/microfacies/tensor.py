"""Tensor primitives, precision mode and the seeded random generator.

Tensors are plain ``numpy.ndarray`` objects in channels-first
``[n, c, h, w]`` layout.  The numeric precision of freshly created
parameters and inputs is a process-wide setting: ``fp32`` for training and
``fp64`` for gradient checking.  It can be set with the
``MICROFACIES_PRECISION`` environment variable or :func:`set_precision`.
"""
from __future__ import annotations

import contextlib
import os
import zlib
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError

PRECISION_ENV = "MICROFACIES_PRECISION"
_DTYPES = {"fp32": np.float32, "fp64": np.float64}
_precision = os.environ.get(PRECISION_ENV, "fp32").lower()
if _precision not in _DTYPES:
    raise ValueError(f"{PRECISION_ENV} must be one of {sorted(_DTYPES)}, got {_precision!r}")


def get_precision() -> str:
    return _precision


def get_dtype() -> type:
    return _DTYPES[_precision]


def set_precision(name: str) -> None:
    global _precision
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _precision = name


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the global precision mode."""
    previous = _precision
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def _stream_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream keys must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


class SeededRng:
    """Counter-based (Philox) random stream keyed by a seed and optional sub-keys.

    ``SeededRng(7, "dropout", 3)`` always yields the same sequence, on every
    platform, independent of any other stream.  String keys are hashed with
    CRC-32 so they are stable across processes.
    """

    def __init__(self, seed: int, *keys):
        self.seed = int(seed)
        self.keys = tuple(keys)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF] + [_stream_key(k) for k in keys]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def spawn(self, *keys) -> "SeededRng":
        return SeededRng(self.seed, *self.keys, *keys)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, shape=(), low=0.0, high=1.0):
        if not low < high:
            raise ValueError(f"uniform requires low < high, got ({low}, {high})")
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=(), mean=0.0, std=1.0):
        if not std > 0:
            raise ValueError(f"normal requires std > 0, got {std}")
        return self._gen.normal(mean, std, size=shape)

    def random(self, shape=()):
        return self._gen.random(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)


def seeded_random(rng: SeededRng, shape, dist: str = "uniform", a: float = 0.0,
                  b: float = 1.0, dtype=None) -> np.ndarray:
    """Draw a tensor from ``uniform(a, b)`` or ``normal(mean=a, std=b)``."""
    dtype = dtype or get_dtype()
    if dist == "uniform":
        out = rng.uniform(shape, a, b)
    elif dist == "normal":
        out = rng.normal(shape, a, b)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return np.asarray(out, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def pad2d(x: np.ndarray, pad) -> np.ndarray:
    """Zero-pad the two trailing spatial axes of an ``[n, c, h, w]`` tensor."""
    ph, pw = _pair(pad)
    if ph < 0 or pw < 0:
        raise ValueError(f"padding must be non-negative, got {pad!r}")
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def center_crop2d(x: np.ndarray, pad) -> np.ndarray:
    """Remove ``pad`` rows/columns from each spatial border; inverse of :func:`pad2d`."""
    ph, pw = _pair(pad)
    h, w = x.shape[-2:]
    return x[..., ph:h - ph, pw:w - pw]


def topk_indices(v: Sequence[float], k: int) -> list[int]:
    """Indices of the ``k`` largest values, descending, ties to the lower index."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {v.shape}")
    if not 1 <= k <= v.size:
        raise ValueError(f"k must be in [1, {v.size}], got {k}")
    order = np.argsort(-v, kind="stable")
    return [int(i) for i in order[:k]]


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x
