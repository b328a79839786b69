"""Checkpoint persistence, pretrained-weight loading and freeze policies.

Checkpoint layout (all integers little-endian)::

    b"MFNC"  u32 version
    u32 len, utf-8 architecture id
    u32 len, utf-8 JSON metadata
    u32 count, then per tensor:
        u32 len, utf-8 name; u8 dtype code; u8 rank; rank x u64 dims; payload
    u8 has_optimizer
    [u32 len, utf-8 JSON {variant, hyper, step}; u32 count; tensors as above]
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError
from .network import Network
from .optim import OptimizerState

MAGIC = b"MFNC"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    arch: str
    tensors: dict
    metadata: dict = field(default_factory=dict)
    optimizer: OptimizerState | None = None


# --------------------------------------------------------------------------
# Writing
# --------------------------------------------------------------------------

def _write_str(fh, s):
    b = s.encode("utf-8")
    fh.write(struct.pack("<I", len(b)))
    fh.write(b)


def _write_tensors(fh, tensors):
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise FormatError(f"unsupported dtype {arr.dtype} for tensor {name!r}", "dtype")
        _write_str(fh, name)
        fh.write(struct.pack("<BB", DTYPE_CODES[dt], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def checkpoint_bytes(arch, tensors, metadata=None, optimizer: OptimizerState | None = None) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    _write_str(fh, arch)
    _write_str(fh, json.dumps(metadata or {}, sort_keys=True))
    _write_tensors(fh, tensors)
    if optimizer is None:
        fh.write(b"\x00")
    else:
        fh.write(b"\x01")
        _write_str(fh, json.dumps({"variant": optimizer.variant, "hyper": optimizer.hyper,
                                   "step": optimizer.step}, sort_keys=True))
        _write_tensors(fh, dict(sorted(optimizer.moments.items())))
    return fh.getvalue()


def save_checkpoint(net: Network, optimizer: OptimizerState | None, metadata, path):
    """Persist parameters, buffers, optional optimizer state and metadata."""
    meta = {"n_classes": net.n_classes, "input_shape": list(net.input_shape), **net.info, **(metadata or {})}
    data = checkpoint_bytes(net.arch, net.state(), meta, optimizer)
    with open(path, "wb") as fh:
        fh.write(data)


# --------------------------------------------------------------------------
# Reading
# --------------------------------------------------------------------------

class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what} at byte {self.pos}", what)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what):
        (n,) = self.unpack("<I", what)
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid utf-8", what) from None

    def tensors(self, what):
        (count,) = self.unpack("<I", f"{what} count")
        out = {}
        for _ in range(count):
            name = self.string(f"{what} name")
            if name in out:
                raise FormatError(f"duplicate tensor name {name!r}", "name")
            code, rank = self.unpack("<BB", f"{name} dtype/rank")
            if code not in CODE_DTYPES:
                raise FormatError(f"unknown dtype code {code} for {name!r}", "dtype")
            dims = self.unpack(f"<{rank}Q", f"{name} dims")
            dt = CODE_DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            payload = self.take(nbytes, f"{name} payload")
            out[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        return out


def parse_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(bytes(data))
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", "magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {VERSION}", "version")
    arch = r.string("architecture")
    try:
        metadata = json.loads(r.string("metadata"))
    except json.JSONDecodeError as e:
        raise FormatError(f"metadata is not valid JSON: {e}", "metadata") from None
    tensors = r.tensors("tensor")
    (flag,) = r.unpack("<B", "optimizer flag")
    optimizer = None
    if flag == 1:
        head = json.loads(r.string("optimizer"))
        moments = r.tensors("moment")
        optimizer = OptimizerState(head["variant"], head["hyper"], int(head["step"]), moments)
    elif flag != 0:
        raise FormatError(f"invalid optimizer flag {flag}", "optimizer flag")
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after checkpoint", "trailer")
    return Checkpoint(arch, tensors, metadata, optimizer)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def restore_state(net: Network, ckpt: Checkpoint):
    """Copy every tensor of an exactly matching checkpoint into ``net``."""
    state = net.state()
    if set(state) != set(ckpt.tensors):
        diff = sorted(set(state) ^ set(ckpt.tensors))
        raise FormatError(f"checkpoint tensors do not match the network: {diff[:5]}", "tensor")
    for name, arr in state.items():
        src = ckpt.tensors[name]
        if src.shape != arr.shape:
            raise DimensionError(f"{name}: checkpoint shape {src.shape} != network shape {arr.shape}")
        arr[...] = src
    return net


# --------------------------------------------------------------------------
# Pretrained loading
# --------------------------------------------------------------------------

@dataclass
class LoadReport:
    loaded: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    reinitialized: list = field(default_factory=list)


def load_pretrained(net: Network, ckpt: Checkpoint, strict=False, seed=0) -> LoadReport:
    """Copy tensors whose name and shape match; the classifier head is
    reinitialized whenever it does not match (e.g. a different class count).

    The report partitions every parameter and buffer name of ``net``.
    Non-strict mode skips other mismatches, leaving their current values;
    strict mode raises :class:`DimensionError` naming the offender.
    """
    if ckpt.arch != net.arch:
        raise ValueError(f"checkpoint architecture {ckpt.arch!r} does not match network {net.arch!r}")
    report = LoadReport()
    head_prefix = net.head + "."
    for name, arr in net.state().items():
        src = ckpt.tensors.get(name)
        if src is not None and src.shape == arr.shape:
            arr[...] = src
            report.loaded.append(name)
        elif name.startswith(head_prefix):
            report.reinitialized.append(name)
        elif strict:
            got = "missing" if src is None else f"shape {src.shape}"
            raise DimensionError(f"parameter {name}: checkpoint has {got}, network expects {arr.shape}")
        else:
            report.skipped.append(name)
    net.reinitialize([n for n in report.reinitialized if n in net.params], seed)
    return report


# --------------------------------------------------------------------------
# Freezing
# --------------------------------------------------------------------------

FREEZE_VARIANTS = ("all_layers", "half_layers", "last_layer", "none_frozen")


@dataclass(frozen=True)
class FreezePolicy:
    """Which top-level parts stay trainable.

    ``all_layers`` and ``none_frozen`` both train everything.
    ``half_layers`` trains the architecture's posterior half and
    ``last_layer`` only the classifier head.  A non-empty ``trainable`` tuple
    of name prefixes overrides the variant: everything else is frozen.
    """

    variant: str = "none_frozen"
    trainable: tuple = ()

    def __post_init__(self):
        if self.variant not in FREEZE_VARIANTS:
            raise ValueError(f"unknown freeze policy {self.variant!r}; expected one of {FREEZE_VARIANTS}")


def trainable_prefixes(net: Network, policy: FreezePolicy):
    if policy.trainable:
        return tuple(policy.trainable)
    if policy.variant == "half_layers":
        return net.half_trainable
    if policy.variant == "last_layer":
        return (net.head,)
    return None


def apply_freeze_policy(net: Network, policy: FreezePolicy) -> int:
    """Set ``net.frozen`` from the policy; returns the number of frozen tensors."""
    keep = trainable_prefixes(net, policy)
    net.unfreeze_all()
    if keep is not None:
        train = set()
        for p in keep:
            train.update(net.resolve(p))
        net.frozen.update(n for n in net.params if n not in train)
    return len(net.frozen)
