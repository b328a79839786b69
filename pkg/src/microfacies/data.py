"""Manifest ingestion, stratified splitting, rebalancing, batching and PPM/PGM I/O.

A manifest is a UTF-8 CSV with header ``path,label,source``.  Relative image
paths are resolved against the manifest's directory.
"""
from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DecodeError, ValidationError
from .tensor import SeededRng

MICROFACIES_CLASSES = (
    "Algae", "Bivalve", "Brachiopod", "Bryozoan", "Calcimicrobe", "Calcisphere",
    "Calpionellid", "Cephalopod", "Coral", "Dolomite", "Echinoderm", "Foraminifer",
    "Gastropod", "Oncolite", "Ooid", "Ostracod", "Pyrite", "Radiolarian", "Sponge",
    "Stromatolite", "Stromatoporoid", "Tubiphytes",
)

# published per-class (train, validation, test) counts of the reference corpus
TABLE1 = {
    "Algae": (1037, 195, 64), "Bivalve": (993, 186, 62), "Brachiopod": (1011, 189, 63),
    "Bryozoan": (1162, 218, 72), "Calcimicrobe": (1036, 194, 64), "Calcisphere": (982, 184, 61),
    "Calpionellid": (1129, 212, 70), "Cephalopod": (1039, 195, 64), "Coral": (1317, 247, 82),
    "Dolomite": (1023, 192, 63), "Echinoderm": (1260, 237, 78), "Foraminifer": (1260, 236, 78),
    "Gastropod": (1135, 213, 70), "Oncolite": (1218, 228, 76), "Ooid": (1168, 219, 73),
    "Ostracod": (1288, 242, 80), "Pyrite": (996, 186, 62), "Radiolarian": (1259, 236, 78),
    "Sponge": (1223, 229, 76), "Stromatolite": (1025, 192, 64), "Stromatoporoid": (998, 187, 62),
    "Tubiphytes": (1102, 207, 68),
}
TABLE1_TOTALS = (24661, 4624, 1530, 30815)

SOURCES = ("literature", "own")
PARTITIONS = ("train", "validation", "test")


@dataclass(frozen=True)
class Record:
    path: str
    label: str
    source: str = "own"


@dataclass
class Manifest:
    records: list
    vocabulary: tuple = MICROFACIES_CLASSES
    root: str = "."

    @property
    def classes(self):
        """Vocabulary entries that occur in the records, in vocabulary order."""
        present = {r.label for r in self.records}
        return tuple(c for c in self.vocabulary if c in present)

    def class_counts(self):
        counts = Counter(r.label for r in self.records)
        return {c: counts[c] for c in self.classes}

    def resolve(self, record):
        p = Path(record.path)
        return p if p.is_absolute() else Path(self.root) / p

    def __len__(self):
        return len(self.records)


def load_manifest(path, vocabulary=MICROFACIES_CLASSES) -> Manifest:
    """Parse a manifest CSV.  ``vocabulary=None`` infers the class list (sorted)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:3]] != ["path", "label", "source"]:
            raise ValidationError(f"{path}: header must be 'path,label,source', got {reader.fieldnames}")
        rows = [(row["path"].strip(), row["label"].strip(), (row["source"] or "").strip()) for row in reader]
    return _validated(rows, vocabulary, str(path.parent))


def _validated(rows, vocabulary, root):
    if vocabulary is None:
        vocabulary = tuple(sorted({label for _, label, _ in rows}))
    vocab = set(vocabulary)
    unknown = sorted({label for _, label, _ in rows if label not in vocab})
    if unknown:
        raise ValidationError(f"labels not in the class vocabulary: {unknown}")
    bad_source = sorted({s for _, _, s in rows if s not in SOURCES})
    if bad_source:
        raise ValidationError(f"source must be one of {SOURCES}, got {bad_source}")
    seen, dupes = set(), []
    for p, _, _ in rows:
        if p in seen:
            dupes.append(p)
        seen.add(p)
    if dupes:
        raise ValidationError(f"duplicate image paths: {dupes[:10]}")
    return Manifest([Record(*r) for r in rows], tuple(vocabulary), root)


def write_manifest(manifest: Manifest, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "source"])
        for r in manifest.records:
            w.writerow([r.path, r.label, r.source])


# --------------------------------------------------------------------------
# Splitting
# --------------------------------------------------------------------------

def split_counts(n):
    """``(train, validation, test)`` for a class of ``n`` records.

    train = ceil(0.8 n), test = floor(0.05 n), validation takes the rest.
    Integer arithmetic avoids float rounding at exact multiples.
    """
    train = -(-4 * n // 5)
    test = n // 20
    return train, n - train - test, test


@dataclass
class SplitAssignment:
    partition: dict  # record path -> partition name
    seed: int
    manifest: Manifest = field(repr=False)

    def records(self, name):
        if name not in PARTITIONS:
            raise ValueError(f"unknown partition {name!r}")
        return [r for r in self.manifest.records if self.partition[r.path] == name]

    def counts(self):
        table = {c: dict.fromkeys(PARTITIONS, 0) for c in self.manifest.classes}
        for r in self.manifest.records:
            table[r.label][self.partition[r.path]] += 1
        return table

    def export_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "partition", "seed"])
            for r in self.manifest.records:
                w.writerow([r.path, self.partition[r.path], self.seed])


def stratified_split(manifest: Manifest, seed=0) -> SplitAssignment:
    by_class = {}
    for r in manifest.records:
        by_class.setdefault(r.label, []).append(r)
    small = {c: len(rs) for c, rs in by_class.items() if len(rs) < 3}
    if small:
        raise ValidationError(f"classes need at least 3 records to split: {small}")
    partition = {}
    for label in manifest.classes:
        recs = by_class[label]
        train, val, _ = split_counts(len(recs))
        order = SeededRng(seed, "split", label).permutation(len(recs))
        for rank, i in enumerate(order):
            partition[recs[i].path] = "train" if rank < train else "validation" if rank < train + val else "test"
    return SplitAssignment(partition, seed, manifest)


def load_split(path, manifest: Manifest) -> SplitAssignment:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    partition = {row["path"]: row["partition"] for row in rows}
    missing = [r.path for r in manifest.records if r.path not in partition]
    if missing:
        raise ValidationError(f"split file lacks {len(missing)} manifest records, e.g. {missing[:3]}")
    bad = {p for p in partition.values() if p not in PARTITIONS}
    if bad:
        raise ValidationError(f"unknown partitions {sorted(bad)}")
    seed = int(rows[0]["seed"]) if rows else 0
    return SplitAssignment(partition, seed, manifest)


def rebalance(manifest: Manifest, cap, seed=0) -> Manifest:
    """Randomly undersample every class above ``cap`` records down to ``cap``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    by_class = {}
    for r in manifest.records:
        by_class.setdefault(r.label, []).append(r)
    keep = set()
    for label, recs in by_class.items():
        if len(recs) <= cap:
            keep.update(r.path for r in recs)
        else:
            chosen = SeededRng(seed, "rebalance", label).permutation(len(recs))[:cap]
            keep.update(recs[i].path for i in chosen)
    return Manifest([r for r in manifest.records if r.path in keep], manifest.vocabulary, manifest.root)


def batch_iter(records, batch_size, shuffle_seed, epoch):
    """Yield batches covering ``records`` once, in a seeded per-epoch order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = SeededRng(shuffle_seed, "shuffle", epoch).permutation(len(records))
    for start in range(0, len(records), batch_size):
        yield [records[i] for i in order[start:start + batch_size]]


# --------------------------------------------------------------------------
# PPM / PGM
# --------------------------------------------------------------------------

def _read_token(data, pos):
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DecodeError("unexpected end of header", start)
    return data[start:pos], pos


def decode_image(data: bytes) -> np.ndarray:
    """Decode binary PPM (P6) or PGM (P5) with maxval 255 to ``[c, h, w]`` in [0, 1]."""
    data = bytes(data)
    if data[:2] not in (b"P5", b"P6"):
        raise DecodeError(f"bad magic {data[:2]!r}, expected P5 or P6", 0)
    channels = 3 if data[:2] == b"P6" else 1
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        start = pos
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise DecodeError(f"{name} is not a decimal integer: {tok!r}", start)
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise DecodeError(f"maxval must be 255, got {maxval}", pos)
    if w < 1 or h < 1:
        raise DecodeError(f"invalid dimensions {w}x{h}", pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DecodeError("missing whitespace after header", pos)
    pos += 1
    need = w * h * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise DecodeError(f"truncated payload: need {need} bytes, found {len(payload)}", pos + len(payload))
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_image(img) -> bytes:
    """Encode ``[1|3, h, w]`` values in [0, 1] as P5/P6 bytes."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    if c not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {c}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode("ascii")
    return header + q.transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_image(path, img):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(encode_image(img))
