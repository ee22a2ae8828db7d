"""Canonical fixed-length byte dataset: binary format, CSV import, stratified split."""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import EmptyClass, LengthMismatch, MagicMismatch, SchemaVersionMismatch

MAGIC = b"ETCNASDS"
VERSION = 1
_HEADER = struct.Struct("<8sIQII")  # magic, version, n_samples, feature_len, n_classes
_NAME_LEN = struct.Struct("<H")


@dataclass
class Dataset:
    features: np.ndarray  # (N, L) uint8
    labels: np.ndarray  # (N,) int64
    class_names: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.labels), -1)
        if len(self.features) != len(self.labels):
            raise LengthMismatch(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise LengthMismatch(f"labels outside the {len(self.class_names)}-entry class table")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_len(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], list(self.class_names))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


def write_dataset(ds: Dataset, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(ds), ds.feature_len, ds.n_classes))
        for name in ds.class_names:
            raw = name.encode("utf-8")
            fh.write(_NAME_LEN.pack(len(raw)) + raw)
        records = np.zeros(len(ds), dtype=[("x", np.uint8, (ds.feature_len,)), ("y", "<u4")])
        records["x"] = ds.features
        records["y"] = ds.labels
        fh.write(records.tobytes())


def read_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:8] != MAGIC:
        raise MagicMismatch(f"{path}: not a dataset file")
    _, version, n, feature_len, n_classes = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise SchemaVersionMismatch(f"{path}: dataset version {version}, expected {VERSION}")
    pos = _HEADER.size
    names = []
    for _ in range(n_classes):
        if pos + _NAME_LEN.size > len(raw):
            raise LengthMismatch(f"{path}: class-name table truncated")
        (size,) = _NAME_LEN.unpack_from(raw, pos)
        pos += _NAME_LEN.size
        names.append(raw[pos:pos + size].decode("utf-8"))
        pos += size
    dtype = np.dtype([("x", np.uint8, (feature_len,)), ("y", "<u4")])
    expected = n * dtype.itemsize
    if len(raw) - pos != expected:
        raise LengthMismatch(f"{path}: expected {expected} record bytes for {n} samples, found {len(raw) - pos}")
    records = np.frombuffer(raw, dtype=dtype, count=n, offset=pos)
    return Dataset(records["x"].copy(), records["y"].astype(np.int64), names)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def import_csv(path: str | Path, class_names: list[str] | None = None) -> Dataset:
    """One row = comma-separated byte values followed by the label (name or index).

    An optional header row is recognised by a non-numeric first field. Without
    ``class_names`` the classes are the sorted distinct label values.
    """
    rows: list[list[int]] = []
    raw_labels: list[str] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not _is_number(row[0]):
                width = len(row) - 1
                continue
            feats, label = row[:-1], row[-1].strip()
            if width is None:
                width = len(feats)
            if len(feats) != width:
                raise LengthMismatch(f"{path}: row {lineno} has {len(feats)} features, expected {width}")
            values = [int(float(v)) for v in feats]
            if any(not 0 <= v <= 255 for v in values):
                raise LengthMismatch(f"{path}: row {lineno} has values outside 0..255")
            rows.append(values)
            raw_labels.append(label)
    if class_names is None:
        if raw_labels and all(lab.lstrip("-").isdigit() for lab in raw_labels):
            k = max(int(lab) for lab in raw_labels) + 1
            class_names = [str(i) for i in range(k)]
        else:
            class_names = sorted(set(raw_labels))
    index = {name: i for i, name in enumerate(class_names)}
    labels = [index[lab] if lab in index else int(lab) for lab in raw_labels]
    features = np.array(rows, dtype=np.uint8).reshape(len(rows), width or 0)
    return Dataset(features, np.array(labels, dtype=np.int64), list(class_names))


def _class_split_sizes(n: int, fraction: float) -> int:
    """Train count for a class of size ``n``: round half up, capped at n - 1 when n > 1."""
    k = int(np.floor(fraction * n + 0.5))
    return min(k, n - 1) if n > 1 else k


def stratified_indices(labels, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class seeded shuffle; returns (first-part indices, rest) with ~``fraction`` in the first."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    first, rest = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        k = _class_split_sizes(len(idx), fraction)
        first.append(idx[:k])
        rest.append(idx[k:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    return cat(first), cat(rest)


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    counts = ds.class_counts()
    for cls, n in enumerate(counts):
        if n == 0:
            warnings.warn(f"class {ds.class_names[cls]!r} has no samples", EmptyClass, stacklevel=2)
        elif n < 5:
            k = _class_split_sizes(int(n), train_fraction)
            warnings.warn(f"class {ds.class_names[cls]!r} has only {n} samples; split {k}/{n - k}",
                          EmptyClass, stacklevel=2)
    train_idx, test_idx = stratified_indices(ds.labels, train_fraction, seed)
    return ds.subset(train_idx), ds.subset(test_idx)
