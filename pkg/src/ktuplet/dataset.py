"""Labeled feature-vector datasets: CSV IO, Gaussian synthesis, class splits.

CSV layout is one sample per line, ``label,f_1,...,f_d``, no header.
Random draws use numpy's PCG64 bit generator (``numpy.random.default_rng``).
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ktuplet.errors import ConfigError, ParseError, SplitError


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_index: dict[int, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if feats.shape[0] == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        feats.setflags(write=False)
        labels.setflags(write=False)
        index = {}
        for label in np.unique(labels):
            rows = np.flatnonzero(labels == label)
            rows.setflags(write=False)
            index[int(label)] = rows
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_index", index)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> list[int]:
        return sorted(self.class_index)

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows])


@dataclass(frozen=True)
class SplitSpec:
    train_classes: frozenset[int]
    test_classes: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "train_classes", frozenset(int(c) for c in self.train_classes))
        object.__setattr__(self, "test_classes", frozenset(int(c) for c in self.test_classes))
        shared = self.train_classes & self.test_classes
        if shared:
            raise SplitError(f"classes {sorted(shared)} appear in both train and test")


def _parse_rows(lines, source: str) -> LabeledDataset:
    labels, rows = [], []
    width = None
    for lineno, record in enumerate(csv.reader(lines), start=1):
        if not record or (len(record) == 1 and not record[0].strip()):
            raise ParseError(f"{source}: blank line", lineno)
        if len(record) < 2:
            raise ParseError(f"{source}: expected a label and at least one feature", lineno)
        try:
            label = int(record[0])
        except ValueError:
            raise ParseError(f"{source}: label {record[0]!r} is not an integer", lineno) from None
        if label < 0:
            raise ParseError(f"{source}: label {label} is negative", lineno)
        try:
            values = [float(x) for x in record[1:]]
        except ValueError as exc:
            raise ParseError(f"{source}: non-numeric feature ({exc})", lineno) from None
        if not all(math.isfinite(x) for x in values):
            raise ParseError(f"{source}: non-finite feature", lineno)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(f"{source}: expected {width} features, got {len(values)}", lineno)
        labels.append(label)
        rows.append(values)
    if not rows:
        raise ParseError(f"{source}: no samples")
    return LabeledDataset(np.array(rows), np.array(labels))


def load_csv(path) -> LabeledDataset:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        return _parse_rows(fh, str(path))


def format_csv(ds: LabeledDataset) -> str:
    buf = io.StringIO()
    for label, row in zip(ds.labels.tolist(), ds.features.tolist()):
        buf.write(",".join([str(label)] + [repr(x) for x in row]))
        buf.write("\n")
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    """Write via a sibling temp file and rename, so no partial file is left."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(ds: LabeledDataset, path) -> None:
    atomic_write_text(path, format_csv(ds))


def synth_gaussian(
    num_classes: int, per_class: int, d_in: int, spread: float, seed: int
) -> LabeledDataset:
    """Isotropic Gaussian blobs around class means drawn from U[-1, 1]^d_in.

    Draw order: all class means first, then the noise for class 0, 1, ...
    Rows are grouped by class, labels ``0..num_classes-1``.
    """
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if per_class < 2:
        raise ConfigError("per_class must be >= 2")
    if d_in < 1:
        raise ConfigError("d_in must be >= 1")
    if not spread > 0:
        raise ConfigError("spread must be > 0")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-1.0, 1.0, size=(num_classes, d_in))
    blocks = [means[c] + spread * rng.standard_normal((per_class, d_in)) for c in range(num_classes)]
    labels = np.repeat(np.arange(num_classes), per_class)
    return LabeledDataset(np.vstack(blocks), labels)


def split_by_class(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    known = set(ds.class_index)
    unknown = (spec.train_classes | spec.test_classes) - known
    if unknown:
        raise SplitError(f"classes {sorted(unknown)} are not in the dataset")
    if not spec.train_classes or not spec.test_classes:
        raise SplitError("both sides of a split need at least one class")

    def pick(classes):
        rows = np.sort(np.concatenate([ds.class_index[c] for c in classes]))
        return ds.subset(rows)

    return pick(spec.train_classes), pick(spec.test_classes)


def select_classes(ds: LabeledDataset, classes) -> LabeledDataset:
    """Rows whose label is in ``classes`` (order of ``ds`` preserved)."""
    classes = set(int(c) for c in classes)
    unknown = classes - set(ds.class_index)
    if unknown:
        raise SplitError(f"classes {sorted(unknown)} are not in the dataset")
    rows = np.flatnonzero(np.isin(ds.labels, sorted(classes)))
    return ds.subset(rows)
