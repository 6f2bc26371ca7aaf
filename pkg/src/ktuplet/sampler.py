"""Tuplet batches for embedding training and C-way K-shot episodes.

Every sampler takes a ``numpy.random.Generator``; identical dataset,
parameters and generator state give identical draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ktuplet.dataset import LabeledDataset
from ktuplet.errors import ConfigError, SamplingError


@dataclass(frozen=True)
class Tuplet:
    anchor: int
    positive: int
    negatives: tuple[int, ...]


@dataclass(frozen=True)
class TupletBatch:
    """Row indices of B tuplets stored as arrays for vectorized lookup."""

    anchors: np.ndarray  # (B,)
    positives: np.ndarray  # (B,)
    negatives: np.ndarray  # (B, K_neg)

    def __len__(self):
        return self.anchors.shape[0]

    @property
    def k_neg(self) -> int:
        return self.negatives.shape[1]

    @property
    def tuplets(self) -> list[Tuplet]:
        return [
            Tuplet(int(a), int(p), tuple(int(n) for n in negs))
            for a, p, negs in zip(self.anchors, self.positives, self.negatives)
        ]


@dataclass(frozen=True)
class Episode:
    way: int
    shot: int
    support_rows: np.ndarray  # (way * shot,), grouped by class
    support_labels: np.ndarray
    query_rows: np.ndarray  # (way * n_query,), grouped by class
    query_labels: np.ndarray

    @property
    def classes(self) -> np.ndarray:
        """Episode classes in support order (one entry per way)."""
        return self.support_labels[:: self.shot]

    @property
    def support(self) -> list[tuple[int, int]]:
        return list(zip(self.support_rows.tolist(), self.support_labels.tolist()))

    @property
    def query(self) -> list[tuple[int, int]]:
        return list(zip(self.query_rows.tolist(), self.query_labels.tolist()))


class _OutOfClassPool:
    """Cached complement row sets, one per class."""

    def __init__(self, ds: LabeledDataset):
        self.ds = ds
        self._pool = {}

    def __getitem__(self, label):
        if label not in self._pool:
            self._pool[label] = np.flatnonzero(self.ds.labels != label)
        return self._pool[label]


def sample_tuplets(ds: LabeledDataset, B: int, K_neg: int, rng: np.random.Generator) -> TupletBatch:
    """Anchors uniform over rows, positive uniform over the rest of the class,
    negatives uniform (with replacement) over every out-of-class row."""
    if B < 1:
        raise ConfigError("batch size B must be >= 1")
    if K_neg < 1:
        raise ConfigError("K_neg must be >= 1")
    if len(ds.class_index) < 2:
        raise SamplingError("tuplet sampling needs at least two classes")
    pool = _OutOfClassPool(ds)
    anchors = rng.integers(0, len(ds), size=B)
    positives = np.empty(B, dtype=np.int64)
    negatives = np.empty((B, K_neg), dtype=np.int64)
    for i, a in enumerate(anchors):
        label = int(ds.labels[a])
        same = ds.class_index[label]
        if same.size < 2:
            raise SamplingError(f"class {label} has a single sample; no positive exists")
        j = rng.integers(0, same.size - 1)
        pos = same[j]
        if pos == a:
            pos = same[-1]
        positives[i] = pos
        others = pool[label]
        negatives[i] = others[rng.integers(0, others.size, size=K_neg)]
    return TupletBatch(anchors.astype(np.int64), positives, negatives)


def sample_episode(
    ds: LabeledDataset, C: int, K_shot: int, n_query: int, rng: np.random.Generator
) -> Episode:
    if C < 1 or K_shot < 1 or n_query < 1:
        raise ConfigError("C, K_shot and n_query must all be >= 1")
    classes = ds.classes
    if len(classes) < C:
        raise SamplingError(f"{C}-way episode needs {C} classes, dataset has {len(classes)}")
    need = K_shot + n_query
    chosen = rng.choice(np.asarray(classes), size=C, replace=False)
    s_rows, q_rows = [], []
    for label in chosen:
        rows = ds.class_index[int(label)]
        if rows.size < need:
            raise SamplingError(f"class {int(label)} has {rows.size} samples, episode needs {need}")
        picked = rng.choice(rows, size=need, replace=False)
        s_rows.append(picked[:K_shot])
        q_rows.append(picked[K_shot:])
    return Episode(
        way=C,
        shot=K_shot,
        support_rows=np.concatenate(s_rows).astype(np.int64),
        support_labels=np.repeat(chosen, K_shot).astype(np.int64),
        query_rows=np.concatenate(q_rows).astype(np.int64),
        query_labels=np.repeat(chosen, n_query).astype(np.int64),
    )


def batch_episodes(
    ds: LabeledDataset, count: int, C: int, K_shot: int, n_query: int, rng: np.random.Generator
) -> list[Episode]:
    if count < 1:
        raise ConfigError("episode count must be >= 1")
    return [sample_episode(ds, C, K_shot, n_query, rng) for _ in range(count)]
