"""Learned similarity between a query embedding and a class feature.

The input is the concatenation ``[f_q, f_s]`` (query first). A rectifier
hidden layer stands in for the convolutional blocks of the image version,
followed by the 8-unit rectifier layer and a single sigmoid output.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from ktuplet import layers
from ktuplet.dataset import LabeledDataset
from ktuplet.embedding import Adam, EmbeddingModel
from ktuplet.errors import ConfigError, DimensionError
from ktuplet.losses import mse_similarity_loss
from ktuplet.numeric import as_matrix, as_vector, l2_normalize
from ktuplet.sampler import Episode, batch_episodes

DEFAULT_HIDDEN = 64
HEAD_WIDTH = 8


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Comparator:
    activation = "relu"
    output = "sigmoid"

    def __init__(self, layer_dims, params):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if self.layer_dims[-1] != 1 or self.layer_dims[0] % 2:
            raise DimensionError("comparator needs an even input width and a single output")
        self.params = [np.array(p, dtype=np.float64) for p in params]
        layers.check_params(self.layer_dims, self.params)

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, hidden: int = DEFAULT_HIDDEN) -> "Comparator":
        dims = (2 * d, hidden, HEAD_WIDTH, 1)
        return cls(dims, layers.init_params(dims, rng))

    @property
    def dim(self) -> int:
        """Width of each of the two concatenated embeddings."""
        return self.layer_dims[0] // 2

    def copy(self) -> "Comparator":
        return copy.deepcopy(self)

    def __eq__(self, other):
        if not isinstance(other, Comparator):
            return NotImplemented
        return self.layer_dims == other.layer_dims and all(
            np.array_equal(a, b) for a, b in zip(self.params, other.params)
        )

    def _pairs(self, Q, S) -> np.ndarray:
        Q = as_matrix(Q)
        S = as_matrix(S)
        if Q.shape != S.shape or Q.shape[1] != self.dim:
            raise DimensionError(f"expected two (n, {self.dim}) arrays, got {Q.shape} and {S.shape}")
        return np.hstack([Q, S])

    def score(self, f_q, f_s) -> float:
        f_q = as_vector(f_q)
        f_s = as_vector(f_s)
        return float(self.score_pairs(f_q[None, :], f_s[None, :])[0])

    def score_pairs(self, Q, S) -> np.ndarray:
        """Scores for row-aligned query/support pairs."""
        z, _ = layers.forward(self.params, self._pairs(Q, S))
        return _sigmoid(z[:, 0])

    def forward_cached(self, Q, S):
        z, inputs = layers.forward(self.params, self._pairs(Q, S))
        s = _sigmoid(z[:, 0])
        return s, (inputs, s)

    def backward_cached(self, cache, grad_scores) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
        """Parameter gradients and gradients w.r.t. the query and support rows."""
        inputs, s = cache
        g = (np.asarray(grad_scores, dtype=np.float64) * s * (1.0 - s))[:, None]
        grads, g_in = layers.backward(self.params, inputs, g)
        return grads, g_in[:, : self.dim], g_in[:, self.dim :]


def class_feature(embeddings, shot: int | None = None, renormalize: bool = False) -> np.ndarray:
    """Element-wise sum of one class's support embeddings."""
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim == 1:
        E = E[None, :]
    if E.ndim != 2 or E.shape[0] == 0:
        raise DimensionError("class_feature needs at least one support embedding")
    if shot is not None and E.shape[0] != shot:
        raise DimensionError(f"expected {shot} support embeddings, got {E.shape[0]}")
    out = E[0].copy()
    for row in E[1:]:
        out += row
    return l2_normalize(out) if renormalize else out


def episode_class_features(episode: Episode, support_emb: np.ndarray, renormalize: bool = False):
    """``(features, labels)`` per class, in episode class order."""
    feats = [
        class_feature(support_emb[i * episode.shot : (i + 1) * episode.shot], episode.shot, renormalize)
        for i in range(episode.way)
    ]
    return np.vstack(feats), episode.classes.copy()


@dataclass(frozen=True)
class ComparatorConfig:
    epochs: int = 100
    batches_per_epoch: int = 10
    episodes_per_batch: int = 4
    ways: int = 5
    shots: int = 1
    queries: int = 15
    lr: float = 0.001
    renorm_class_feature: bool = False
    finetune_embedding: bool = False

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "episodes_per_batch", "ways", "shots", "queries"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ComparatorEpoch:
    epoch: int
    loss: float


def _episode_pairs(episodes):
    """Index plan pairing every query with every class of its episode."""
    q_idx, c_idx, targets = [], [], []
    q_off = c_off = 0
    for ep in episodes:
        nq = ep.query_rows.size
        q_idx.append(q_off + np.repeat(np.arange(nq), ep.way))
        c_idx.append(c_off + np.tile(np.arange(ep.way), nq))
        targets.append((ep.query_labels[:, None] == ep.classes[None, :]).ravel())
        q_off += nq
        c_off += ep.way
    return np.concatenate(q_idx), np.concatenate(c_idx), np.concatenate(targets).astype(np.float64)


def episode_batch_loss(
    comparator: Comparator,
    episodes,
    features: np.ndarray,
    embedding: EmbeddingModel | None = None,
    embedded: np.ndarray | None = None,
    renorm_class_feature: bool = False,
):
    """MSE over every (query, class) pair of a list of episodes.

    Supply either ``embedded`` (precomputed rows, embedding frozen) or
    ``embedding`` (gradients also flow into it). Returns
    ``(loss, comparator_grads, embedding_grads_or_None)``.
    """
    K = episodes[0].shot
    s_rows = np.concatenate([e.support_rows for e in episodes])
    q_rows = np.concatenate([e.query_rows for e in episodes])
    if embedded is not None:
        s_emb, q_emb = embedded[s_rows], embedded[q_rows]
    else:
        f, emb_cache = embedding.forward_cached(features[np.concatenate([s_rows, q_rows])])
        s_emb, q_emb = f[: s_rows.size], f[s_rows.size :]
    raw = s_emb.reshape(-1, K, s_emb.shape[1]).sum(axis=1)
    if renorm_class_feature:
        norms = np.linalg.norm(raw, axis=1)
        feats = raw / norms[:, None]
    else:
        feats = raw
    q_idx, c_idx, targets = _episode_pairs(episodes)
    scores, cache = comparator.forward_cached(q_emb[q_idx], feats[c_idx])
    loss, g_scores = mse_similarity_loss(scores, targets)
    grads, g_q, g_c = comparator.backward_cached(cache, g_scores)
    if embedded is not None:
        return loss, grads, None
    g_feat = np.zeros_like(feats)
    np.add.at(g_feat, c_idx, g_c)
    if renorm_class_feature:
        radial = np.einsum("ij,ij->i", feats, g_feat)
        g_feat = (g_feat - feats * radial[:, None]) / norms[:, None]
    g_q_rows = np.zeros_like(q_emb)
    np.add.at(g_q_rows, q_idx, g_q)
    g_s_rows = np.repeat(g_feat, K, axis=0)
    emb_grads = embedding.backward_cached(emb_cache, np.vstack([g_s_rows, g_q_rows]))
    return loss, grads, emb_grads


def train_comparator(
    comparator: Comparator,
    embedding: EmbeddingModel,
    ds_train: LabeledDataset,
    config: ComparatorConfig,
    rng: np.random.Generator,
) -> tuple[Comparator, list[ComparatorEpoch]]:
    """Episodic MSE regression of similarity scores onto same-class targets.

    The embedding is left untouched unless ``config.finetune_embedding`` is
    set, in which case it is updated in place alongside the comparator.
    """
    if comparator.dim != embedding.dim:
        raise DimensionError(f"comparator expects {comparator.dim}-d embeddings, model gives {embedding.dim}")
    comparator = comparator.copy()
    opt = Adam(comparator.params, lr=config.lr)
    finetune = config.finetune_embedding
    emb_opt = Adam(embedding.params, lr=config.lr) if finetune else None
    frozen = None if finetune else embedding.forward(ds_train.features)
    trace = []
    for epoch in range(config.epochs):
        losses = []
        for _ in range(config.batches_per_epoch):
            eps = batch_episodes(
                ds_train, config.episodes_per_batch, config.ways, config.shots, config.queries, rng
            )
            loss, grads, emb_grads = episode_batch_loss(
                comparator,
                eps,
                ds_train.features,
                embedding=embedding if finetune else None,
                embedded=frozen,
                renorm_class_feature=config.renorm_class_feature,
            )
            opt.step(comparator.params, grads)
            if finetune:
                emb_opt.step(embedding.params, emb_grads)
            losses.append(loss)
        trace.append(ComparatorEpoch(epoch=epoch, loss=float(np.mean(losses))))
    return comparator, trace
