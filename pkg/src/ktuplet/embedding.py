"""Unit-norm MLP embedding, Adam, step-decay schedule and tuplet training."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass

import numpy as np

from ktuplet import layers
from ktuplet.dataset import LabeledDataset
from ktuplet.errors import ConfigError, DimensionError, OptimizerError
from ktuplet.losses import DEFAULT_K_NEG, DEFAULT_MARGIN, tuplet_batch_loss
from ktuplet.numeric import as_matrix, l2_normalize_rows
from ktuplet.sampler import sample_tuplets

DEFAULT_HIDDEN = (64, 64)
DEFAULT_EMBED_DIM = 32


class EmbeddingModel:
    """``x -> normalize(MLP(x))`` with rectifier hidden layers and a linear top."""

    activation = "relu"

    def __init__(self, layer_dims, params):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.params = [np.array(p, dtype=np.float64) for p in params]
        layers.check_params(self.layer_dims, self.params)

    @classmethod
    def init(cls, layer_dims, rng: np.random.Generator) -> "EmbeddingModel":
        return cls(layer_dims, layers.init_params(layer_dims, rng))

    @classmethod
    def default(cls, d_in: int, rng: np.random.Generator) -> "EmbeddingModel":
        return cls.init((d_in, *DEFAULT_HIDDEN, DEFAULT_EMBED_DIM), rng)

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "EmbeddingModel":
        return copy.deepcopy(self)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingModel):
            return NotImplemented
        return self.layer_dims == other.layer_dims and all(
            np.array_equal(a, b) for a, b in zip(self.params, other.params)
        )

    def _check_input(self, X) -> np.ndarray:
        X = as_matrix(X)
        if X.shape[1] != self.d_in:
            raise DimensionError(f"input has {X.shape[1]} columns, model expects {self.d_in}")
        return X

    def forward(self, X) -> np.ndarray:
        X = self._check_input(X)
        z, _ = layers.forward(self.params, X)
        out, _ = l2_normalize_rows(z)
        return out

    __call__ = forward

    def forward_cached(self, X):
        X = self._check_input(X)
        z, inputs = layers.forward(self.params, X)
        f, norms = l2_normalize_rows(z)
        return f, (inputs, f, norms)

    def backward_cached(self, cache, upstream_grad) -> list[np.ndarray]:
        """Parameter gradients; the normalization Jacobian per row is ``(I - f f^T) / ||z||``."""
        inputs, f, norms = cache
        g = np.asarray(upstream_grad, dtype=np.float64)
        if g.shape != f.shape:
            raise DimensionError(f"upstream gradient shape {g.shape} != output shape {f.shape}")
        radial = np.einsum("ij,ij->i", f, g)
        g_z = (g - f * radial[:, None]) / norms[:, None]
        grads, _ = layers.backward(self.params, inputs, g_z)
        return grads

    def forward_backward(self, X, upstream_grad) -> tuple[np.ndarray, list[np.ndarray]]:
        f, cache = self.forward_cached(X)
        return f, self.backward_cached(cache, upstream_grad)

    def backward(self, X, upstream_grad) -> list[np.ndarray]:
        return self.forward_backward(X, upstream_grad)[1]


class Adam:
    """Bias-corrected Adam that updates parameter arrays in place."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params, grads) -> None:
        if len(grads) != len(self.m):
            raise DimensionError("gradient list does not match optimizer state")
        for i, g in enumerate(grads):
            if g.shape != self.m[i].shape:
                raise DimensionError(f"gradient {i} has shape {g.shape}, expected {self.m[i].shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.count_nonzero(~np.isfinite(g)))
                raise OptimizerError(
                    f"non-finite gradient in parameter {i} ({bad} entries) at step {self.step_count + 1}"
                )
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def lr_schedule(base_lr: float, epoch: int, decay_every: int, factor: float) -> float:
    if decay_every < 1:
        raise ConfigError("decay_every must be >= 1")
    if not 0 < factor <= 1:
        raise ConfigError("decay factor must lie in (0, 1]")
    return base_lr * factor ** (epoch // decay_every)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    switch_epoch: int = 80
    batch_size: int = 64
    k_neg: int = DEFAULT_K_NEG
    margin: float = DEFAULT_MARGIN
    lr: float = 0.001
    decay_every: int = 40
    decay_factor: float = 0.5
    steps_per_epoch: int | None = None  # None: ceil(N / batch_size)
    eq2_verbatim: bool = False
    check_unit_norm: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch_size", "k_neg", "decay_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.switch_epoch < 0:
            raise ConfigError("switch_epoch must be >= 0")
        if not self.margin > 0:
            raise ConfigError("margin must be > 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    phase: str  # "k-tuplet" or "semi-hard"
    loss: float  # mean objective actually optimized
    k_tuplet_loss: float  # mean plain K-tuplet loss on the same batches
    active_fraction: float


UNIT_NORM_TOL = 1e-9


def _assert_unit_rows(f: np.ndarray) -> None:
    dev = np.max(np.abs(np.sqrt(np.einsum("ij,ij->i", f, f)) - 1.0))
    if not dev <= UNIT_NORM_TOL:
        raise AssertionError(f"embedding row norm deviates from 1 by {dev:.3e}")


def train_embedding(
    model: EmbeddingModel, ds_train: LabeledDataset, config: TrainConfig, rng: np.random.Generator
) -> tuple[EmbeddingModel, list[EpochRecord]]:
    """Tuplet training; the semi-hard objective takes over at ``switch_epoch``.

    Returns a trained copy of ``model`` and one record per epoch.
    """
    if ds_train.dim != model.d_in:
        raise DimensionError(f"dataset has {ds_train.dim} features, model expects {model.d_in}")
    model = model.copy()
    opt = Adam(model.params, lr=config.lr)
    steps = config.steps_per_epoch or math.ceil(len(ds_train) / config.batch_size)
    B, K = config.batch_size, config.k_neg
    trace = []
    for epoch in range(config.epochs):
        opt.lr = lr_schedule(config.lr, epoch, config.decay_every, config.decay_factor)
        semi_hard = epoch >= config.switch_epoch
        losses, plain, active = [], [], []
        for _ in range(steps):
            batch = sample_tuplets(ds_train, B, K, rng)
            rows = np.concatenate([batch.anchors, batch.positives, batch.negatives.ravel()])
            X = ds_train.features[rows]
            f, cache = model.forward_cached(X)
            if config.check_unit_norm:
                _assert_unit_rows(f)
            f_a, f_p, f_n = f[:B], f[B : 2 * B], f[2 * B :].reshape(B, K, -1)
            res = tuplet_batch_loss(f_a, f_p, f_n, config.margin, semi_hard, config.eq2_verbatim)
            if semi_hard:
                plain.append(tuplet_batch_loss(f_a, f_p, f_n, config.margin).loss)
            else:
                plain.append(res.loss)
            upstream = np.concatenate([res.grad_a, res.grad_p, res.grad_n.reshape(B * K, -1)])
            grads = model.backward_cached(cache, upstream)
            opt.step(model.params, grads)
            losses.append(res.loss)
            active.append(res.active_fraction)
        trace.append(
            EpochRecord(
                epoch=epoch,
                lr=opt.lr,
                phase="semi-hard" if semi_hard else "k-tuplet",
                loss=float(np.mean(losses)),
                k_tuplet_loss=float(np.mean(plain)),
                active_fraction=float(np.mean(active)),
            )
        )
    if config.check_unit_norm:
        _assert_unit_rows(model.forward(ds_train.features))
    return model, trace
