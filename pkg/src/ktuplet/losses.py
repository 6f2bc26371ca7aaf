"""K-tuplet hinge loss, its semi-hard filtered variant, and the MSE similarity loss.

Per negative ``i`` the hinge argument is ``(d_ap - d_an_i) + margin`` with
``d_ap = ||f_a - f_p||^2`` and ``d_an_i = ||f_a - f_n_i||^2``. A term is
active when that argument is strictly positive; a zero argument is inactive
and contributes neither loss nor gradient.

Semi-hard selection has two modes. The default keeps the active terms. The
``verbatim`` mode keeps terms with ``d_an_i - d_ap >= margin``, which is the
exact complement, so its loss is always zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ktuplet.errors import DimensionError
from ktuplet.numeric import as_matrix, as_vector, squared_euclidean

DEFAULT_MARGIN = 0.5
DEFAULT_K_NEG = 5


@dataclass(frozen=True)
class LossConfig:
    margin: float = DEFAULT_MARGIN
    k_neg: int = DEFAULT_K_NEG
    eq2_verbatim: bool = False

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if self.k_neg < 1:
            raise ValueError("k_neg must be >= 1")


@dataclass(frozen=True)
class EmbeddedTuplet:
    f_a: np.ndarray
    f_p: np.ndarray
    f_n: np.ndarray  # (K_neg, d)

    def __post_init__(self):
        f_a = as_vector(self.f_a)
        f_p = as_vector(self.f_p)
        f_n = np.asarray(self.f_n, dtype=np.float64)
        if f_n.ndim == 1:
            f_n = f_n[None, :]
        if f_n.ndim != 2 or f_n.shape[0] < 1:
            raise DimensionError("f_n must hold at least one negative")
        if f_p.shape != f_a.shape or f_n.shape[1] != f_a.shape[0]:
            raise DimensionError("anchor, positive and negatives must share a dimension")
        object.__setattr__(self, "f_a", f_a)
        object.__setattr__(self, "f_p", f_p)
        object.__setattr__(self, "f_n", f_n)

    @property
    def k_neg(self) -> int:
        return self.f_n.shape[0]


def hinge_arguments(t: EmbeddedTuplet, margin: float) -> list[float]:
    d_ap = squared_euclidean(t.f_a, t.f_p)
    return [(d_ap - squared_euclidean(t.f_a, fn)) + margin for fn in t.f_n]


def k_tuplet_loss(t: EmbeddedTuplet, margin: float) -> float:
    """Mean over the K negatives of the hinged triplet terms."""
    terms = [max(0.0, arg) for arg in hinge_arguments(t, margin)]
    return math.fsum(terms) / len(terms)


def _term_gradients(t: EmbeddedTuplet, weights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    g_a = np.zeros_like(t.f_a)
    g_p = np.zeros_like(t.f_p)
    g_n = np.zeros_like(t.f_n)
    for i, w in enumerate(weights):
        if w == 0.0:
            continue
        g_a += 2.0 * w * (t.f_n[i] - t.f_p)
        g_p += -2.0 * w * (t.f_a - t.f_p)
        g_n[i] = 2.0 * w * (t.f_a - t.f_n[i])
    return g_a, g_p, g_n


def k_tuplet_grad(t: EmbeddedTuplet, margin: float):
    """Gradients of :func:`k_tuplet_loss` w.r.t. ``(f_a, f_p, f_n)``."""
    k = t.k_neg
    weights = [1.0 / k if arg > 0.0 else 0.0 for arg in hinge_arguments(t, margin)]
    return _term_gradients(t, weights)


def semi_hard_filter(t: EmbeddedTuplet, margin: float, verbatim: bool = False) -> list[int]:
    """Indices of the negatives kept for the semi-hard loss."""
    d_ap = squared_euclidean(t.f_a, t.f_p)
    d_an = [squared_euclidean(t.f_a, fn) for fn in t.f_n]
    if verbatim:
        return [i for i, dn in enumerate(d_an) if dn - d_ap >= margin]
    return [i for i, dn in enumerate(d_an) if (d_ap - dn) + margin > 0.0]


def semi_hard_loss(t: EmbeddedTuplet, margin: float, verbatim: bool = False) -> float:
    """Mean hinge over the selected set; 0 when nothing is selected."""
    selected = semi_hard_filter(t, margin, verbatim)
    if not selected:
        return 0.0
    args = hinge_arguments(t, margin)
    return math.fsum(max(0.0, args[i]) for i in selected) / len(selected)


def semi_hard_grad(t: EmbeddedTuplet, margin: float, verbatim: bool = False):
    selected = semi_hard_filter(t, margin, verbatim)
    args = hinge_arguments(t, margin)
    weights = [0.0] * t.k_neg
    for i in selected:
        if args[i] > 0.0:
            weights[i] = 1.0 / len(selected)
    return _term_gradients(t, weights)


@dataclass
class BatchLoss:
    """Batch objective and its gradients w.r.t. the embedded rows."""

    loss: float  # mean over tuplets
    per_tuplet: np.ndarray  # (B,)
    grad_a: np.ndarray  # (B, d)
    grad_p: np.ndarray  # (B, d)
    grad_n: np.ndarray  # (B, K, d)
    active_fraction: float


def tuplet_batch_loss(
    f_a, f_p, f_n, margin: float, semi_hard: bool = False, verbatim: bool = False
) -> BatchLoss:
    """Vectorized loss over B tuplets, averaged over the batch.

    ``f_a``, ``f_p`` are (B, d) and ``f_n`` is (B, K, d). With ``semi_hard``
    each tuplet's terms are filtered and averaged over its own selected count.
    """
    f_a = as_matrix(f_a)
    f_p = as_matrix(f_p)
    f_n = np.asarray(f_n, dtype=np.float64)
    if f_p.shape != f_a.shape or f_n.ndim != 3 or f_n.shape[0] != f_a.shape[0] or f_n.shape[2] != f_a.shape[1]:
        raise DimensionError("inconsistent tuplet batch shapes")
    B, K = f_n.shape[:2]
    diff_ap = f_a - f_p
    diff_an = f_a[:, None, :] - f_n
    d_ap = np.einsum("bd,bd->b", diff_ap, diff_ap)
    d_an = np.einsum("bkd,bkd->bk", diff_an, diff_an)
    args = (d_ap[:, None] - d_an) + margin
    active = args > 0.0
    hinge = np.where(active, args, 0.0)

    if semi_hard:
        selected = (d_an - d_ap[:, None] >= margin) if verbatim else active
        count = selected.sum(axis=1)
        scale = np.divide(1.0, count, out=np.zeros(B), where=count > 0)
        weights = np.where(selected & active, scale[:, None], 0.0)
        per_tuplet = np.where(selected, hinge, 0.0).sum(axis=1) * scale
    else:
        weights = active / K
        per_tuplet = hinge.sum(axis=1) / K

    weights = weights / B
    grad_n = 2.0 * weights[:, :, None] * diff_an
    grad_a = 2.0 * np.einsum("bk,bkd->bd", weights, f_n - f_p[:, None, :])
    grad_p = -2.0 * weights.sum(axis=1)[:, None] * diff_ap
    return BatchLoss(
        loss=float(per_tuplet.mean()),
        per_tuplet=per_tuplet,
        grad_a=grad_a,
        grad_p=grad_p,
        grad_n=grad_n,
        active_fraction=float(active.mean()),
    )


def mse_similarity_loss(scores, targets) -> tuple[float, np.ndarray]:
    """Mean squared residual and its gradient w.r.t. ``scores``."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if scores.shape != targets.shape:
        raise DimensionError(f"length mismatch: {scores.size} vs {targets.size}")
    if scores.size == 0:
        raise DimensionError("empty score array")
    resid = scores - targets
    return float(np.mean(resid * resid)), 2.0 * resid / scores.size
