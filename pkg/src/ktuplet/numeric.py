"""Distance and normalization kernels.

All arithmetic is float64. ``squared_euclidean`` sums with :func:`math.fsum`,
so its result is the correctly rounded value of the exact sum of the rounded
squared differences and does not depend on summation order.
"""

from __future__ import annotations

import math

import numpy as np

from ktuplet.errors import DegenerateVectorError, DimensionError

EPS_NORM = 1e-12


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {arr.shape}")
    return arr


def as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def squared_euclidean(u, v) -> float:
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    diff = u - v
    return math.fsum((diff * diff).tolist())


def l2_normalize(v) -> np.ndarray:
    v = as_vector(v)
    norm = math.sqrt(math.fsum((v * v).tolist()))
    if not norm > EPS_NORM:
        raise DegenerateVectorError(f"vector norm {norm:.3e} is below {EPS_NORM:g}")
    return v / norm


def l2_normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize each row of ``z``; returns ``(normalized, norms)``."""
    z = as_matrix(z)
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    bad = np.flatnonzero(~(norms > EPS_NORM))
    if bad.size:
        raise DegenerateVectorError(
            f"row {int(bad[0])} has norm {norms[bad[0]]:.3e} below {EPS_NORM:g}"
        )
    return z / norms[:, None], norms


def pairwise_sq_dist(a, b) -> np.ndarray:
    """``out[i, j] = ||a[i] - b[j]||^2`` computed by explicit differences."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
