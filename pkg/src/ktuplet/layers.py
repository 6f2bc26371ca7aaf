"""Fully-connected stack with rectifier hidden layers and manual backprop.

Weights are stored as ``(n_in, n_out)`` matrices so a layer computes
``x @ W + b`` on row-major batches.
"""

from __future__ import annotations

import numpy as np

from ktuplet.errors import DimensionError


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def init_params(layer_dims, rng: np.random.Generator) -> list[np.ndarray]:
    """``[W0, b0, W1, b1, ...]``; weights Glorot-uniform, biases zero."""
    params = []
    for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
        params.append(glorot_uniform(rng, n_in, n_out))
        params.append(np.zeros(n_out))
    return params


def check_params(layer_dims, params) -> None:
    if len(layer_dims) < 2:
        raise DimensionError("need at least an input and an output width")
    if len(params) != 2 * (len(layer_dims) - 1):
        raise DimensionError("parameter count does not match layer_dims")
    for i, (n_in, n_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        W, b = params[2 * i], params[2 * i + 1]
        if W.shape != (n_in, n_out) or b.shape != (n_out,):
            raise DimensionError(f"layer {i}: got W{W.shape}, b{b.shape}, expected ({n_in}, {n_out})")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError(f"layer {i} has non-finite parameters")


def forward(params, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return the pre-activation output of the last layer and the layer inputs."""
    inputs = []
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        inputs.append(h)
        z = h @ params[2 * i] + params[2 * i + 1]
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
    return h, inputs


def backward(params, inputs, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients for every parameter plus the gradient w.r.t. the input rows."""
    n_layers = len(params) // 2
    grads = [None] * len(params)
    g = grad_out
    for i in reversed(range(n_layers)):
        h = inputs[i]
        grads[2 * i] = h.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params[2 * i].T
        if i > 0:
            # inputs[i] is relu(z_{i-1}); its derivative is 1 where positive
            g = g * (h > 0.0)
    return grads, g
