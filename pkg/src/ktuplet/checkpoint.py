"""JSON checkpoints for embedding models and comparators.

Layout::

    {"format": "ktuplet-checkpoint", "version": 1, "kind": "embedding" | "comparator",
     "layer_dims": [...], "activation": "relu", "output": "l2-normalize" | "sigmoid",
     "params": [W0, b0, W1, b1, ...]}

``W_i`` is a flat row-major list of shape ``(layer_dims[i], layer_dims[i+1])``
and ``b_i`` has length ``layer_dims[i+1]``. Floats are written with Python's
shortest round-trip repr, so ``load(save(m)) == m`` bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from ktuplet.comparator import Comparator
from ktuplet.dataset import atomic_write_text
from ktuplet.embedding import EmbeddingModel
from ktuplet.errors import ParseError

FORMAT = "ktuplet-checkpoint"
VERSION = 1

_KINDS = {
    "embedding": (EmbeddingModel, "l2-normalize"),
    "comparator": (Comparator, "sigmoid"),
}


def to_dict(model) -> dict:
    for kind, (cls, output) in _KINDS.items():
        if isinstance(model, cls):
            break
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "layer_dims": list(model.layer_dims),
        "activation": model.activation,
        "output": output,
        "params": [p.ravel().tolist() for p in model.params],
    }


def from_dict(doc: dict, expect: str | None = None):
    if doc.get("format") != FORMAT:
        raise ParseError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise ParseError(f"unknown checkpoint kind {kind!r}")
    if expect is not None and kind != expect:
        raise ParseError(f"expected a {expect} checkpoint, found {kind}")
    cls, _ = _KINDS[kind]
    dims = [int(d) for d in doc["layer_dims"]]
    flat = doc["params"]
    if len(flat) != 2 * (len(dims) - 1):
        raise ParseError("parameter list does not match layer_dims")
    params = []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = np.array(flat[2 * i], dtype=np.float64)
        b = np.array(flat[2 * i + 1], dtype=np.float64)
        if W.size != n_in * n_out or b.size != n_out:
            raise ParseError(f"layer {i} has the wrong number of values")
        params += [W.reshape(n_in, n_out), b]
    return cls(dims, params)


def dumps(model) -> str:
    return json.dumps(to_dict(model)) + "\n"


def save(model, path) -> None:
    atomic_write_text(path, dumps(model))


def load(path, expect: str | None = None):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(doc, expect)
