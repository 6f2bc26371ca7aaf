import json

import numpy as np
import pytest

from ktuplet import checkpoint
from ktuplet.comparator import Comparator
from ktuplet.embedding import EmbeddingModel
from ktuplet.errors import ParseError


def test_embedding_round_trip(tmp_path, rng):
    m = EmbeddingModel.init((7, 13, 5), rng)
    m.params[1] = rng.standard_normal(13) * 1e-300  # tiny values survive too
    checkpoint.save(m, tmp_path / "e.json")
    back = checkpoint.load(tmp_path / "e.json", expect="embedding")
    assert back == m
    assert all(np.array_equal(a, b) for a, b in zip(back.params, m.params))


def test_comparator_round_trip(tmp_path, rng):
    c = Comparator.init(6, rng, hidden=9)
    checkpoint.save(c, tmp_path / "c.json")
    back = checkpoint.load(tmp_path / "c.json")
    assert isinstance(back, Comparator) and back == c
    assert back.score(np.ones(6), np.zeros(6)) == c.score(np.ones(6), np.zeros(6))


def test_documented_layout(rng):
    m = EmbeddingModel.init((2, 3), rng)
    doc = json.loads(checkpoint.dumps(m))
    assert doc["format"] == "ktuplet-checkpoint" and doc["version"] == 1
    assert doc["kind"] == "embedding" and doc["layer_dims"] == [2, 3]
    assert doc["params"][0] == m.params[0].ravel().tolist()
    assert doc["params"][1] == m.params[1].tolist()


def test_load_rejects_wrong_kind_and_garbage(tmp_path, rng):
    checkpoint.save(Comparator.init(2, rng), tmp_path / "c.json")
    with pytest.raises(ParseError):
        checkpoint.load(tmp_path / "c.json", expect="embedding")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ParseError):
        checkpoint.load(tmp_path / "bad.json")
    (tmp_path / "v.json").write_text(json.dumps({"format": "ktuplet-checkpoint", "version": 99}))
    with pytest.raises(ParseError):
        checkpoint.load(tmp_path / "v.json")
