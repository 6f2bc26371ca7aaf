"""Episodic few-shot evaluation with a 1-NN or learned-similarity classifier."""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ktuplet.comparator import Comparator, episode_class_features
from ktuplet.dataset import LabeledDataset
from ktuplet.embedding import EmbeddingModel
from ktuplet.errors import ConfigError, KTupletError
from ktuplet.numeric import squared_euclidean
from ktuplet.sampler import Episode, batch_episodes

DEFAULT_EPISODES = 600
DEFAULT_QUERIES = 15
Z_95 = 1.96


class EmptySupportError(KTupletError, ValueError):
    pass


def _argbest(values, labels, better) -> int:
    """Label of the best value; exact ties go to the lowest label."""
    best_val, best_label = None, None
    for val, label in zip(values, labels):
        label = int(label)
        if best_val is None or better(val, best_val) or (val == best_val and label < best_label):
            best_val, best_label = val, label
    return best_label


def nn_classify(query_emb, support_vecs, support_labels) -> int:
    """Label of the support entry nearest in squared Euclidean distance."""
    if len(support_labels) == 0:
        raise EmptySupportError("nn_classify needs a non-empty support set")
    dists = [squared_euclidean(query_emb, s) for s in support_vecs]
    return _argbest(dists, support_labels, lambda a, b: a < b)


def similarity_classify(comparator: Comparator, query_emb, class_feats, labels) -> int:
    """Label whose class feature the comparator scores highest."""
    if len(labels) == 0:
        raise EmptySupportError("similarity_classify needs at least one class feature")
    scores = [comparator.score(query_emb, f) for f in class_feats]
    return _argbest(scores, labels, lambda a, b: a > b)


def ci95(accuracies) -> float:
    """Normal-approximation half-width ``1.96 * s / sqrt(n)``; 0 for n == 1."""
    acc = [float(a) for a in accuracies]
    n = len(acc)
    if n == 0:
        raise ValueError("ci95 needs at least one value")
    if n == 1:
        return 0.0
    # statistics.stdev is exact on float inputs, so constant data gives 0.0
    return Z_95 * statistics.stdev(acc) / math.sqrt(n)


@dataclass
class EvalReport:
    mean_accuracy: float
    ci95_halfwidth: float
    num_episodes: int
    per_episode_accuracies: list[float]
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95_halfwidth,
            "num_episodes": self.num_episodes,
            "per_episode": self.per_episode_accuracies,
            "config": self.config,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def episode_accuracy(
    episode: Episode,
    embedded: np.ndarray,
    comparator: Comparator | None = None,
    renorm_class_feature: bool = False,
) -> float:
    """Fraction of the episode's queries classified correctly.

    ``embedded`` holds the frozen embedding of every dataset row.
    """
    feats, labels = episode_class_features(episode, embedded[episode.support_rows], renorm_class_feature)
    correct = 0
    for row, truth in zip(episode.query_rows, episode.query_labels):
        q = embedded[row]
        if comparator is None:
            pred = nn_classify(q, feats, labels)
        else:
            pred = similarity_classify(comparator, q, feats, labels)
        correct += pred == truth
    return correct / episode.query_rows.size


def evaluate(
    model: EmbeddingModel,
    comparator: Comparator | None,
    ds_test: LabeledDataset,
    C: int = 5,
    K_shot: int = 1,
    n_query: int = DEFAULT_QUERIES,
    num_episodes: int = DEFAULT_EPISODES,
    rng: np.random.Generator | int = 0,
    renorm_class_feature: bool = False,
    workers: int = 1,
) -> EvalReport:
    """Mean episode accuracy and 95% CI over ``num_episodes`` sampled episodes.

    Episodes are drawn up front from one generator, so the report does not
    depend on ``workers``.
    """
    if num_episodes < 1:
        raise ConfigError("num_episodes must be >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    if seed is not None:
        rng = np.random.default_rng(seed)
    episodes = batch_episodes(ds_test, num_episodes, C, K_shot, n_query, rng)
    embedded = model.forward(ds_test.features)

    def run(ep):
        return episode_accuracy(ep, embedded, comparator, renorm_class_feature)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(run, episodes))
    else:
        accs = [run(ep) for ep in episodes]
    return EvalReport(
        mean_accuracy=math.fsum(accs) / len(accs),
        ci95_halfwidth=ci95(accs),
        num_episodes=len(accs),
        per_episode_accuracies=accs,
        config={
            "ways": C,
            "shots": K_shot,
            "queries": n_query,
            "episodes": num_episodes,
            "classifier": "euclid" if comparator is None else "similarity",
            "renorm_class_feature": renorm_class_feature,
        },
        seed=None if seed is None else int(seed),
    )
