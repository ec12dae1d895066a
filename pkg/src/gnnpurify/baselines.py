"""Reference defenses: plain fine-tuning, logit distillation, node pruning,
and randomized-smoothing prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .engine import GnnConfig, LossSpec, ModelParams, TrainConfig, forward, train
from .graphs import Graph
from .util import rng_from


@dataclass(frozen=True)
class PruneConfig:
    cosine_threshold: float = 0.2

    def __post_init__(self):
        if not -1.0 <= self.cosine_threshold <= 1.0:
            raise ValueError("cosine_threshold must be in [-1, 1]")


@dataclass(frozen=True)
class SmoothingConfig:
    keep_prob_nodes: float = 0.8
    keep_prob_edges: float = 0.8
    num_samples: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.keep_prob_nodes <= 1.0 or not 0.0 < self.keep_prob_edges <= 1.0:
            raise ValueError("keep probabilities must be in (0, 1]")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")


def finetune_only(
    backdoored: ModelParams,
    config: GnnConfig,
    clean: Dataset,
    epochs: int,
    learning_rate: float,
    batch_size: int = 64,
    seed: int = 0,
) -> ModelParams:
    """Cross-entropy fine-tuning on the clean holdout, nothing else."""
    if epochs == 0:
        return backdoored
    tc = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed)
    return train(backdoored, config, clean, tc)


def vanilla_distill(
    backdoored: ModelParams,
    teacher: ModelParams,
    config: GnnConfig,
    clean: Dataset,
    epochs: int,
    learning_rate: float,
    temperature: float = 1.0,
    batch_size: int = 64,
    seed: int = 0,
) -> ModelParams:
    """Logit-matching distillation: CE plus KL of tempered softmaxes."""
    spec = LossSpec(ce_weight=1.0, kd_weight=1.0, temperature=temperature, teacher=teacher)
    tc = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed)
    return train(backdoored, config, clean, tc, spec)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def prune_graph(graph: Graph, threshold: float, features: np.ndarray | None = None) -> Graph:
    """Drop nodes whose mean feature cosine similarity to neighbours is
    below the threshold.

    Isolated nodes are kept (no neighbours to disagree with); if every
    node would be pruned, the single most-similar node survives so the
    result is still a graph. Indices are compacted.
    """
    feats = graph.features if features is None else np.asarray(features, dtype=np.float64)
    neighbours: list[list[int]] = [[] for _ in range(graph.num_nodes)]
    for i, j in graph.edges:
        neighbours[i].append(j)
        neighbours[j].append(i)
    similarity = np.ones(graph.num_nodes)
    for v in range(graph.num_nodes):
        if neighbours[v]:
            similarity[v] = np.mean([_cosine(feats[v], feats[u]) for u in neighbours[v]])
    survivors = [v for v in range(graph.num_nodes) if not neighbours[v] or similarity[v] >= threshold]
    if not survivors:
        survivors = [int(np.argmax(similarity))]
    index = {v: k for k, v in enumerate(survivors)}
    edges = frozenset(
        (min(index[i], index[j]), max(index[i], index[j]))
        for i, j in graph.edges
        if i in index and j in index
    )
    return Graph(len(survivors), graph.features[survivors], edges, graph.label)


def _subsample(graph: Graph, smoothing: SmoothingConfig, rng: np.random.Generator) -> Graph | None:
    keep = rng.random(graph.num_nodes) < smoothing.keep_prob_nodes
    survivors = np.flatnonzero(keep)
    if survivors.size == 0:
        return None
    index = {int(v): k for k, v in enumerate(survivors)}
    edges = set()
    for i, j in sorted(graph.edges):
        if i in index and j in index and rng.random() < smoothing.keep_prob_edges:
            edges.add((index[i], index[j]))
    return Graph(int(survivors.size), graph.features[survivors], frozenset(edges), graph.label)


def smoothed_predict(
    params: ModelParams,
    config: GnnConfig,
    graph: Graph,
    smoothing: SmoothingConfig,
) -> int:
    """Majority vote over randomly subsampled copies of the graph.

    Each copy keeps nodes then surviving edges independently at the
    configured probabilities. A vote from an emptied copy falls back to
    the classifier-bias argmax. Ties break toward the lowest class index.
    """
    votes = np.zeros(config.num_classes, dtype=np.int64)
    for s in range(smoothing.num_samples):
        rng = rng_from(smoothing.seed, 71, s)
        sample = _subsample(graph, smoothing, rng)
        if sample is None:
            votes[int(np.argmax(params.cls_bias))] += 1
            continue
        votes[int(np.argmax(forward(params, config, sample).logits))] += 1
    return int(np.argmax(votes))
