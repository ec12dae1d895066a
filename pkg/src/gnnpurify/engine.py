"""Fixed-architecture GNN engine: forward with activation tracing, manual
reverse-mode gradients, SGD training, and JSON checkpoints.

Both supported layer types share the shape
``H_l = ReLU(S @ H_{l-1} @ W_l)`` and differ only in the propagation matrix
S: the degree-normalized adjacency with self-loops for GCN, and I + A (sum
aggregation with a zero epsilon self-term) for GIN. The readout is mean
pooling followed by a single linear classifier.

Distillation losses operate on intermediate activations, so the backward
pass accepts gradients injected at any layer in addition to the usual
logit gradient. Everything is float64 and deterministic under seeds.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import attention
from .datasets import Dataset
from .graphs import Graph, degree, normalized_adjacency
from .util import rng_from

ARCHS = ("gcn", "gin")


@dataclass(frozen=True)
class GnnConfig:
    arch: str = "gin"
    num_layers: int = 3
    hidden_dim: int = 16
    num_classes: int = 2
    feature_dim: int = 8
    readout: str = "mean_pool"
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if self.num_layers < 2:
            raise ValueError("num_layers must be >= 2")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.readout != "mean_pool":
            raise ValueError("only mean_pool readout is supported")


@dataclass(frozen=True)
class ModelParams:
    """Per-layer affine parameters plus the linear classifier."""

    layer_weights: tuple[np.ndarray, ...]
    layer_biases: tuple[np.ndarray, ...]
    cls_weight: np.ndarray
    cls_bias: np.ndarray

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            tuple(np.zeros_like(w) for w in self.layer_weights),
            tuple(np.zeros_like(b) for b in self.layer_biases),
            np.zeros_like(self.cls_weight),
            np.zeros_like(self.cls_bias),
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            tuple(w.copy() for w in self.layer_weights),
            tuple(b.copy() for b in self.layer_biases),
            self.cls_weight.copy(),
            self.cls_bias.copy(),
        )


GradientSet = ModelParams


@dataclass(frozen=True)
class ActivationTrace:
    """Post-ReLU activations per layer, pooled embedding, and logits."""

    layers: tuple[np.ndarray, ...]
    pooled: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("train config values must be positive")


@dataclass(frozen=True)
class LossSpec:
    """Selects and weights the training loss terms.

    ``ad_weight`` and ``rc_weight`` are the attention-transfer and
    relation-congruence multipliers; either (or ``kd_weight`` for soft
    logit matching) requires frozen ``teacher`` parameters. Slice
    directions for the relation term are drawn from ``slice_seed``, which
    the training loop advances once per step so directions resample
    between updates but stay fixed within one gradient evaluation.
    """

    ce_weight: float = 1.0
    ad_weight: float = 0.0
    rc_weight: float = 0.0
    kd_weight: float = 0.0
    p: float = 2.0
    pairs: str = "full"
    temperature: float = 1.0
    num_slices: int = 16
    slice_seed: int = 0
    teacher: ModelParams | None = None


def init_params(config: GnnConfig) -> ModelParams:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero bias."""
    rng = rng_from(config.seed, 101)

    def glorot(fan_in, fan_out):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=(fan_in, fan_out))

    dims = [config.feature_dim] + [config.hidden_dim] * config.num_layers
    layers = tuple(glorot(dims[l], dims[l + 1]) for l in range(config.num_layers))
    biases = tuple(np.zeros(dims[l + 1]) for l in range(config.num_layers))
    cls_w = glorot(config.hidden_dim, config.num_classes)
    cls_b = np.zeros(config.num_classes)
    return ModelParams(layers, biases, cls_w, cls_b)


def propagation_matrix(config: GnnConfig, graph: Graph) -> np.ndarray:
    if config.arch == "gcn":
        return normalized_adjacency(graph)
    a = graph.adjacency()
    np.fill_diagonal(a, 1.0)
    return a


def forward(params: ModelParams, config: GnnConfig, graph: Graph) -> ActivationTrace:
    """Run the network on one graph, keeping every post-ReLU activation."""
    if graph.feature_dim != config.feature_dim:
        raise ValueError(f"graph feature dim {graph.feature_dim} != config {config.feature_dim}")
    s = propagation_matrix(config, graph)
    h = graph.features
    layers = []
    for w, bias in zip(params.layer_weights, params.layer_biases):
        h = np.maximum(s @ h @ w + bias, 0.0)
        layers.append(h)
    pooled = h.mean(axis=0)
    logits = pooled @ params.cls_weight + params.cls_bias
    return ActivationTrace(tuple(layers), pooled, logits)


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """Negative log softmax probability of the label, overflow-safe."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


class _GradAccumulator:
    """Mutable gradient buffers; frozen into a GradientSet when done."""

    def __init__(self, params: ModelParams):
        self.layer_weights = [np.zeros_like(w) for w in params.layer_weights]
        self.layer_biases = [np.zeros_like(b) for b in params.layer_biases]
        self.cls_weight = np.zeros_like(params.cls_weight)
        self.cls_bias = np.zeros_like(params.cls_bias)

    def freeze(self) -> "GradientSet":
        return ModelParams(tuple(self.layer_weights), tuple(self.layer_biases),
                           self.cls_weight, self.cls_bias)


def _backward_graph(params, config, graph, trace, d_logits, d_layers, acc, want_input_grad=False):
    """Accumulate parameter gradients for one graph into ``acc``.

    ``d_logits`` is dLoss/dlogits; ``d_layers[l]`` (optional) is an extra
    dLoss/dF_l injected at layer l by activation-level loss terms.
    """
    s = propagation_matrix(config, graph)
    n = graph.num_nodes
    acc.cls_weight += np.outer(trace.pooled, d_logits)
    acc.cls_bias += d_logits
    d_h = np.tile((params.cls_weight @ d_logits) / n, (n, 1))
    k = len(params.layer_weights)
    if d_layers is not None and d_layers[k - 1] is not None:
        d_h = d_h + d_layers[k - 1]
    for l in range(k - 1, -1, -1):
        g_pre = d_h * (trace.layers[l] > 0)
        h_in = trace.layers[l - 1] if l > 0 else graph.features
        acc.layer_weights[l] += (s @ h_in).T @ g_pre
        acc.layer_biases[l] += g_pre.sum(axis=0)
        if l > 0 or want_input_grad:
            d_h = s.T @ (g_pre @ params.layer_weights[l].T)
            if l > 0 and d_layers is not None and d_layers[l - 1] is not None:
                d_h = d_h + d_layers[l - 1]
    return d_h if want_input_grad else None


def loss_and_grads(
    params: ModelParams,
    config: GnnConfig,
    batch: Sequence[tuple[Graph, int]],
    loss_spec: LossSpec | None = None,
) -> tuple[float, GradientSet]:
    """Weighted training loss over a batch and its analytic gradients.

    Cross-entropy, soft logit matching, and attention transfer average over
    the batch; relation congruence pools the relation samples of the whole
    batch into one distribution per side and enters once.
    """
    spec = loss_spec or LossSpec()
    if not batch:
        raise ValueError("batch must be non-empty")
    needs_teacher = spec.ad_weight > 0 or spec.rc_weight > 0 or spec.kd_weight > 0
    if needs_teacher and spec.teacher is None:
        raise ValueError("loss spec activates distillation terms but has no teacher")

    b = len(batch)
    acc = _GradAccumulator(params)
    total = 0.0

    traces = [forward(params, config, g) for g, _ in batch]
    teacher_traces = [forward(spec.teacher, config, g) for g, _ in batch] if needs_teacher else None
    d_logits = [np.zeros(config.num_classes) for _ in batch]
    track_layers = spec.ad_weight > 0 or spec.rc_weight > 0
    d_layers = [[np.zeros_like(f) for f in tr.layers] for tr in traces] if track_layers else [None] * b

    for i, (graph, label) in enumerate(batch):
        tr = traces[i]
        if spec.ce_weight > 0:
            total += spec.ce_weight * cross_entropy(tr.logits, label) / b
            p_hat = _softmax(tr.logits)
            p_hat[label] -= 1.0
            d_logits[i] += spec.ce_weight / b * p_hat
        if spec.kd_weight > 0:
            tau = spec.temperature
            q_t = _softmax(teacher_traces[i].logits / tau)
            q_s = _softmax(tr.logits / tau)
            kl = float(np.sum(q_t * (np.log(q_t) - np.log(q_s))))
            total += spec.kd_weight * kl / b
            d_logits[i] += spec.kd_weight / b * (q_s - q_t) / tau
        if spec.ad_weight > 0:
            deg = degree(graph)
            total += spec.ad_weight * attention.attention_distill_loss(
                teacher_traces[i], tr, deg, spec.p) / b
            layer_grads = attention.attention_distill_loss_grad(teacher_traces[i], tr, deg, spec.p)
            for l, lg in enumerate(layer_grads):
                d_layers[i][l] += spec.ad_weight / b * lg

    if spec.rc_weight > 0:
        pairs = attention.resolve_pairs(spec.pairs, config.num_layers)
        rc, rc_grads = attention.relation_congruence_loss_grad(
            teacher_traces, traces, pairs, spec.num_slices, spec.slice_seed)
        total += spec.rc_weight * rc
        for i in range(b):
            for l in range(config.num_layers):
                d_layers[i][l] += spec.rc_weight * rc_grads[i][l]

    for i, (graph, _) in enumerate(batch):
        _backward_graph(params, config, graph, traces[i], d_logits[i], d_layers[i], acc)
    return total, acc.freeze()


def input_gradient(params: ModelParams, config: GnnConfig, graph: Graph,
                   d_logits: np.ndarray, d_layers=None) -> np.ndarray:
    """dLoss/d(node features) for one graph; used by trigger optimization."""
    trace = forward(params, config, graph)
    acc = _GradAccumulator(params)
    return _backward_graph(params, config, graph, trace, d_logits, d_layers, acc,
                           want_input_grad=True)


def sgd_step(params: ModelParams, grads: GradientSet, learning_rate: float) -> ModelParams:
    """One plain gradient-descent update; shapes must match exactly."""
    if len(params.layer_weights) != len(grads.layer_weights):
        raise ValueError("gradient layer count mismatch")
    for w, g in zip(params.layer_weights, grads.layer_weights):
        if w.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != weight shape {w.shape}")
    if params.cls_weight.shape != grads.cls_weight.shape or params.cls_bias.shape != grads.cls_bias.shape:
        raise ValueError("classifier gradient shape mismatch")
    for b, g in zip(params.layer_biases, grads.layer_biases):
        if b.shape != g.shape:
            raise ValueError(f"bias gradient shape {g.shape} != {b.shape}")
    return ModelParams(
        tuple(w - learning_rate * g for w, g in zip(params.layer_weights, grads.layer_weights)),
        tuple(b - learning_rate * g for b, g in zip(params.layer_biases, grads.layer_biases)),
        params.cls_weight - learning_rate * grads.cls_weight,
        params.cls_bias - learning_rate * grads.cls_bias,
    )


def train(
    params: ModelParams,
    config: GnnConfig,
    dataset: Dataset,
    train_config: TrainConfig,
    loss_spec: LossSpec | None = None,
) -> ModelParams:
    """Shuffled mini-batch SGD for the configured number of epochs."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    spec = loss_spec or LossSpec()
    rng = rng_from(train_config.seed, 37)
    step = 0
    for _ in range(train_config.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            batch = [(dataset.graphs[i], dataset.graphs[i].label) for i in idx]
            step_spec = spec if spec.rc_weight == 0 else replace(spec, slice_seed=spec.slice_seed + step)
            _, grads = loss_and_grads(params, config, batch, step_spec)
            params = sgd_step(params, grads, train_config.learning_rate)
            step += 1
    return params


def predict(params: ModelParams, config: GnnConfig, graph: Graph) -> int:
    return int(np.argmax(forward(params, config, graph).logits))


def evaluate(params: ModelParams, config: GnnConfig, dataset: Dataset) -> float:
    """Fraction of graphs whose argmax prediction matches the label."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    hits = sum(1 for g in dataset.graphs if predict(params, config, g) == g.label)
    return hits / len(dataset)


def save_checkpoint(params: ModelParams, config: GnnConfig, path: str | os.PathLike) -> None:
    doc = {
        "config": {
            "arch": config.arch,
            "num_layers": config.num_layers,
            "hidden_dim": config.hidden_dim,
            "num_classes": config.num_classes,
            "feature_dim": config.feature_dim,
            "readout": config.readout,
            "seed": config.seed,
        },
        "layer_weights": [w.ravel(order="C").tolist() for w in params.layer_weights],
        "layer_biases": [b.tolist() for b in params.layer_biases],
        "classifier_weight": params.cls_weight.ravel(order="C").tolist(),
        "classifier_bias": params.cls_bias.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelParams, GnnConfig]:
    with open(path) as fh:
        doc = json.load(fh)
    config = GnnConfig(**doc["config"])
    dims = [config.feature_dim] + [config.hidden_dim] * config.num_layers
    layers = []
    for l, flat in enumerate(doc["layer_weights"]):
        shape = (dims[l], dims[l + 1])
        arr = np.asarray(flat, dtype=np.float64)
        if arr.size != shape[0] * shape[1]:
            raise ValueError(f"layer {l} has {arr.size} weights, expected {shape}")
        layers.append(arr.reshape(shape))
    biases = []
    for l, flat in enumerate(doc["layer_biases"]):
        arr = np.asarray(flat, dtype=np.float64)
        if arr.shape != (dims[l + 1],):
            raise ValueError(f"layer {l} bias has shape {arr.shape}, expected ({dims[l + 1]},)")
        biases.append(arr)
    cls_w = np.asarray(doc["classifier_weight"], dtype=np.float64)
    if cls_w.size != config.hidden_dim * config.num_classes:
        raise ValueError("classifier weight size mismatch")
    cls_w = cls_w.reshape(config.hidden_dim, config.num_classes)
    cls_b = np.asarray(doc["classifier_bias"], dtype=np.float64)
    if cls_b.shape != (config.num_classes,):
        raise ValueError("classifier bias size mismatch")
    return ModelParams(tuple(layers), tuple(biases), cls_w, cls_b), config
