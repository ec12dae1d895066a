"""Degree-weighted attention maps, relation distributions, sliced Wasserstein.

These are the distillation primitives: a per-node attention score built
from channel energies and node degrees, an L2 normalization so scores are
comparable across layers and graph sizes, unit-norm differences between
layer representations treated as sample distributions, and a sliced
Wasserstein-2 distance between such distributions.

Every loss here also has a hand-derived gradient with respect to the
student-side activations (teacher side is treated as constant), exposed via
the ``*_grad`` functions; the training engine injects those gradients into
its reverse pass. Non-differentiable points (zero vectors, exact sample
ties) get zero subgradients; they are measure-zero for trained models.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .util import rng_from


def _layers(trace) -> Sequence[np.ndarray]:
    return trace.layers if hasattr(trace, "layers") else trace


def attention_map(f_l: np.ndarray, degrees: np.ndarray, p: float) -> np.ndarray:
    """Per-node attention: (deg / max deg) times the channel-p energy.

    An edgeless graph has max degree 0; the degree factor degenerates to 1
    so the score is pure activation energy.
    """
    f_l = np.asarray(f_l, dtype=np.float64)
    degrees = np.asarray(degrees, dtype=np.float64)
    if f_l.ndim != 2 or f_l.shape[0] != degrees.shape[0]:
        raise ValueError(f"activations {f_l.shape} do not match {degrees.shape[0]} degrees")
    if p < 1:
        raise ValueError("p must be >= 1")
    max_deg = degrees.max() if degrees.size else 0.0
    weight = degrees / max_deg if max_deg > 0 else np.ones_like(degrees)
    return weight * np.sum(np.abs(f_l) ** p, axis=1)


def attention_map_grad(f_l: np.ndarray, degrees: np.ndarray, p: float, d_scores: np.ndarray) -> np.ndarray:
    """Backprop d(loss)/d(scores) through attention_map to the activations."""
    f_l = np.asarray(f_l, dtype=np.float64)
    degrees = np.asarray(degrees, dtype=np.float64)
    max_deg = degrees.max() if degrees.size else 0.0
    weight = degrees / max_deg if max_deg > 0 else np.ones_like(degrees)
    scale = (weight * d_scores)[:, None]
    return scale * p * np.abs(f_l) ** (p - 1) * np.sign(f_l)


def normalize_attention(scores: np.ndarray) -> np.ndarray:
    """Scale to unit L2 norm; the all-zero map passes through unchanged."""
    scores = np.asarray(scores, dtype=np.float64)
    norm = np.linalg.norm(scores)
    if norm == 0.0:
        return scores.copy()
    return scores / norm


def attention_distill_loss(trace_t, trace_s, degrees: np.ndarray, p: float) -> float:
    """Sum over layers of the L2 gap between normalized attention maps."""
    layers_t, layers_s = _layers(trace_t), _layers(trace_s)
    if len(layers_t) != len(layers_s):
        raise ValueError(f"layer counts differ: {len(layers_t)} vs {len(layers_s)}")
    total = 0.0
    for ft, fs in zip(layers_t, layers_s):
        at = normalize_attention(attention_map(ft, degrees, p))
        a_s = normalize_attention(attention_map(fs, degrees, p))
        total += float(np.linalg.norm(at - a_s))
    return total


def _normalized_attention_grad(scores: np.ndarray, d_normed: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(scores)
    if norm == 0.0:
        return np.zeros_like(scores)
    u = scores / norm
    return (d_normed - u * np.dot(u, d_normed)) / norm


def attention_distill_loss_grad(trace_t, trace_s, degrees: np.ndarray, p: float) -> list[np.ndarray]:
    """Gradient of attention_distill_loss w.r.t. each student layer."""
    layers_t, layers_s = _layers(trace_t), _layers(trace_s)
    grads = []
    for ft, fs in zip(layers_t, layers_s):
        at = normalize_attention(attention_map(ft, degrees, p))
        raw_s = attention_map(fs, degrees, p)
        a_s = normalize_attention(raw_s)
        diff = a_s - at
        gap = np.linalg.norm(diff)
        if gap == 0.0:
            grads.append(np.zeros_like(fs, dtype=np.float64))
            continue
        d_normed = diff / gap
        d_scores = _normalized_attention_grad(raw_s, d_normed)
        grads.append(attention_map_grad(fs, degrees, p, d_scores))
    return grads


def relation_samples(f_i: np.ndarray, f_j: np.ndarray) -> np.ndarray:
    """Unit-norm per-node differences between two layer representations.

    Rows where the layers agree exactly come out as zero vectors.
    """
    f_i = np.asarray(f_i, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    if f_i.shape != f_j.shape:
        raise ValueError(f"shape mismatch {f_i.shape} vs {f_j.shape}")
    diff = f_i - f_j
    norms = np.linalg.norm(diff, axis=1)
    out = np.zeros_like(diff)
    nz = norms > 0
    out[nz] = diff[nz] / norms[nz, None]
    return out


def _sphere_directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    d = rng.normal(size=(count, dim))
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return d / norms


def _equalize(rng, a: np.ndarray, b: np.ndarray):
    """Subsample the larger multiset so the 1D sort-matching is well posed."""
    idx_a = np.arange(len(a))
    idx_b = np.arange(len(b))
    if len(a) > len(b):
        idx_a = np.sort(rng.choice(len(a), size=len(b), replace=False))
    elif len(b) > len(a):
        idx_b = np.sort(rng.choice(len(b), size=len(a), replace=False))
    return idx_a, idx_b


def sliced_w2(samples_t: np.ndarray, samples_s: np.ndarray, num_slices: int, seed: int) -> float:
    """Monte Carlo sliced Wasserstein-2 distance between two sample sets.

    Projects both sets onto ``num_slices`` random unit directions, solves
    each 1D transport exactly by sorting, and returns the root of the mean
    squared 1D distance. Unequal sample counts are reconciled by seeded
    subsampling of the larger set.
    """
    value, _ = _sliced_w2_impl(samples_t, samples_s, num_slices, seed, want_grad=False)
    return value


def sliced_w2_grad(samples_t: np.ndarray, samples_s: np.ndarray, num_slices: int, seed: int):
    """(distance, d distance / d samples_s); rows not subsampled get zeros."""
    return _sliced_w2_impl(samples_t, samples_s, num_slices, seed, want_grad=True)


def _sliced_w2_impl(samples_t, samples_s, num_slices: int, seed: int, want_grad: bool):
    t = np.atleast_2d(np.asarray(samples_t, dtype=np.float64))
    s = np.atleast_2d(np.asarray(samples_s, dtype=np.float64))
    if t.size == 0 or s.size == 0:
        raise ValueError("sample sets must be non-empty")
    if t.shape[1] != s.shape[1]:
        raise ValueError(f"dimension mismatch {t.shape[1]} vs {s.shape[1]}")
    if num_slices < 1:
        raise ValueError("num_slices must be >= 1")

    rng = rng_from(seed, 5)
    dirs = _sphere_directions(rng, num_slices, t.shape[1])
    idx_t, idx_s = _equalize(rng, t, s)
    tp = t[idx_t] @ dirs.T  # (n, L)
    sp = s[idx_s] @ dirs.T
    n = tp.shape[0]

    order_t = np.argsort(tp, axis=0, kind="stable")
    order_s = np.argsort(sp, axis=0, kind="stable")
    t_sorted = np.take_along_axis(tp, order_t, axis=0)
    s_sorted = np.take_along_axis(sp, order_s, axis=0)
    diffs = s_sorted - t_sorted
    per_slice = np.mean(diffs**2, axis=0)
    value = float(np.sqrt(np.mean(per_slice)))
    if not want_grad:
        return value, None

    grad = np.zeros_like(s)
    if value > 0.0:
        # dW/ds_row = (1/(2W L n)) * sum_m 2*(s_(q) - t_(q)) * dir_m
        coeff = diffs / (value * num_slices * n)  # (n, L)
        d_proj = np.zeros_like(sp)
        np.put_along_axis(d_proj, order_s, coeff, axis=0)
        grad_rows = d_proj @ dirs  # (n, C)
        grad[idx_s] = grad_rows
    return value, grad


def resolve_pairs(pairs_spec: str, num_layers: int) -> tuple[tuple[int, int], ...]:
    """Expand a pair selector into concrete 0-based layer index pairs.

    "full" yields all k(k-1)/2 combinations; "offset:m" yields the pairs
    (i, i+m) that fit, e.g. offset:1 on a 4-layer model gives
    (0,1), (1,2), (2,3).
    """
    if num_layers < 2:
        raise ValueError("need at least two layers to form pairs")
    if pairs_spec == "full":
        return tuple((i, j) for i in range(num_layers) for j in range(i + 1, num_layers))
    if pairs_spec.startswith("offset:"):
        m = int(pairs_spec.split(":", 1)[1])
        if not 1 <= m < num_layers:
            raise ValueError(f"offset {m} out of range for {num_layers} layers")
        return tuple((i, i + m) for i in range(num_layers - m))
    raise ValueError(f"unknown pairs spec: {pairs_spec!r}")


def relation_congruence_loss(
    traces_t,
    traces_s,
    pairs: Sequence[tuple[int, int]],
    num_slices: int,
    seed: int,
) -> float:
    """Sum over layer pairs of the sliced W2 between relation distributions.

    ``traces_t`` / ``traces_s`` are the per-graph activation traces of one
    batch; the per-node relation samples of every graph are pooled into a
    single distribution per side before the distance is taken.
    """
    total, _ = _relation_congruence_impl(traces_t, traces_s, pairs, num_slices, seed, want_grad=False)
    return total


def relation_congruence_loss_grad(traces_t, traces_s, pairs, num_slices: int, seed: int):
    """(loss, per-graph per-layer gradients w.r.t. student activations)."""
    return _relation_congruence_impl(traces_t, traces_s, pairs, num_slices, seed, want_grad=True)


def _relation_congruence_impl(traces_t, traces_s, pairs, num_slices, seed, want_grad: bool):
    layer_lists_t = [_layers(tr) for tr in traces_t]
    layer_lists_s = [_layers(tr) for tr in traces_s]
    if len(layer_lists_t) != len(layer_lists_s):
        raise ValueError("batch sizes differ between teacher and student traces")
    if not pairs:
        raise ValueError("pairs must be non-empty")
    k = len(layer_lists_s[0])
    for i, j in pairs:
        if not (0 <= i < j < k):
            raise ValueError(f"invalid layer pair ({i}, {j}) for {k} layers")

    grads = None
    if want_grad:
        grads = [[np.zeros_like(f, dtype=np.float64) for f in layers] for layers in layer_lists_s]

    total = 0.0
    for pair_no, (i, j) in enumerate(pairs):
        pool_t = np.concatenate([relation_samples(layers[i], layers[j]) for layers in layer_lists_t])
        diffs_s = [np.asarray(layers[i], dtype=np.float64) - np.asarray(layers[j], dtype=np.float64)
                   for layers in layer_lists_s]
        pool_s = np.concatenate([relation_samples(layers[i], layers[j]) for layers in layer_lists_s])
        pair_seed = (seed * 1000003 + pair_no) & 0x7FFFFFFF
        if not want_grad:
            total += sliced_w2(pool_t, pool_s, num_slices, pair_seed)
            continue
        value, d_pool = sliced_w2_grad(pool_t, pool_s, num_slices, pair_seed)
        total += value
        row = 0
        for g, diff in enumerate(diffs_s):
            for v in range(diff.shape[0]):
                d_r = d_pool[row]
                row += 1
                norm = np.linalg.norm(diff[v])
                if norm == 0.0:
                    continue
                r = diff[v] / norm
                d_diff = (d_r - r * np.dot(r, d_r)) / norm
                grads[g][i][v] += d_diff
                grads[g][j][v] -= d_diff
    return total, grads
