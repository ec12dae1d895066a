"""Attack/accuracy metrics."""

from __future__ import annotations

import numpy as np

from .datasets import Dataset
from .engine import GnnConfig, ModelParams, predict


def asr(params: ModelParams, config: GnnConfig, triggered_set: Dataset, target_label: int) -> float | None:
    """Attack success rate: fraction of triggered graphs predicted as the
    target class. Returns None (undefined) when there is nothing to trigger,
    never a coerced 0.
    """
    if len(triggered_set) == 0:
        return None
    hits = sum(1 for g in triggered_set.graphs if predict(params, config, g) == target_label)
    return hits / len(triggered_set)


def confusion_matrix(params: ModelParams, config: GnnConfig, dataset: Dataset) -> np.ndarray:
    """Counts indexed (true class, predicted class)."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    m = np.zeros((dataset.num_classes, dataset.num_classes), dtype=np.int64)
    for g in dataset.graphs:
        m[g.label, predict(params, config, g)] += 1
    return m


def per_class_accuracy(confusion: np.ndarray) -> np.ndarray:
    """Diagonal over row sums; classes absent from the data come out NaN."""
    totals = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, np.diag(confusion) / totals, np.nan)
