"""Backdoor purification by attention distillation with a self-teacher.

The pipeline fine-tunes the compromised model on the defender's small
clean holdout, freezes the result as the teacher, and then retrains the
compromised model (as the student, starting from its own weights) on the
same holdout under a combined objective: cross-entropy for accuracy,
attention transfer to realign per-layer saliency, and relation congruence
to keep the student's layer-to-layer transformations consistent with the
teacher's.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .attention import (
    attention_distill_loss,
    attention_map,
    attention_map_grad,
    normalize_attention,
    relation_congruence_loss,
    relation_samples,
    resolve_pairs,
    sliced_w2,
)
from .datasets import Dataset
from .engine import (
    GnnConfig,
    LossSpec,
    ModelParams,
    TrainConfig,
    evaluate,
    forward,
    loss_and_grads,
    sgd_step,
    train,
)
from .graphs import degree
from .util import rng_from

__all__ = [
    "DefenseConfig",
    "attention_map",
    "attention_map_grad",
    "normalize_attention",
    "attention_distill_loss",
    "relation_samples",
    "sliced_w2",
    "relation_congruence_loss",
    "resolve_pairs",
    "finetune_teacher",
    "graphnad_defend",
]


@dataclass(frozen=True)
class DefenseConfig:
    """Hyperparameters of the distillation defense."""

    p: float = 2.0
    beta: float = 1.0
    gamma: float = 1.0
    pairs: str = "full"
    finetune_epochs: int = 10
    distill_epochs: int = 30
    learning_rate: float = 0.001
    batch_size: int = 64
    num_slices: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("attention exponent p must be >= 1")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")
        if self.num_slices < 1:
            raise ValueError("num_slices must be >= 1")


def finetune_teacher(
    backdoored: ModelParams,
    config: GnnConfig,
    clean: Dataset,
    defense: DefenseConfig,
) -> ModelParams:
    """Cross-entropy fine-tuning on the clean holdout; result is frozen.

    The returned parameters are the distillation teacher: later gradient
    steps never touch them.
    """
    if len(clean) == 0:
        raise ValueError("clean holdout must be non-empty")
    tc = TrainConfig(
        epochs=defense.finetune_epochs,
        batch_size=defense.batch_size,
        learning_rate=defense.learning_rate,
        seed=defense.seed,
    )
    return train(backdoored, config, clean, tc)


def graphnad_defend(
    backdoored: ModelParams,
    config: GnnConfig,
    clean: Dataset,
    defense: DefenseConfig,
    log_path: str | os.PathLike | None = None,
    probe=None,
) -> ModelParams:
    """Purify a backdoored model via attention distillation.

    The student starts at the backdoored weights and runs
    ``distill_epochs`` of mini-batch SGD on
    CE + beta * attention transfer + gamma * relation congruence against
    the fine-tuned frozen teacher. Slice directions for the relation term
    are redrawn each step from a seeded stream.

    ``probe``, if given, is a callable mapping params -> dict of metrics
    merged into the per-epoch log (used for clean-accuracy / attack-rate
    monitoring). A JSON log is written to ``log_path`` when provided.
    """
    if len(clean) == 0:
        raise ValueError("clean holdout must be non-empty")
    teacher = finetune_teacher(backdoored, config, clean, defense)
    student = backdoored

    base_spec = LossSpec(
        ce_weight=1.0,
        ad_weight=defense.beta,
        rc_weight=defense.gamma,
        p=defense.p,
        pairs=defense.pairs,
        num_slices=defense.num_slices,
        teacher=teacher,
    )
    rng = rng_from(defense.seed, 61)
    log_rows = []
    step = 0
    for epoch in range(defense.distill_epochs):
        order = rng.permutation(len(clean))
        epoch_terms = {"ce": 0.0, "ad": 0.0, "rc": 0.0, "total": 0.0}
        num_batches = 0
        for start in range(0, len(order), defense.batch_size):
            idx = order[start:start + defense.batch_size]
            batch = [(clean.graphs[i], clean.graphs[i].label) for i in idx]
            slice_seed = int(rng_from(defense.seed, 67, step).integers(2**31))
            spec = LossSpec(**{**base_spec.__dict__, "slice_seed": slice_seed})
            total, grads = loss_and_grads(student, config, batch, spec)
            student = sgd_step(student, grads, defense.learning_rate)
            step += 1
            num_batches += 1
            if log_path is not None:
                terms = _loss_breakdown(student, teacher, config, batch, defense, slice_seed)
                for key in epoch_terms:
                    epoch_terms[key] += terms[key]
        if log_path is not None:
            row = {"epoch": epoch + 1}
            row.update({k: v / max(num_batches, 1) for k, v in epoch_terms.items()})
            if probe is not None:
                row.update(probe(student))
            log_rows.append(row)
    if log_path is not None:
        with open(log_path, "w") as fh:
            json.dump(log_rows, fh, indent=1)
    return student


def _loss_breakdown(student, teacher, config, batch, defense: DefenseConfig, slice_seed: int) -> dict:
    """Separate loss terms for logging (post-update values)."""
    from .engine import cross_entropy

    traces_s = [forward(student, config, g) for g, _ in batch]
    traces_t = [forward(teacher, config, g) for g, _ in batch]
    ce = float(np.mean([cross_entropy(tr.logits, y) for tr, (_, y) in zip(traces_s, batch)]))
    ad = float(np.mean([
        attention_distill_loss(tt, ts, degree(g), defense.p)
        for tt, ts, (g, _) in zip(traces_t, traces_s, batch)
    ]))
    pairs = resolve_pairs(defense.pairs, config.num_layers)
    rc = relation_congruence_loss(traces_t, traces_s, pairs, defense.num_slices, slice_seed)
    return {
        "ce": ce,
        "ad": ad,
        "rc": rc,
        "total": ce + defense.beta * ad + defense.gamma * rc,
    }


def clean_accuracy_probe(config: GnnConfig, clean_eval: Dataset, triggered: Dataset | None, target_label: int):
    """Build a probe callable reporting clean ACC and ASR per epoch."""
    from .metrics import asr

    def probe(params: ModelParams) -> dict:
        row = {"clean_acc": evaluate(params, config, clean_eval)}
        if triggered is not None and len(triggered) > 0:
            row["asr"] = asr(params, config, triggered, target_label)
        return row

    return probe
