"""Graph-classification GNNs, subgraph backdoors, and attention-distillation
purification at desk scale."""

from .attack import PoisonReport, TriggerSpec, apply_trigger_to_test, inject_trigger, make_er_trigger, poison_dataset
from .attention import (
    attention_distill_loss,
    attention_map,
    normalize_attention,
    relation_congruence_loss,
    relation_samples,
    resolve_pairs,
    sliced_w2,
)
from .baselines import PruneConfig, SmoothingConfig, finetune_only, prune_graph, smoothed_predict, vanilla_distill
from .datasets import Dataset, SplitSpec, load_tu_dataset, split, synth_dataset, write_tu_dataset
from .defense import DefenseConfig, finetune_teacher, graphnad_defend
from .engine import (
    ActivationTrace,
    GnnConfig,
    LossSpec,
    ModelParams,
    TrainConfig,
    cross_entropy,
    evaluate,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grads,
    save_checkpoint,
    sgd_step,
    train,
)
from .graphs import Graph, degree, er_random_graph, normalized_adjacency, relabel_nodes
from .harness import ExperimentConfig, export_attention, replay_metrics, run_experiment, run_single
from .metrics import asr, confusion_matrix, per_class_accuracy

__version__ = "0.1.0"
