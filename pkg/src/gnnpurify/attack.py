"""Subgraph backdoor attacks: trigger construction, injection, poisoning.

The base attack replaces the induced subgraph on a few randomly chosen
host nodes with a dense Erdos-Renyi pattern and relabels the graph to the
attacker's target class. Host-to-rest edges and (by default) node features
are left untouched, so the trigger is a pure topology signature.

A gradient-based variant optimizes the trigger's node features against a
victim model, optionally with an attention-alignment penalty that mimics
an adaptive attacker trying to survive attention distillation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import attention
from .datasets import Dataset
from .engine import GnnConfig, ModelParams, forward, input_gradient, _softmax
from .graphs import Graph, degree, er_random_graph
from .util import rng_from

FEATURE_MODES = ("keep_original", "overwrite_constant", "optimized")


@dataclass(frozen=True)
class TriggerSpec:
    trigger_size: float = 0.2
    er_edge_prob: float = 0.8
    injection_ratio: float = 0.05
    target_label: int = 1
    feature_mode: str = "keep_original"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.trigger_size <= 1.0:
            raise ValueError("trigger_size must be in (0, 1]")
        if not 0.0 <= self.injection_ratio <= 1.0:
            raise ValueError("injection_ratio must be in [0, 1]")
        if not 0.0 <= self.er_edge_prob <= 1.0:
            raise ValueError("er_edge_prob must be in [0, 1]")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")


@dataclass(frozen=True)
class PoisonReport:
    """Audit trail: which graphs were poisoned, with which trigger, where."""

    poisoned_indices: tuple[int, ...]
    trigger: Graph
    trigger_node_assignments: tuple[tuple[int, ...], ...]
    skipped_indices: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "poisoned_indices": list(self.poisoned_indices),
            "trigger_num_nodes": self.trigger.num_nodes,
            "trigger_edges": sorted(list(e) for e in self.trigger.edges),
            "trigger_features": self.trigger.features.tolist(),
            "trigger_node_assignments": [list(a) for a in self.trigger_node_assignments],
            "skipped_indices": list(self.skipped_indices),
        }

    @staticmethod
    def from_json(doc: dict) -> "PoisonReport":
        trig = Graph(
            doc["trigger_num_nodes"],
            np.asarray(doc["trigger_features"], dtype=np.float64),
            frozenset(tuple(e) for e in doc["trigger_edges"]),
        )
        return PoisonReport(
            tuple(doc["poisoned_indices"]),
            trig,
            tuple(tuple(a) for a in doc["trigger_node_assignments"]),
            tuple(doc.get("skipped_indices", ())),
        )

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @staticmethod
    def load(path: str | os.PathLike) -> "PoisonReport":
        with open(path) as fh:
            return PoisonReport.from_json(json.load(fh))


def trigger_node_count(spec: TriggerSpec, avg_nodes: float) -> int:
    return int(round(avg_nodes * spec.trigger_size))


def make_er_trigger(spec: TriggerSpec, avg_nodes: float, feature_dim: int = 1) -> Graph:
    """Erdos-Renyi trigger on round(avg_nodes * trigger_size) nodes."""
    n_t = trigger_node_count(spec, avg_nodes)
    if n_t < 2:
        raise ValueError(f"trigger would have {n_t} nodes; need at least 2")
    trig = er_random_graph(n_t, spec.er_edge_prob, spec.seed, feature_dim=feature_dim)
    if spec.feature_mode == "keep_original":
        return trig
    # constant features mark trigger nodes; optimization refines them later
    return Graph(n_t, np.ones((n_t, feature_dim)), trig.edges)


def inject_trigger(graph: Graph, trigger: Graph, spec: TriggerSpec, seed: int) -> tuple[Graph, tuple[int, ...]]:
    """Replace the induced subgraph on random host nodes with the trigger.

    All edges among the chosen hosts are dropped, the trigger's edges are
    mapped onto them, and edges between hosts and the rest of the graph
    survive. The label is left alone; poisoning assigns it separately.
    """
    n_t = trigger.num_nodes
    if graph.num_nodes < n_t:
        raise ValueError(f"graph with {graph.num_nodes} nodes cannot host a {n_t}-node trigger")
    rng = rng_from(seed, 41)
    hosts = tuple(int(v) for v in rng.choice(graph.num_nodes, size=n_t, replace=False))
    host_set = set(hosts)
    edges = {e for e in graph.edges if not (e[0] in host_set and e[1] in host_set)}
    for i, j in trigger.edges:
        a, b = hosts[i], hosts[j]
        edges.add((min(a, b), max(a, b)))
    feats = graph.features
    if spec.feature_mode != "keep_original":
        feats = feats.copy()
        for t_idx, host in enumerate(hosts):
            feats[host] = trigger.features[t_idx]
    return Graph(graph.num_nodes, feats, frozenset(edges), graph.label), hosts


def poison_dataset(train: Dataset, spec: TriggerSpec, avg_nodes: float) -> tuple[Dataset, PoisonReport]:
    """Inject the trigger into a seeded sample of training graphs and
    relabel them to the target class.

    Exactly round(injection_ratio * |train|) graphs are poisoned, drawn
    from non-target classes first; graphs too small to host the trigger
    are skipped and recorded.
    """
    count = int(round(spec.injection_ratio * len(train)))
    if count < 1:
        raise ValueError(f"injection ratio {spec.injection_ratio} rounds to zero graphs")
    if spec.target_label >= train.num_classes:
        raise ValueError("target label outside the dataset's classes")
    trigger = make_er_trigger(spec, avg_nodes, feature_dim=train.feature_dim)
    n_t = trigger.num_nodes

    rng = rng_from(spec.seed, 43)
    eligible = [i for i, g in enumerate(train.graphs) if g.num_nodes >= n_t]
    skipped = tuple(i for i, g in enumerate(train.graphs) if g.num_nodes < n_t)
    non_target = [i for i in eligible if train.graphs[i].label != spec.target_label]
    target = [i for i in eligible if train.graphs[i].label == spec.target_label]
    if count > len(eligible):
        raise ValueError(f"only {len(eligible)} graphs can host the trigger, need {count}")
    pool = [non_target[k] for k in rng.permutation(len(non_target))]
    if count > len(pool):
        pool += [target[k] for k in rng.permutation(len(target))]
    chosen = sorted(pool[:count])

    graphs = list(train.graphs)
    assignments = []
    for i in chosen:
        injected, hosts = inject_trigger(graphs[i], trigger, spec, seed=int(rng.integers(2**31)))
        graphs[i] = injected.with_label(spec.target_label)
        assignments.append(hosts)
    report = PoisonReport(tuple(chosen), trigger, tuple(assignments), skipped)
    return train.replace_graphs(graphs), report


def apply_trigger_to_test(test: Dataset, report: PoisonReport, spec: TriggerSpec) -> Dataset:
    """Triggered evaluation set: every non-target-class test graph gets the
    trigger, keeping its TRUE label so attack success counts target-class
    predictions. Graphs too small to host the trigger are dropped.
    """
    if len(test) == 0:
        raise ValueError("test set must be non-empty")
    rng = rng_from(spec.seed, 47)
    triggered = []
    for g in test.graphs:
        if g.label == spec.target_label:
            continue
        seed = int(rng.integers(2**31))
        if g.num_nodes < report.trigger.num_nodes:
            continue
        injected, _ = inject_trigger(g, report.trigger, spec, seed=seed)
        triggered.append(injected)
    return test.replace_graphs(triggered)


def triggered_copies(graphs, trigger: Graph, spec: TriggerSpec, seed: int):
    """Inject with fixed per-graph assignments; returns (graphs, host lists)."""
    rng = rng_from(seed, 53)
    out, hosts_out = [], []
    for g in graphs:
        injected, hosts = inject_trigger(g, trigger, spec, seed=int(rng.integers(2**31)))
        out.append(injected)
        hosts_out.append(hosts)
    return out, hosts_out


def optimize_trigger_features(
    params: ModelParams,
    config: GnnConfig,
    trigger: Graph,
    spec: TriggerSpec,
    hosts: list[Graph],
    steps: int,
    step_size: float,
    adaptive: bool = False,
    teacher_params: ModelParams | None = None,
    attention_weight: float = 1.0,
) -> Graph:
    """Gradient-ascent refinement of trigger node features.

    The objective is the mean target-class log-probability of the host
    graphs with the trigger installed. With ``adaptive`` set, an
    attention-alignment penalty between ``teacher_params`` (a clean-ish
    reference) and the victim model is subtracted, imitating an attacker
    who knows the defense reads attention maps. Topology never changes.
    """
    if spec.feature_mode != "optimized":
        raise ValueError("optimize_trigger_features requires feature_mode='optimized'")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if adaptive and teacher_params is None:
        raise ValueError("adaptive optimization needs teacher_params")
    if not hosts:
        raise ValueError("need at least one host graph")

    # fix injection placements once so the objective is stationary
    base, host_assignments = triggered_copies(hosts, trigger, spec, spec.seed)
    feats = trigger.features.copy()

    for _ in range(steps):
        grad = np.zeros_like(feats)
        for graph, assignment in zip(base, host_assignments):
            node_feats = graph.features.copy()
            for t_idx, host in enumerate(assignment):
                node_feats[host] = feats[t_idx]
            current = Graph(graph.num_nodes, node_feats, graph.edges, graph.label)
            trace = forward(params, config, current)
            probs = _softmax(trace.logits)
            d_logits = -(probs.copy())
            d_logits[spec.target_label] += 1.0  # ascend log p(target)
            d_logits /= len(base)
            d_layers = None
            if adaptive:
                deg = degree(current)
                teacher_trace = forward(teacher_params, config, current)
                layer_grads = attention.attention_distill_loss_grad(
                    teacher_trace, trace, deg, p=2.0)
                d_layers = [-(attention_weight / len(base)) * lg for lg in layer_grads]
                teacher_side = attention.attention_distill_loss_grad(
                    trace, teacher_trace, deg, p=2.0)
                d_input_teacher = input_gradient(
                    teacher_params, config, current, np.zeros(config.num_classes),
                    [-(attention_weight / len(base)) * lg for lg in teacher_side])
                for t_idx, host in enumerate(assignment):
                    grad[t_idx] += d_input_teacher[host]
            d_input = input_gradient(params, config, current, d_logits, d_layers)
            for t_idx, host in enumerate(assignment):
                grad[t_idx] += d_input[host]
        feats = feats + step_size * grad

    return Graph(trigger.num_nodes, feats, trigger.edges, trigger.label)


def triggered_objective(params, config, trigger, spec, hosts,
                        adaptive=False, teacher_params=None, attention_weight=1.0) -> float:
    """The quantity optimize_trigger_features ascends, for measurement."""
    base, host_assignments = triggered_copies(hosts, trigger, spec, spec.seed)
    total = 0.0
    for graph, assignment in zip(base, host_assignments):
        node_feats = graph.features.copy()
        for t_idx, host in enumerate(assignment):
            node_feats[host] = trigger.features[t_idx]
        current = Graph(graph.num_nodes, node_feats, graph.edges, graph.label)
        trace = forward(params, config, current)
        probs = _softmax(trace.logits)
        total += float(np.log(probs[spec.target_label]))
        if adaptive:
            teacher_trace = forward(teacher_params, config, current)
            total -= attention_weight * attention.attention_distill_loss(
                teacher_trace, trace, degree(current), p=2.0)
    return total / len(base)
