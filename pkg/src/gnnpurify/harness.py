"""End-to-end experiment runner: poison, train, defend, measure, record.

One experiment = one JSON-serializable config, a list of seeds, and an
optional sweep axis. Every stage seeds its own RNG stream from the run
seed, so rows are independently replayable from the artifacts written to
the output directory (checkpoints, poison report, defense logs).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attack import PoisonReport, TriggerSpec, apply_trigger_to_test, poison_dataset
from .attention import attention_map, normalize_attention
from .baselines import (
    PruneConfig,
    SmoothingConfig,
    finetune_only,
    prune_graph,
    smoothed_predict,
    vanilla_distill,
)
from .datasets import Dataset, SplitSpec, exclude, load_tu_dataset, split, synth_dataset
from .defense import DefenseConfig, clean_accuracy_probe, finetune_teacher, graphnad_defend
from .engine import (
    GnnConfig,
    ModelParams,
    TrainConfig,
    evaluate,
    forward,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .graphs import Graph, degree
from .metrics import asr, confusion_matrix, per_class_accuracy

DEFENSES = ("none", "graphnad", "finetune", "vanilla_distill", "prune", "rs")
SWEEP_AXES = ("injection_ratio", "trigger_size", "holding_rate", "p", "pairs", "beta_gamma")

CSV_HEADER = [
    "group", "defense", "phase", "seed", "asr", "acc", "per_class_acc",
    "wall_time_s", "fingerprint",
]


@dataclass(frozen=True)
class DataSource:
    kind: str = "synthetic"  # or "tu"
    num_graphs: int = 400
    seed: int = 1
    directory: str = ""
    name: str = ""

    def load(self) -> Dataset:
        if self.kind == "synthetic":
            return synth_dataset(self.num_graphs, self.seed)
        if self.kind == "tu":
            return load_tu_dataset(self.directory, self.name)
        raise ValueError(f"unknown dataset kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DataSource = field(default_factory=DataSource)
    model: GnnConfig = field(default_factory=GnnConfig)
    trigger: TriggerSpec = field(default_factory=TriggerSpec)
    defense_config: DefenseConfig = field(default_factory=DefenseConfig)
    attack_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30, batch_size=32, learning_rate=0.01))
    split: SplitSpec = field(default_factory=SplitSpec)
    defense: str = "graphnad"
    prune: PruneConfig = field(default_factory=PruneConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    sweep_axis: str = ""
    sweep_values: tuple = ()
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str = "results"

    def __post_init__(self):
        if self.defense not in DEFENSES:
            raise ValueError(f"defense must be one of {DEFENSES}")
        if self.sweep_axis and self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
        _validate_sweep(self.sweep_axis, self.sweep_values)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["sweep_values"] = [list(v) if isinstance(v, (tuple, list)) else v for v in self.sweep_values]
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        for key, cls in [
            ("dataset", DataSource), ("model", GnnConfig), ("trigger", TriggerSpec),
            ("defense_config", DefenseConfig), ("attack_train", TrainConfig),
            ("split", SplitSpec), ("prune", PruneConfig), ("smoothing", SmoothingConfig),
        ]:
            if key in doc and isinstance(doc[key], dict):
                doc[key] = cls(**doc[key])
        if "sweep_values" in doc:
            doc["sweep_values"] = tuple(
                tuple(v) if isinstance(v, list) else v for v in doc["sweep_values"])
        if "seeds" in doc:
            doc["seeds"] = tuple(doc["seeds"])
        return ExperimentConfig(**doc)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _validate_sweep(axis: str, values) -> None:
    if not axis:
        return
    if not values:
        raise ValueError("sweep axis set but no sweep values")
    for v in values:
        if axis in ("injection_ratio", "holding_rate") and not 0 < float(v) < 1:
            raise ValueError(f"{axis} value {v} out of (0, 1)")
        if axis == "trigger_size" and not 0 < float(v) <= 1:
            raise ValueError(f"trigger_size value {v} out of (0, 1]")
        if axis == "p" and float(v) < 1:
            raise ValueError(f"p value {v} must be >= 1")
        if axis == "beta_gamma" and len(v) != 2:
            raise ValueError("beta_gamma sweep values must be (beta, gamma) pairs")


def _apply_sweep(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if not axis:
        return cfg
    if axis == "injection_ratio":
        return replace(cfg, trigger=replace(cfg.trigger, injection_ratio=float(value)))
    if axis == "trigger_size":
        return replace(cfg, trigger=replace(cfg.trigger, trigger_size=float(value)))
    if axis == "holding_rate":
        return replace(cfg, split=replace(cfg.split, clean_holdout_fraction=float(value)))
    if axis == "p":
        return replace(cfg, defense_config=replace(cfg.defense_config, p=float(value)))
    if axis == "pairs":
        return replace(cfg, defense_config=replace(cfg.defense_config, pairs=str(value)))
    if axis == "beta_gamma":
        beta, gamma = value
        return replace(cfg, defense_config=replace(cfg.defense_config, beta=float(beta), gamma=float(gamma)))
    raise ValueError(f"unknown sweep axis {axis!r}")


def _seeded(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Push the run seed into every stage's seed field."""
    return replace(
        cfg,
        model=replace(cfg.model, seed=seed),
        trigger=replace(cfg.trigger, seed=seed),
        defense_config=replace(cfg.defense_config, seed=seed),
        attack_train=replace(cfg.attack_train, seed=seed),
        split=replace(cfg.split, seed=seed),
        smoothing=replace(cfg.smoothing, seed=seed),
    )


@dataclass
class RunArtifacts:
    """Everything one seeded run produced, in memory."""

    config: ExperimentConfig
    seed: int
    backdoored: ModelParams
    purified: ModelParams | None
    clean_reference: ModelParams
    report: PoisonReport
    before: dict
    after: dict
    wall_time_s: float


def _metrics(predict_fn, eval_test: Dataset, triggered: Dataset, target_label: int) -> dict:
    acc_hits = sum(1 for g in eval_test.graphs if predict_fn(g) == g.label)
    acc = acc_hits / len(eval_test)
    if len(triggered) == 0:
        rate = None
    else:
        rate = sum(1 for g in triggered.graphs if predict_fn(g) == target_label) / len(triggered)
    m = np.zeros((eval_test.num_classes, eval_test.num_classes), dtype=np.int64)
    for g in eval_test.graphs:
        m[g.label, predict_fn(g)] += 1
    per_class = per_class_accuracy(m)
    return {"asr": rate, "acc": acc, "per_class_acc": per_class.tolist()}


def run_single(cfg: ExperimentConfig, seed: int, run_dir: Path | None = None) -> RunArtifacts:
    """One seeded pipeline pass: poison, train, defend, measure."""
    started = time.perf_counter()
    cfg = _seeded(cfg, seed)
    data = cfg.dataset.load()
    model_cfg = replace(cfg.model, num_classes=data.num_classes, feature_dim=data.feature_dim)

    train_set, test_set, holdout = split(data, cfg.split)
    eval_test = exclude(test_set, holdout)
    avg_nodes = train_set.avg_nodes()
    poisoned, report = poison_dataset(train_set, cfg.trigger, avg_nodes)

    backdoored = train(init_params(model_cfg), model_cfg, poisoned, cfg.attack_train)
    clean_reference = train(init_params(model_cfg), model_cfg, train_set, cfg.attack_train)
    triggered = apply_trigger_to_test(eval_test, report, cfg.trigger)

    before = _metrics(lambda g: predict(backdoored, model_cfg, g), eval_test, triggered, cfg.trigger.target_label)
    before["clean_reference_acc"] = evaluate(clean_reference, model_cfg, eval_test)

    purified = None
    dc = cfg.defense_config
    if cfg.defense == "none":
        after = dict(before)
    elif cfg.defense == "graphnad":
        log_path = run_dir / "defense_log.json" if run_dir else None
        probe = clean_accuracy_probe(model_cfg, eval_test, triggered, cfg.trigger.target_label) if run_dir else None
        purified = graphnad_defend(backdoored, model_cfg, holdout, dc, log_path=log_path, probe=probe)
    elif cfg.defense == "finetune":
        purified = finetune_only(backdoored, model_cfg, holdout, dc.distill_epochs,
                                 dc.learning_rate, dc.batch_size, seed=dc.seed)
    elif cfg.defense == "vanilla_distill":
        teacher = finetune_teacher(backdoored, model_cfg, holdout, dc)
        purified = vanilla_distill(backdoored, teacher, model_cfg, holdout, dc.distill_epochs,
                                   dc.learning_rate, batch_size=dc.batch_size, seed=dc.seed)
    elif cfg.defense == "prune":
        fn = lambda g: predict(backdoored, model_cfg, prune_graph(g, cfg.prune.cosine_threshold))
        after = _metrics(fn, eval_test, triggered, cfg.trigger.target_label)
    elif cfg.defense == "rs":
        fn = lambda g: smoothed_predict(backdoored, model_cfg, g, cfg.smoothing)
        after = _metrics(fn, eval_test, triggered, cfg.trigger.target_label)

    if purified is not None:
        after = _metrics(lambda g: predict(purified, model_cfg, g), eval_test, triggered, cfg.trigger.target_label)

    wall = time.perf_counter() - started
    artifacts = RunArtifacts(cfg, seed, backdoored, purified, clean_reference, report, before, after, wall)
    if run_dir is not None:
        _save_run(run_dir, artifacts, model_cfg)
    return artifacts


def _save_run(run_dir: Path, art: RunArtifacts, model_cfg: GnnConfig) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(art.backdoored, model_cfg, run_dir / "backdoored.json")
    save_checkpoint(art.clean_reference, model_cfg, run_dir / "clean_reference.json")
    if art.purified is not None:
        save_checkpoint(art.purified, model_cfg, run_dir / "purified.json")
    art.report.save(run_dir / "poison_report.json")
    with open(run_dir / "run.json", "w") as fh:
        json.dump({
            "config": art.config.to_dict(),
            "seed": art.seed,
            "before": art.before,
            "after": art.after,
            "wall_time_s": art.wall_time_s,
        }, fh, indent=1)


def replay_metrics(run_dir: str | Path) -> dict:
    """Recompute before/after metrics from saved artifacts alone.

    Independent check that the recorded numbers follow from the recorded
    checkpoints: rebuilds the dataset and splits from config seeds, reuses
    the saved poison report for the triggered set, and re-evaluates.
    """
    run_dir = Path(run_dir)
    with open(run_dir / "run.json") as fh:
        doc = json.load(fh)
    cfg = ExperimentConfig.from_dict(doc["config"])
    report = PoisonReport.load(run_dir / "poison_report.json")
    data = cfg.dataset.load()
    _, test_set, holdout = split(data, cfg.split)
    eval_test = exclude(test_set, holdout)
    triggered = apply_trigger_to_test(eval_test, report, cfg.trigger)

    backdoored, model_cfg = load_checkpoint(run_dir / "backdoored.json")
    before = _metrics(lambda g: predict(backdoored, model_cfg, g), eval_test, triggered, cfg.trigger.target_label)
    out = {"before": before}
    purified_path = run_dir / "purified.json"
    if purified_path.exists():
        purified, _ = load_checkpoint(purified_path)
        out["after"] = _metrics(lambda g: predict(purified, model_cfg, g), eval_test, triggered, cfg.trigger.target_label)
    return out


def _fmt_rate(x) -> str:
    return "" if x is None else f"{x:.6f}"


def _summary_rows(rows: list[dict]) -> list[dict]:
    out = []
    for phase in ("before", "after"):
        sub = [r for r in rows if r["phase"] == phase]
        if not sub:
            continue
        asrs = [r["asr"] for r in sub if r["asr"] is not None]
        accs = [r["acc"] for r in sub]
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            out.append({
                "group": sub[0]["group"], "defense": sub[0]["defense"], "phase": phase,
                "seed": stat,
                "asr": float(fn(asrs)) if asrs else None,
                "acc": float(fn(accs)),
                "per_class_acc": [], "wall_time_s": "", "fingerprint": sub[0]["fingerprint"],
            })
    return out


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run the full (possibly swept) experiment and write artifacts.

    Returns the flat list of result rows (one per config x seed x phase
    plus mean/std summaries), which is also written to results.csv and,
    nested with metadata, to results.json.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep = list(cfg.sweep_values) if cfg.sweep_axis else [None]

    all_rows: list[dict] = []
    groups = []
    for value in sweep:
        group = f"{cfg.sweep_axis}={value}" if cfg.sweep_axis else "default"
        group_cfg = _apply_sweep(cfg, cfg.sweep_axis, value)
        fingerprint = group_cfg.fingerprint()
        rows = []
        runs = []
        for seed in cfg.seeds:
            run_dir = out_dir / group.replace("=", "_").replace(" ", "") / f"seed{seed}"
            try:
                art = run_single(group_cfg, seed, run_dir)
            except Exception as exc:  # record the failure, keep sweeping
                rows.append({
                    "group": group, "defense": cfg.defense, "phase": "error", "seed": seed,
                    "asr": None, "acc": None, "per_class_acc": [],
                    "wall_time_s": "", "fingerprint": fingerprint, "error": str(exc),
                })
                continue
            for phase, metrics in (("before", art.before), ("after", art.after)):
                rows.append({
                    "group": group, "defense": cfg.defense, "phase": phase, "seed": seed,
                    "asr": metrics["asr"], "acc": metrics["acc"],
                    "per_class_acc": metrics["per_class_acc"],
                    "wall_time_s": round(art.wall_time_s, 3), "fingerprint": fingerprint,
                })
            runs.append({"seed": seed, "before": art.before, "after": art.after,
                         "wall_time_s": art.wall_time_s, "run_dir": str(run_dir)})
        rows.extend(_summary_rows([r for r in rows if isinstance(r["seed"], int)]))
        all_rows.extend(rows)
        groups.append({"group": group, "sweep_value": value, "config": group_cfg.to_dict(), "runs": runs})

    with open(out_dir / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in all_rows:
            writer.writerow([
                r["group"], r["defense"], r["phase"], r["seed"],
                _fmt_rate(r["asr"]),
                _fmt_rate(r["acc"]) if r["acc"] is not None else "",
                ";".join(f"{x:.6f}" for x in r["per_class_acc"]),
                r["wall_time_s"], r["fingerprint"],
            ])
    with open(out_dir / "results.json", "w") as fh:
        json.dump({"config": cfg.to_dict(), "groups": groups}, fh, indent=1)
    return all_rows


def export_attention(params: ModelParams, config: GnnConfig, graph: Graph,
                     p: float, output: str | Path) -> None:
    """Write per-layer normalized attention scores as JSON plus a DOT file.

    The DOT rendering carries each layer's score as a node attribute so
    external tools can color nodes by attention.
    """
    output = Path(output)
    trace = forward(params, config, graph)
    deg = degree(graph)
    per_layer = [normalize_attention(attention_map(f, deg, p)).tolist() for f in trace.layers]
    doc = {
        "num_nodes": graph.num_nodes,
        "edges": sorted(list(e) for e in graph.edges),
        "p": p,
        "layer_scores": per_layer,
    }
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, "w") as fh:
        json.dump(doc, fh, indent=1)

    dot_path = output.with_suffix(".dot")
    lines = ["graph attention {"]
    for v in range(graph.num_nodes):
        attrs = ", ".join(f'layer{l + 1}="{scores[v]:.6f}"' for l, scores in enumerate(per_layer))
        lines.append(f"  {v} [{attrs}];")
    for i, j in sorted(graph.edges):
        lines.append(f"  {i} -- {j};")
    lines.append("}")
    dot_path.write_text("\n".join(lines) + "\n")
