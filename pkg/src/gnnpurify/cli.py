"""Command-line surface.

Every subcommand reads one JSON config file (where it needs more than a
couple of values) plus ``--set dotted.key=value`` overrides, and funnels
all randomness through explicit seed fields so runs replay exactly.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .attack import PoisonReport, apply_trigger_to_test, poison_dataset
from .datasets import load_tu_dataset, split, synth_dataset, write_tu_dataset, exclude
from .engine import TrainConfig, evaluate, init_params, load_checkpoint, save_checkpoint, train
from .harness import ExperimentConfig, export_attention, run_experiment
from .metrics import asr


def _load_config(path: str, overrides: list[str]) -> ExperimentConfig:
    with open(path) as fh:
        doc = json.load(fh)
    for item in overrides:
        key, _, raw = item.partition("=")
        if not _:
            raise ValueError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(doc)


def _cmd_synth(args) -> int:
    data = synth_dataset(args.num_graphs, args.seed)
    write_tu_dataset(data, args.out)
    print(f"wrote {len(data)} graphs ({data.num_classes} classes) to {args.out}")
    return 0


def _cmd_poison(args) -> int:
    cfg = _load_config(args.config, args.set or [])
    data = cfg.dataset.load()
    train_set, _, _ = split(data, cfg.split)
    poisoned, report = poison_dataset(train_set, cfg.trigger, train_set.avg_nodes())
    out = Path(args.out)
    write_tu_dataset(poisoned.replace_graphs(poisoned.graphs), out)
    report.save(out / "poison_report.json")
    print(f"poisoned {len(report.poisoned_indices)} of {len(train_set)} training graphs -> {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, args.set or [])
    data = cfg.dataset.load()
    model_cfg = replace(cfg.model, num_classes=data.num_classes, feature_dim=data.feature_dim)
    train_set, test_set, holdout = split(data, cfg.split)
    if args.poisoned:
        poisoned, report = poison_dataset(train_set, cfg.trigger, train_set.avg_nodes())
        train_set = poisoned
        report.save(Path(args.out).with_suffix(".poison_report.json"))
    params = train(init_params(model_cfg), model_cfg, train_set, cfg.attack_train)
    save_checkpoint(params, model_cfg, args.out)
    acc = evaluate(params, model_cfg, exclude(test_set, holdout))
    print(f"trained {model_cfg.arch} ({model_cfg.num_layers}x{model_cfg.hidden_dim}); test ACC {acc:.3f}")
    return 0


def _cmd_defend(args) -> int:
    from .baselines import finetune_only, vanilla_distill
    from .defense import finetune_teacher, graphnad_defend

    cfg = _load_config(args.config, args.set or [])
    params, model_cfg = load_checkpoint(args.checkpoint)
    data = cfg.dataset.load()
    _, _, holdout = split(data, cfg.split)
    dc = cfg.defense_config
    method = args.method or cfg.defense
    if method == "graphnad":
        purified = graphnad_defend(params, model_cfg, holdout, dc, log_path=args.log)
    elif method == "finetune":
        purified = finetune_only(params, model_cfg, holdout, dc.distill_epochs, dc.learning_rate,
                                 dc.batch_size, seed=dc.seed)
    elif method == "vanilla_distill":
        teacher = finetune_teacher(params, model_cfg, holdout, dc)
        purified = vanilla_distill(params, teacher, model_cfg, holdout, dc.distill_epochs,
                                   dc.learning_rate, batch_size=dc.batch_size, seed=dc.seed)
    else:
        raise ValueError(f"defend supports graphnad/finetune/vanilla_distill, got {method!r}")
    save_checkpoint(purified, model_cfg, args.out)
    print(f"purified checkpoint written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.set or [])
    params, model_cfg = load_checkpoint(args.checkpoint)
    data = cfg.dataset.load()
    _, test_set, holdout = split(data, cfg.split)
    eval_test = exclude(test_set, holdout)
    acc = evaluate(params, model_cfg, eval_test)
    print(f"ACC {acc:.4f} on {len(eval_test)} graphs")
    if args.poison_report:
        report = PoisonReport.load(args.poison_report)
        triggered = apply_trigger_to_test(eval_test, report, cfg.trigger)
        rate = asr(params, model_cfg, triggered, cfg.trigger.target_label)
        print(f"ASR {'undefined' if rate is None else f'{rate:.4f}'} on {len(triggered)} triggered graphs")
    return 0


def _cmd_export_attention(args) -> int:
    cfg = _load_config(args.config, args.set or [])
    params, model_cfg = load_checkpoint(args.checkpoint)
    data = cfg.dataset.load()
    graph = data.graphs[args.graph_index]
    export_attention(params, model_cfg, graph, args.p, args.out)
    print(f"attention export for graph {args.graph_index} -> {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config(args.config, args.set or [])
    rows = run_experiment(cfg)
    summaries = [r for r in rows if r["seed"] in ("mean", "std")]
    for r in summaries:
        rate = "undef" if r["asr"] is None else f"{r['asr']:.3f}"
        print(f"{r['group']:>24} {r['phase']:>7} {r['seed']:>4}  ASR {rate}  ACC {r['acc']:.3f}")
    print(f"results written to {cfg.output_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnnpurify",
                                     description="Train, backdoor, and purify small graph classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus in TUDataset format")
    p.add_argument("--out", required=True)
    p.add_argument("--num-graphs", type=int, default=400)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(fn=_cmd_synth)

    for name, fn, extras in [
        ("poison", _cmd_poison, [("--out", {"required": True})]),
        ("train", _cmd_train, [("--out", {"required": True}), ("--poisoned", {"action": "store_true"})]),
        ("defend", _cmd_defend, [("--checkpoint", {"required": True}), ("--out", {"required": True}),
                                 ("--method", {"default": ""}), ("--log", {"default": None})]),
        ("eval", _cmd_eval, [("--checkpoint", {"required": True}), ("--poison-report", {"default": ""})]),
        ("export-attention", _cmd_export_attention, [("--checkpoint", {"required": True}),
                                                     ("--graph-index", {"type": int, "default": 0}),
                                                     ("--p", {"type": float, "default": 2.0}),
                                                     ("--out", {"required": True})]),
        ("run", _cmd_run, []),
    ]:
        p = sub.add_parser(name)
        p.add_argument("config", help="experiment config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (dotted path, JSON value)")
        for flag, kw in extras:
            p.add_argument(flag, **kw)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
