"""Command-line entry point.

Commands: ``generate`` (synthetic data), ``train``, ``evaluate``,
``diagnose`` (attention entropy report), plus the study runners ``sweep``
and ``ablate``.  Every run writes its fully resolved configuration next to
its outputs; any config key can be overridden on the command line as
``--<key> <value>``.  Exit codes: 0 success, 1 usage/config error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import experiments, plots
from .config import ConfigError
from .graph import GraphError, load_edges, load_graph, save_edges, save_graph, \
    generate_synthetic, split_edges
from .metrics import MetricsError, evaluate_split
from .model import (
    CheckpointError,
    EmbeddingScorer,
    ModelParameters,
    attention_entropy,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .sampling import SamplingError
from .training import NonFiniteLossError, fit

USAGE_ERROR = 1
RUNTIME_ERROR = 2


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _collect_overrides(extras: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extras):
        key = extras[i]
        if not key.startswith("--") or i + 1 >= len(extras):
            raise ConfigError(f"expected '--<config.key> <value>' pairs, got {extras[i:]}")
        overrides[key[2:]] = extras[i + 1]
        i += 2
    return overrides


def cmd_generate(args, overrides) -> int:
    raw = cfgmod.parse_kv_file(args.config) if args.config else {}
    raw = cfgmod.apply_overrides(raw, overrides)
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    values = cfgmod.GENERATE_SCHEMA.resolve(raw)
    spec = cfgmod.synthetic_spec_from(values)
    graph, held_out = generate_synthetic(spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out / "nodes.tsv", out / "edges.tsv")
    save_edges(held_out, out / "heldout.tsv")
    cfgmod.write_resolved(cfgmod.GENERATE_SCHEMA, values, out / "resolved_config.cfg")
    print(
        f"wrote {graph.node_count} nodes, {graph.edge_count} edges "
        f"(+{len(held_out)} withheld) to {out}"
    )
    return 0


def _load_run_inputs(values):
    for key in ("data.nodes", "data.edges"):
        if not values[key]:
            raise ConfigError(f"missing required config key {key}")
        if not Path(values[key]).exists():
            raise ConfigError(f"{key}: file not found: {values[key]}")
    graph = load_graph(values["data.nodes"], values["data.edges"])
    held_out = None
    if values["data.heldout"]:
        if not Path(values["data.heldout"]).exists():
            raise ConfigError(
                f"data.heldout: file not found: {values['data.heldout']}"
            )
        held_out = load_edges(values["data.heldout"])
    return graph, held_out


def cmd_train(args, overrides) -> int:
    raw = cfgmod.parse_kv_file(args.config) if args.config else {}
    raw = cfgmod.apply_overrides(raw, overrides)
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    values = cfgmod.RUN_SCHEMA.resolve(raw)

    graph, held_out = _load_run_inputs(values)
    ratios = tuple(values["split.ratios"])
    train_edges, valid_edges, test_edges = split_edges(
        graph.edges, ratios, values["seed"]
    )
    train_graph = graph.with_edges(train_edges)

    model_cfg = cfgmod.model_config_from(
        values,
        [graph.schema[k] for k in range(graph.type_count)],
        graph.relation_count,
    )
    train_cfg = cfgmod.train_config_from(values)
    params = ModelParameters(model_cfg)
    result = fit(
        train_graph,
        (train_edges, valid_edges, test_edges),
        params,
        train_cfg,
        held_out_edges=held_out,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(cfgmod.RUN_SCHEMA, values, out / "resolved_config.cfg")
    extra = {
        "seed": values["seed"],
        "split_ratios": list(ratios),
        "edges_sha256": _sha256(values["data.edges"]),
        "nodes_sha256": _sha256(values["data.nodes"]),
        "best_epoch": result.best_epoch,
        "best_val_auc": result.best_val_auc,
    }
    save_checkpoint(out / "best.ckpt", result.params, extra)
    with open(out / "training_log.jsonl", "w", encoding="utf-8") as fh:
        header = {
            "event": "run_started",
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in result.log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    plots.save_training_curves(result.log, out / "training_curves.png")
    print(
        f"best epoch {result.best_epoch}: val_auc={result.best_val_auc:.4f}; "
        f"checkpoint at {out / 'best.ckpt'}"
    )
    return 0


def _rebuild_from_checkpoint(checkpoint_path, data_dir):
    params, extra = load_checkpoint(checkpoint_path)
    data = Path(data_dir)
    nodes_path = data / "nodes.tsv"
    edges_path = data / "edges.tsv"
    for p in (nodes_path, edges_path):
        if not p.exists():
            raise ConfigError(f"data file not found: {p}")
    if "edges_sha256" in extra and extra["edges_sha256"] != _sha256(edges_path):
        raise ConfigError(
            f"{edges_path} differs from the data this checkpoint was trained on"
        )
    graph = load_graph(nodes_path, edges_path)
    ratios = tuple(extra.get("split_ratios", (0.8, 0.1, 0.1)))
    seed = int(extra.get("seed", 0))
    splits = split_edges(graph.edges, ratios, seed)
    train_graph = graph.with_edges(splits[0])
    return params, extra, graph, train_graph, splits, seed


def cmd_evaluate(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"evaluate takes no config overrides: {sorted(overrides)}")
    params, extra, graph, train_graph, splits, seed = _rebuild_from_checkpoint(
        args.checkpoint, args.data
    )
    split_names = {"valid": 1, "test": 2}
    eval_edges = splits[split_names[args.split]]
    ks = tuple(int(k) for k in args.k.split(","))

    scorer = EmbeddingScorer.from_parameters(train_graph, params)
    known = {tuple(e) for e in graph.edges.tolist()}
    negatives = experiments.draw_classification_negatives(
        train_graph, eval_edges, known, seed, tag=split_names[args.split]
    )
    report = evaluate_split(
        scorer.score_triples, train_graph, eval_edges, negatives, known, ks
    )
    text = report.to_json()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"metrics_{args.split}.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_diagnose(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"diagnose takes no config overrides: {sorted(overrides)}")
    params, extra, graph, train_graph, splits, seed = _rebuild_from_checkpoint(
        args.checkpoint, args.data
    )
    fwd = forward(train_graph, params)
    records = attention_entropy(fwd)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "attention_entropy.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("node_id,layer,in_degree,entropy\n")
        for rec in records:
            for node, deg, ent in zip(rec.node_ids, rec.in_degrees, rec.entropies):
                fh.write(f"{int(node)},{rec.layer},{int(deg)},{repr(float(ent))}\n")
    for rec in records:
        plots.save_entropy_histogram(
            rec, out / f"attention_entropy_layer{rec.layer}.png"
        )
    n_rows = sum(len(r.node_ids) for r in records)
    print(f"wrote {n_rows} rows to {csv_path}")
    return 0


def _study_setup(args, overrides):
    raw = cfgmod.parse_kv_file(args.config) if args.config else {}
    raw = cfgmod.apply_overrides(raw, overrides)
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    # Studies regenerate their own benchmark data; data paths are unused.
    raw.setdefault("data.nodes", "")
    raw.setdefault("data.edges", "")
    values = cfgmod.RUN_SCHEMA.resolve(raw)
    spec_raw = cfgmod.parse_kv_file(args.spec_config) if args.spec_config else {}
    spec_values = cfgmod.GENERATE_SCHEMA.resolve(spec_raw)
    spec = cfgmod.synthetic_spec_from(spec_values)
    model_cfg = cfgmod.model_config_from(
        values, spec.attr_dims_per_type, spec.relation_count
    )
    train_cfg = cfgmod.train_config_from(values)
    seeds = list(range(values["seed"], values["seed"] + args.seeds))
    return values, spec, model_cfg, train_cfg, seeds


def cmd_sweep(args, overrides) -> int:
    values, spec, model_cfg, train_cfg, seeds = _study_setup(args, overrides)
    margins = [float(m) for m in args.margins.split(",")]
    results = experiments.margin_sweep(spec, model_cfg, train_cfg, margins, seeds)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    means, stds = [], []
    for m in margins:
        hits = [t.report.hits[10] for t in results[m]]
        means.append(float(np.mean(hits)))
        stds.append(float(np.std(hits)))
        rows.append([m, means[-1], stds[-1], len(hits)])
    experiments.write_table(
        out / "margin_sweep.csv", ["margin", "mean_hit10", "std_hit10", "runs"], rows
    )
    plots.save_margin_sweep(margins, means, stds, out / "margin_sweep.png")
    for m, mean, std in zip(margins, means, stds):
        print(f"margin={m:<6g} hit@10={mean:.4f} +/- {std:.4f}")
    return 0


def cmd_ablate(args, overrides) -> int:
    values, spec, model_cfg, train_cfg, seeds = _study_setup(args, overrides)
    results = experiments.ablation_grid(spec, model_cfg, train_cfg, seeds)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = {name: [t.report.auc for t in trials] for name, trials in results.items()}
    rows = [
        [name, float(np.mean(aucs)), float(np.std(aucs)), len(aucs)]
        for name, aucs in cells.items()
    ]
    experiments.write_table(
        out / "ablation.csv", ["cell", "mean_test_auc", "std_test_auc", "runs"], rows
    )
    plots.save_ablation_bars(cells, out / "ablation.png")
    for name, mean, std, n in rows:
        print(f"{name:<20s} auc={mean:.4f} +/- {std:.4f} ({n} runs)")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hetlink",
        description="Relationship prediction on attributed heterogeneous graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")

    p = sub.add_parser("generate", help="write a synthetic benchmark dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and save the best checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metric report for a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory with nodes.tsv/edges.tsv")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--k", default="1,10,30", help="comma-separated Hit@k cutoffs")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", help="attention entropy report (CSV + figures)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory with nodes.tsv/edges.tsv")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="selection-margin sweep on the synthetic benchmark")
    common(p)
    p.add_argument("--spec-config", help="synthetic benchmark config file")
    p.add_argument("--margins", default="0,0.05,0.1,0.15,0.2,0.3")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="attention x sampler ablation grid")
    common(p)
    p.add_argument("--spec-config", help="synthetic benchmark config file")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        overrides = _collect_overrides(extras)
        return args.func(args, overrides)
    except (ConfigError, GraphError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (SamplingError, NonFiniteLossError, MetricsError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
