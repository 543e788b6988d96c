"""Seed-averaged comparison studies over the synthetic benchmark.

These drive the same train/evaluate pipeline as the CLI, repeated across
seeds and configuration switches, and emit tidy CSV tables (plus figures)
for the sampler comparison, the margin sweep, the false-negative pool
study, and the attention/sampler ablation grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import HeteroGraph, SyntheticSpec, generate_synthetic, split_edges
from .metrics import MetricsReport, evaluate_split
from .model import EmbeddingScorer, ModelConfig, ModelParameters
from .sampling import SamplerConfig
from .seeding import subsystem_rng
from .training import TrainConfig, TrainResult, fit


@dataclass
class Benchmark:
    """One synthetic dataset instance plus its fixed partitions."""

    graph: HeteroGraph  # full observed graph (train + valid + test edges)
    train_graph: HeteroGraph  # propagation graph: train edges only
    train_edges: np.ndarray
    valid_edges: np.ndarray
    test_edges: np.ndarray
    held_out: np.ndarray  # withheld true edges, unknown to every split
    known_positives: set


def prepare_benchmark(
    spec: SyntheticSpec, split_seed: int, ratios=(0.8, 0.1, 0.1)
) -> Benchmark:
    graph, held_out = generate_synthetic(spec)
    train, valid, test = split_edges(graph.edges, ratios, split_seed)
    return Benchmark(
        graph=graph,
        train_graph=graph.with_edges(train),
        train_edges=train,
        valid_edges=valid,
        test_edges=test,
        held_out=held_out,
        known_positives={tuple(e) for e in graph.edges.tolist()},
    )


def draw_classification_negatives(
    g: HeteroGraph,
    eval_edges: np.ndarray,
    known: set,
    seed: int,
    tag: int,
) -> np.ndarray:
    """Fixed random corruptions of a split's positives for classification
    metrics, one per positive, filtered against every known positive."""
    rng = subsystem_rng(seed, "eval", tag)
    out = []
    for src, rel, dst in np.asarray(eval_edges).reshape(-1, 3).tolist():
        for _ in range(200):
            if rng.integers(0, 2) == 0:
                pool = g.type_members[int(g.node_types[src])]
                cand = (int(pool[rng.integers(0, len(pool))]), rel, dst)
            else:
                pool = g.type_members[int(g.node_types[dst])]
                cand = (src, rel, int(pool[rng.integers(0, len(pool))]))
            if cand not in known:
                out.append(cand)
                break
        else:
            raise RuntimeError(f"could not draw a negative for {(src, rel, dst)}")
    return np.array(out, dtype=np.int64).reshape(-1, 3)


@dataclass
class TrialResult:
    report: MetricsReport
    train: TrainResult


def run_trial(
    bench: Benchmark, model_cfg: ModelConfig, train_cfg: TrainConfig
) -> TrialResult:
    """Train on the benchmark and evaluate the best checkpoint on test."""
    params = ModelParameters(model_cfg)
    result = fit(
        bench.train_graph,
        (bench.train_edges, bench.valid_edges, bench.test_edges),
        params,
        train_cfg,
        held_out_edges=bench.held_out,
    )
    scorer = EmbeddingScorer.from_parameters(bench.train_graph, result.params)
    negatives = draw_classification_negatives(
        bench.train_graph, bench.test_edges, bench.known_positives,
        train_cfg.seed, tag=2,
    )
    report = evaluate_split(
        scorer.score_triples,
        bench.train_graph,
        bench.test_edges,
        negatives,
        bench.known_positives,
    )
    return TrialResult(report=report, train=result)


def _seeded_configs(base_model: ModelConfig, base_train: TrainConfig, seed: int):
    model_cfg = replace(base_model, seed=seed)
    sampler = replace(base_train.sampler, seed=seed)
    train_cfg = replace(base_train, seed=seed, sampler=sampler)
    return model_cfg, train_cfg


def compare_samplers(
    spec: SyntheticSpec,
    base_model: ModelConfig,
    base_train: TrainConfig,
    strategies: Sequence[SamplerConfig],
    seeds: Sequence[int],
) -> dict[str, list[TrialResult]]:
    """Same benchmark and seeds, one run per (strategy, seed)."""
    results: dict[str, list[TrialResult]] = {s.strategy: [] for s in strategies}
    for seed in seeds:
        bench = prepare_benchmark(replace(spec, seed=seed), seed)
        for sampler in strategies:
            model_cfg, train_cfg = _seeded_configs(
                base_model, replace(base_train, sampler=sampler), seed
            )
            results[sampler.strategy].append(run_trial(bench, model_cfg, train_cfg))
    return results


def margin_sweep(
    spec: SyntheticSpec,
    base_model: ModelConfig,
    base_train: TrainConfig,
    margins: Sequence[float],
    seeds: Sequence[int],
) -> dict[float, list[TrialResult]]:
    """Adaptive-strategy runs across a grid of selection margins."""
    results: dict[float, list[TrialResult]] = {m: [] for m in margins}
    for seed in seeds:
        bench = prepare_benchmark(replace(spec, seed=seed), seed)
        for m in margins:
            sampler = replace(base_train.sampler, strategy="asa", mu=m)
            model_cfg, train_cfg = _seeded_configs(
                base_model, replace(base_train, sampler=sampler), seed
            )
            results[m].append(run_trial(bench, model_cfg, train_cfg))
    return results


def pool_size_study(
    spec: SyntheticSpec,
    base_model: ModelConfig,
    base_train: TrainConfig,
    pool_sizes: Sequence[int],
    seeds: Sequence[int],
    asa_mu: float = 0.1,
    burn_in: int = 0,
) -> dict[str, dict[int, list[float]]]:
    """Mean per-run false-negative rate of selection, by strategy and pool.

    The hardest-in-pool strategy is measured at every pool size; the
    adaptive strategy at the largest one.  ``burn_in`` epochs are excluded
    from each run's mean, since selections against a barely-trained scorer
    say nothing about the strategy.
    """
    out: dict[str, dict[int, list[float]]] = {
        "self_adversarial": {p: [] for p in pool_sizes},
        "asa": {max(pool_sizes): []},
    }
    for seed in seeds:
        bench = prepare_benchmark(replace(spec, seed=seed), seed)
        for strategy, pools in (
            ("self_adversarial", pool_sizes),
            ("asa", [max(pool_sizes)]),
        ):
            for p in pools:
                sampler = replace(
                    base_train.sampler, strategy=strategy, pool_size=p, mu=asa_mu
                )
                model_cfg, train_cfg = _seeded_configs(
                    base_model, replace(base_train, sampler=sampler), seed
                )
                trial = run_trial(bench, model_cfg, train_cfg)
                rates = [row["fn_rate"] for row in trial.train.log
                         if row["fn_rate"] is not None
                         and row["epoch"] >= burn_in]
                out[strategy][p].append(float(np.mean(rates)))
    return out


ABLATION_CELLS = (
    ("attention+asa", True, "asa"),
    ("attention+random", True, "random"),
    ("mean+asa", False, "asa"),
    ("mean+random", False, "random"),
)


def ablation_grid(
    spec: SyntheticSpec,
    base_model: ModelConfig,
    base_train: TrainConfig,
    seeds: Sequence[int],
) -> dict[str, list[TrialResult]]:
    """2x2 grid: attention on/off x adaptive/random sampling.

    Attention off degenerates propagation to an unweighted neighborhood
    mean; each cell differs from the base configuration by exactly the
    two named switches.
    """
    results: dict[str, list[TrialResult]] = {name: [] for name, _, _ in ABLATION_CELLS}
    for seed in seeds:
        bench = prepare_benchmark(replace(spec, seed=seed), seed)
        for name, attention, strategy in ABLATION_CELLS:
            sampler = replace(base_train.sampler, strategy=strategy)
            model_cfg, train_cfg = _seeded_configs(
                replace(base_model, attention=attention),
                replace(base_train, sampler=sampler),
                seed,
            )
            results[name].append(run_trial(bench, model_cfg, train_cfg))
    return results


def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return Path(path)
