"""Binary classification and filtered ranking metrics.

Classification metrics operate on parallel score/label lists and are exact
over all pairs (no trapezoid approximations).  Ranking metrics follow the
filtered protocol: each test triple is ranked against every type-valid
corruption that is not itself a known positive, on both the head and the
tail side, with ties resolved pessimistically (the positive is placed
after equal-scored negatives).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import HeteroGraph, Triple


class MetricsError(ValueError):
    """Degenerate input (single class, no positives, empty candidate set)."""


@dataclass(frozen=True)
class LabeledScores:
    scores: np.ndarray
    labels: np.ndarray

    @staticmethod
    def of(scores, labels) -> "LabeledScores":
        s = np.asarray(scores, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        if s.shape != y.shape or s.ndim != 1:
            raise MetricsError(f"scores {s.shape} and labels {y.shape} must match")
        if not np.isin(y, (0, 1)).all():
            raise MetricsError("labels must be binary")
        return LabeledScores(s, y)


def roc_auc(data: LabeledScores) -> float:
    """Exact Mann-Whitney statistic: P(pos > neg) + 0.5 * P(tie)."""
    pos = data.scores[data.labels == 1]
    neg = data.scores[data.labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricsError("roc_auc needs both classes present")
    # Rank-based evaluation: average ranks handle ties exactly.
    order = np.argsort(data.scores, kind="stable")
    ranks = np.empty(len(data.scores))
    sorted_scores = data.scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[data.labels == 1].sum()
    n_pos, n_neg = len(pos), len(neg)
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(data: LabeledScores) -> float:
    """Step-wise AP: mean precision at each positive, in descending-score
    order with ties broken by stable input order."""
    n_pos = int((data.labels == 1).sum())
    if n_pos == 0:
        raise MetricsError("average_precision needs at least one positive")
    order = np.argsort(-data.scores, kind="stable")
    hits = 0
    total = 0.0
    for i, idx in enumerate(order, start=1):
        if data.labels[idx] == 1:
            hits += 1
            total += hits / i
    return float(total / n_pos)


def f1_at(data: LabeledScores, threshold: float = 0.5) -> float:
    """F1 with scores >= threshold predicted positive; 0 when degenerate."""
    predicted = data.scores >= threshold
    tp = int((predicted & (data.labels == 1)).sum())
    fp = int((predicted & (data.labels == 0)).sum())
    fn = int((~predicted & (data.labels == 1)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2.0 * precision * recall / (precision + recall))


@dataclass(frozen=True)
class RankingCase:
    positive: Triple
    side: str  # endpoint that was corrupted: "head" or "tail"
    candidates: np.ndarray  # replacement node ids of surviving corruptions
    rank: int  # 1-based, pessimistic under ties


def filtered_ranking(
    score_triples,
    g: HeteroGraph,
    test_edges: np.ndarray,
    known_positives: Iterable[Triple],
    sides: Sequence[str] = ("head", "tail"),
) -> list[RankingCase]:
    """Rank each test triple against its filtered corruption candidates.

    ``score_triples`` maps an (m, 3) int array to scores.  Candidates are
    type-valid replacement endpoints; any candidate triple found in
    ``known_positives`` is dropped before ranking, so the positive never
    competes against another true edge.  known_positives must cover the
    train/valid/test union.
    """
    known = {tuple(int(x) for x in e) for e in known_positives}
    cases: list[RankingCase] = []
    test_edges = np.asarray(test_edges, dtype=np.int64).reshape(-1, 3)
    for src, rel, dst in test_edges.tolist():
        s_pos = float(score_triples(np.array([[src, rel, dst]], dtype=np.int64))[0])
        for side in sides:
            if side == "head":
                pool = g.type_members[int(g.node_types[src])]
                candidates = [(int(m), rel, dst) for m in pool.tolist()]
            else:
                pool = g.type_members[int(g.node_types[dst])]
                candidates = [(src, rel, int(m)) for m in pool.tolist()]
            survivor_pairs = [
                (m, c) for m, c in zip(pool.tolist(), candidates)
                if c != (src, rel, dst) and c not in known
            ]
            if not survivor_pairs:
                raise MetricsError(
                    f"no candidates survive filtering for {(src, rel, dst)} "
                    f"({side} side)"
                )
            survivors = [m for m, _ in survivor_pairs]
            triples = np.array([c for _, c in survivor_pairs], dtype=np.int64)
            scores = np.asarray(score_triples(triples), dtype=np.float64)
            rank = 1 + int((scores >= s_pos).sum())
            cases.append(
                RankingCase(
                    positive=(src, rel, dst),
                    side=side,
                    candidates=np.array(survivors, dtype=np.int64),
                    rank=rank,
                )
            )
    return cases


def mrr(cases: Sequence[RankingCase]) -> float:
    if not cases:
        raise MetricsError("mrr of an empty case list")
    return float(np.mean([1.0 / c.rank for c in cases]))


def hit_at_k(cases: Sequence[RankingCase], k: int) -> float:
    if not cases:
        raise MetricsError("hit_at_k of an empty case list")
    return float(np.mean([1.0 if c.rank <= k else 0.0 for c in cases]))


@dataclass
class MetricsReport:
    """Classification + ranking metric bundle with a fixed JSON layout."""

    auc: float
    ap: float
    f1: float
    mrr: float
    hits: dict[int, float]
    n_cases: int

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "ap": self.ap,
            "f1_at_0.5": self.f1,
            "mrr": self.mrr,
            "hit": {str(k): v for k, v in sorted(self.hits.items())},
            "n_cases": self.n_cases,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluate_split(
    score_triples,
    g: HeteroGraph,
    eval_edges: np.ndarray,
    negative_edges: np.ndarray,
    known_positives: Iterable[Triple],
    ks: Sequence[int] = (1, 10, 30),
) -> MetricsReport:
    """Full metric surface for one evaluation split.

    Classification metrics score the split's positives against the given
    negative triples; ranking metrics use the filtered protocol over both
    corruption sides.
    """
    eval_edges = np.asarray(eval_edges, dtype=np.int64).reshape(-1, 3)
    negative_edges = np.asarray(negative_edges, dtype=np.int64).reshape(-1, 3)
    scores = np.concatenate(
        [score_triples(eval_edges), score_triples(negative_edges)]
    )
    labels = np.concatenate(
        [np.ones(len(eval_edges), dtype=int), np.zeros(len(negative_edges), dtype=int)]
    )
    data = LabeledScores.of(scores, labels)
    cases = filtered_ranking(score_triples, g, eval_edges, known_positives)
    return MetricsReport(
        auc=roc_auc(data),
        ap=average_precision(data),
        f1=f1_at(data, 0.5),
        mrr=mrr(cases),
        hits={k: hit_at_k(cases, k) for k in ks},
        n_cases=len(cases),
    )
