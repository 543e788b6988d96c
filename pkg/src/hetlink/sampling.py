"""Negative-sample generation and selection strategies.

A corruption replaces exactly one endpoint of a positive edge with a node
of the same type, keeping the relation, and must not collide with any
known positive.  Three selection strategies share the pooled-candidate
machinery: plain random draws, hardest-in-pool (pick the candidate the
frozen scorer rates highest), and the adaptive strategy that picks the
candidate whose score sits a margin below the paired positive's score,
which steers selection away from true-but-unobserved edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .graph import HeteroGraph, Triple
from .seeding import subsystem_rng

STRATEGIES = ("random", "self_adversarial", "asa")
SCHEDULES = ("constant", "linear", "exponential")

MAX_DRAW_ROUNDS = 200


class SamplingError(RuntimeError):
    """Retry budget exhausted; the graph is nearly complete for a pattern."""


@dataclass(frozen=True)
class Corruption:
    positive: Triple
    corrupted: Triple
    side: str  # "head" or "tail"


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = "random"
    pool_size: int = 1
    mu: float = 0.1
    schedule: str = "constant"
    rate: float = 0.0
    negatives_per_positive: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.rate < 0:
            raise ValueError("schedule rate must be >= 0")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


def mu_at(epoch: int, cfg: SamplerConfig) -> float:
    """Margin value at a given epoch under the configured decay schedule."""
    if cfg.schedule == "constant":
        return cfg.mu
    if cfg.schedule == "linear":
        return max(0.0, cfg.mu - cfg.rate * epoch)
    return cfg.mu * float(np.exp(-cfg.rate * epoch))


def _draw_corruptions(
    positive: Triple,
    g: HeteroGraph,
    count: int,
    rng: np.random.Generator,
    known: frozenset[Triple] | None = None,
) -> list[Corruption]:
    """`count` independent valid corruptions of one positive edge.

    Each draw picks a side uniformly, then a uniform replacement among
    nodes of the replaced endpoint's type, rejecting anything that lands
    on a known positive.  Duplicates across draws are permitted.
    """
    src, rel, dst = (int(x) for x in positive)
    known = known if known is not None else g.edge_set
    head_pool = g.type_members[int(g.node_types[src])]
    tail_pool = g.type_members[int(g.node_types[dst])]
    if len(head_pool) < 2 and len(tail_pool) < 2:
        raise SamplingError(
            f"no candidate replacements for either endpoint of {positive}"
        )

    out: list[Corruption | None] = [None] * count
    unresolved = np.arange(count)
    for _ in range(MAX_DRAW_ROUNDS):
        k = len(unresolved)
        if k == 0:
            break
        sides = rng.integers(0, 2, size=k)  # 0 = head, 1 = tail
        head_repl = head_pool[rng.integers(0, len(head_pool), size=k)]
        tail_repl = tail_pool[rng.integers(0, len(tail_pool), size=k)]
        still = []
        for i, slot in enumerate(unresolved):
            if sides[i] == 0:
                triple = (int(head_repl[i]), rel, dst)
                side = "head"
            else:
                triple = (src, rel, int(tail_repl[i]))
                side = "tail"
            if triple in known or triple == (src, rel, dst):
                still.append(slot)
            else:
                out[slot] = Corruption((src, rel, dst), triple, side)
        unresolved = np.array(still, dtype=np.intp)
    if len(unresolved):
        raise SamplingError(
            f"retry budget exhausted while corrupting {positive}; the graph "
            f"is nearly complete for this pattern"
        )
    return out  # type: ignore[return-value]


def corrupt_random(
    positive: Triple, g: HeteroGraph, rng: np.random.Generator
) -> Corruption:
    """One uniformly drawn valid corruption (type-matched, not in the graph)."""
    return _draw_corruptions(positive, g, 1, rng)[0]


def draw_pool(
    positive: Triple, g: HeteroGraph, pool_size: int, rng: np.random.Generator
) -> list[Corruption]:
    """Pool of independent corruptions; duplicates are permitted."""
    return _draw_corruptions(positive, g, pool_size, rng)


Scorer = Callable[[np.ndarray], np.ndarray]


def _pool_scores(pool: Sequence[Corruption], score_triples: Scorer) -> np.ndarray:
    triples = np.array([c.corrupted for c in pool], dtype=np.int64)
    return np.asarray(score_triples(triples), dtype=np.float64)


def select_self_adversarial(
    pool: Sequence[Corruption], score_triples: Scorer
) -> Corruption:
    """Pool element the frozen scorer rates highest; ties pick the lowest index."""
    if not pool:
        raise ValueError("empty candidate pool")
    scores = _pool_scores(pool, score_triples)
    return pool[int(np.argmax(scores))]


def select_asa(
    positive: Triple,
    pool: Sequence[Corruption],
    score_triples: Scorer,
    mu: float,
    positive_score: float | None = None,
) -> Corruption:
    """Pool element minimizing |s_pos - s_neg - mu|; ties pick the lowest index.

    ``positive_score`` short-circuits the scorer call for s_pos when the
    caller already scored the positive in a batch.
    """
    if not pool:
        raise ValueError("empty candidate pool")
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if positive_score is None:
        positive_score = float(
            np.asarray(score_triples(np.array([positive], dtype=np.int64)))[0]
        )
    scores = _pool_scores(pool, score_triples)
    residuals = np.abs(positive_score - scores - mu)
    return pool[int(np.argmin(residuals))]


def select_negative(
    positive: Triple,
    g: HeteroGraph,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    score_triples: Scorer | None,
    mu: float,
    positive_score: float | None = None,
) -> Corruption:
    """Dispatch one selection according to the configured strategy."""
    if cfg.strategy == "random" or cfg.pool_size == 1:
        return corrupt_random(positive, g, rng)
    pool = draw_pool(positive, g, cfg.pool_size, rng)
    if score_triples is None:
        raise ValueError(f"strategy {cfg.strategy!r} needs a frozen scorer")
    if cfg.strategy == "self_adversarial":
        return select_self_adversarial(pool, score_triples)
    return select_asa(positive, pool, score_triples, mu, positive_score)


def positive_rng(seed: int, epoch: int, step: int, position: int):
    """Counter-based stream for one positive edge's pool draws.

    Keyed by (epoch, step, position-in-batch) so selections stay identical
    no matter how positives are scheduled across workers.
    """
    return subsystem_rng(seed, "sampler", epoch, step, position)


def false_negative_rate(
    selected: Iterable[Corruption], held_out_edges: np.ndarray | Sequence[Triple]
) -> float:
    """Fraction of selected corruptions that are actually withheld positives."""
    held = {tuple(int(x) for x in e) for e in np.asarray(held_out_edges).reshape(-1, 3)}
    chosen = [c.corrupted for c in selected]
    if not chosen:
        return 0.0
    return sum(1 for t in chosen if t in held) / len(chosen)


def all_valid_corruptions(
    positive: Triple, g: HeteroGraph, known: frozenset[Triple] | None = None
) -> list[Corruption]:
    """Exhaustive type-valid corruption set of one positive (both sides)."""
    src, rel, dst = (int(x) for x in positive)
    known = known if known is not None else g.edge_set
    out = []
    for m in g.type_members[int(g.node_types[src])]:
        triple = (int(m), rel, dst)
        if triple not in known and triple != (src, rel, dst):
            out.append(Corruption((src, rel, dst), triple, "head"))
    for n_ in g.type_members[int(g.node_types[dst])]:
        triple = (src, rel, int(n_))
        if triple not in known and triple != (src, rel, dst):
            out.append(Corruption((src, rel, dst), triple, "tail"))
    return out
