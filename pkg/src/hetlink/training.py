"""Optimization of the network under sampled noise-contrastive pairs.

Each step runs a full-graph forward pass (the batch only partitions the
positive edges for the loss), scores the batch's positives and their
sampler-selected negatives, and takes an optimizer step on the binary
cross-entropy pair loss.  The negative sampler scores candidates against a
parameter snapshot refreshed once per epoch, never against the live
parameters, and selection is not differentiated through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .graph import HeteroGraph
from .metrics import LabeledScores, roc_auc
from .model import (
    EmbeddingScorer,
    ModelParameters,
    PropagationIndex,
    forward,
    score_triples_tensor,
)
from .sampling import (
    Corruption,
    SamplerConfig,
    corrupt_random,
    false_negative_rate,
    mu_at,
    positive_rng,
    select_negative,
)
from .seeding import subsystem_rng

SCORE_EPS = 1e-12


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN/Inf loss; carries the offending batch."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    weight_decay: float = 0.0
    patience: int = 10
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def bce_pair_loss(s_pos: ad.Tensor, s_neg: ad.Tensor) -> ad.Tensor:
    """-log(s_pos) - sum log(1 - s_neg), averaged over the positives.

    Scores are clamped to [eps, 1-eps] so a saturated sigmoid cannot
    produce an infinite loss.
    """
    n_pos = s_pos.data.shape[0]
    pos_term = ad.log(ad.clamp(s_pos, SCORE_EPS, 1.0 - SCORE_EPS))
    ones = s_neg.tape.constant(np.ones_like(s_neg.data))
    neg_term = ad.log(ad.clamp(ad.sub(ones, s_neg), SCORE_EPS, 1.0 - SCORE_EPS))
    return ad.scale(ad.add(ad.tsum(pos_term), ad.tsum(neg_term)), -1.0 / n_pos)


class Optimizer:
    """SGD / Adam over the named parameter arrays, with plain L2 decay."""

    def __init__(self, params: ModelParameters, cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        if cfg.optimizer == "adam":
            self.m = {name: np.zeros_like(a) for name, a in params.named_arrays()}
            self.v = {name: np.zeros_like(a) for name, a in params.named_arrays()}

    def step(self, params: ModelParameters, grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.step_count += 1
        for name, array in params.named_arrays():
            g = grads[name]
            if cfg.weight_decay:
                g = g + cfg.weight_decay * array
            if cfg.optimizer == "sgd":
                array -= cfg.learning_rate * g
            else:
                m = self.m[name]
                v = self.v[name]
                m *= cfg.adam_beta1
                m += (1 - cfg.adam_beta1) * g
                v *= cfg.adam_beta2
                v += (1 - cfg.adam_beta2) * g * g
                m_hat = m / (1 - cfg.adam_beta1 ** self.step_count)
                v_hat = v / (1 - cfg.adam_beta2 ** self.step_count)
                array -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass
class TrainState:
    params: ModelParameters
    optimizer: Optimizer
    config: TrainConfig
    epoch: int = 0
    snapshot: EmbeddingScorer | None = None  # refreshed once per epoch
    best_val_auc: float = -np.inf
    best_params: ModelParameters | None = None
    best_epoch: int = -1

    @staticmethod
    def create(params: ModelParameters, cfg: TrainConfig) -> "TrainState":
        return TrainState(params=params, optimizer=Optimizer(params, cfg), config=cfg)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    mean_neg_score: float
    mean_pos_score: float
    mu: float
    selected: list[Corruption]


def _select_batch_negatives(
    state: TrainState,
    g: HeteroGraph,
    batch: np.ndarray,
    step: int,
    mu: float,
) -> list[Corruption]:
    cfg = state.config
    scorer = state.snapshot.score_triples if state.snapshot else None
    pos_scores = (
        state.snapshot.score_triples(batch) if state.snapshot is not None else None
    )
    selected: list[Corruption] = []
    for i, positive in enumerate(batch.tolist()):
        rng = positive_rng(cfg.sampler.seed, state.epoch, step, i)
        s_pos = float(pos_scores[i]) if pos_scores is not None else None
        for _ in range(cfg.sampler.negatives_per_positive):
            selected.append(
                select_negative(
                    tuple(positive), g, cfg.sampler, rng, scorer, mu, s_pos
                )
            )
    return selected


def train_epoch(
    state: TrainState,
    g: HeteroGraph,
    train_edges: np.ndarray,
    index: PropagationIndex | None = None,
) -> EpochStats:
    """One pass over the shuffled positives; mutates parameters in place."""
    cfg = state.config
    train_edges = np.asarray(train_edges, dtype=np.int64).reshape(-1, 3)
    if len(train_edges) == 0:
        raise ValueError("empty training edge set")
    index = index if index is not None else PropagationIndex(g)
    if state.snapshot is None:
        state.snapshot = EmbeddingScorer.from_parameters(g, state.params, index)

    shuffle_rng = subsystem_rng(cfg.seed, "train", state.epoch)
    order = shuffle_rng.permutation(len(train_edges))
    mu = mu_at(state.epoch, cfg.sampler)

    losses: list[float] = []
    all_selected: list[Corruption] = []
    pos_scores_log: list[float] = []
    neg_scores_log: list[float] = []
    for step, lo in enumerate(range(0, len(order), cfg.batch_size)):
        batch = train_edges[order[lo : lo + cfg.batch_size]]
        selected = _select_batch_negatives(state, g, batch, step, mu)
        neg_triples = np.array([c.corrupted for c in selected], dtype=np.int64)
        all_selected.extend(selected)
        neg_scores_log.extend(
            state.snapshot.score_triples(neg_triples).tolist()
        )

        tape = Tape()
        fwd = forward(g, state.params, tape=tape, index=index)
        s_pos = score_triples_tensor(fwd.final, fwd.relation_embedding, batch)
        s_neg = score_triples_tensor(fwd.final, fwd.relation_embedding, neg_triples)
        loss = bce_pair_loss(s_pos, s_neg)
        if not np.isfinite(loss.data):
            raise NonFiniteLossError(
                "non-finite loss; batch triples="
                f"{batch.tolist()} pos_scores={s_pos.data.tolist()} "
                f"neg_triples={neg_triples.tolist()} "
                f"neg_scores={s_neg.data.tolist()}"
            )
        pos_scores_log.extend(s_pos.data.tolist())
        losses.append(float(loss.data))

        grads = tape.backward(loss)
        named_grads = {
            name: grads.wrt(t) for name, t in fwd.named_parameter_tensors()
        }
        state.optimizer.step(state.params, named_grads)

    return EpochStats(
        epoch=state.epoch,
        loss=float(np.mean(losses)),
        mean_neg_score=float(np.mean(neg_scores_log)),
        mean_pos_score=float(np.mean(pos_scores_log)),
        mu=mu,
        selected=all_selected,
    )


@dataclass
class TrainResult:
    params: ModelParameters  # best-validation parameters
    best_epoch: int
    best_val_auc: float
    log: list[dict]  # one row per epoch actually run


def fit(
    g: HeteroGraph,
    splits: tuple[np.ndarray, np.ndarray, np.ndarray],
    model_params: ModelParameters,
    cfg: TrainConfig,
    held_out_edges: np.ndarray | None = None,
) -> TrainResult:
    """Train with per-epoch validation AUC early stopping.

    ``g`` is the propagation graph and must contain the train edges; the
    valid/test splits are score-only.  The sampler's frozen scorer is
    refreshed at the start of every epoch.  When ``held_out_edges`` is
    given, each log row also reports the fraction of that epoch's selected
    negatives that were actually withheld positives.
    """
    train_edges, valid_edges, test_edges = (
        np.asarray(s, dtype=np.int64).reshape(-1, 3) for s in splits
    )
    index = PropagationIndex(g)
    state = TrainState.create(model_params, cfg)

    known = {tuple(e) for e in np.concatenate(
        [train_edges, valid_edges, test_edges]
    ).tolist()}
    val_negatives = _validation_negatives(g, valid_edges, known, cfg.seed)

    log: list[dict] = []
    epochs_since_best = 0
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        state.snapshot = EmbeddingScorer.from_parameters(g, state.params, index)
        stats = train_epoch(state, g, train_edges, index)

        scorer = EmbeddingScorer.from_parameters(g, state.params, index)
        val_auc = _validation_auc(scorer, valid_edges, val_negatives)
        fn_rate = (
            false_negative_rate(stats.selected, held_out_edges)
            if held_out_edges is not None and len(held_out_edges)
            else None
        )
        log.append(
            {
                "epoch": epoch,
                "loss": stats.loss,
                "val_auc": val_auc,
                "mu": stats.mu,
                "mean_neg_score": stats.mean_neg_score,
                "fn_rate": fn_rate,
            }
        )

        if val_auc > state.best_val_auc:
            state.best_val_auc = val_auc
            state.best_params = state.params.copy()
            state.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break

    best = state.best_params if state.best_params is not None else state.params
    return TrainResult(
        params=best,
        best_epoch=state.best_epoch,
        best_val_auc=state.best_val_auc,
        log=log,
    )


def _validation_negatives(
    g: HeteroGraph, valid_edges: np.ndarray, known: set, seed: int
) -> np.ndarray:
    """One fixed random corruption per validation positive, drawn once.

    Corruptions are re-checked against the full train/valid/test union so
    a known positive never enters the validation negatives.
    """
    rng = subsystem_rng(seed, "eval")
    frozen = frozenset(known)
    out = []
    for positive in valid_edges.tolist():
        triple = corrupt_random(tuple(positive), g, rng).corrupted
        attempts = 0
        while triple in frozen and attempts < 100:
            triple = corrupt_random(tuple(positive), g, rng).corrupted
            attempts += 1
        out.append(triple)
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def _validation_auc(
    scorer: EmbeddingScorer, valid_edges: np.ndarray, val_negatives: np.ndarray
) -> float:
    scores = np.concatenate(
        [scorer.score_triples(valid_edges), scorer.score_triples(val_negatives)]
    )
    labels = np.concatenate(
        [np.ones(len(valid_edges), dtype=int), np.zeros(len(val_negatives), dtype=int)]
    )
    return roc_auc(LabeledScores.of(scores, labels))
