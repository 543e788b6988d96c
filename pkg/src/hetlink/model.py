"""Relation-aware attentive message passing over heterogeneous graphs.

The network embeds per-type node attributes into a shared space, runs T
rounds of relation-typed propagation where each incoming edge's message is
encoded by a basis-decomposed relation matrix and weighed by multi-head
attention over the node's whole in-neighborhood, then fuses the attribute
embedding with the propagated embedding through a learned two-way softmax.
Triple scores are the logistic of a bilinear form with a diagonal relation
matrix, so every relation's embedding serves double duty: it enters the
attention score and is the scorer's diagonal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import HeteroGraph
from .seeding import subsystem_rng


class CheckpointError(ValueError):
    """Unreadable or mismatched checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    node_type_dims: tuple[int, ...]
    relation_count: int
    hidden_dim: int = 16
    layers: int = 2
    heads: int = 2
    bases: int = 2
    slope: float = 0.2
    attention: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1 or self.bases < 1:
            raise ValueError("layers, heads and bases must all be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.bases > self.relation_count:
            raise ValueError(
                f"basis count {self.bases} exceeds relation count "
                f"{self.relation_count}"
            )
        if not self.node_type_dims or any(d < 1 for d in self.node_type_dims):
            raise ValueError("every node type needs an input dimension >= 1")
        if not 0.0 < self.slope < 1.0:
            raise ValueError("slope must be in (0, 1)")

    @staticmethod
    def for_graph(g: HeteroGraph, **kwargs) -> "ModelConfig":
        dims = tuple(g.schema[k] for k in range(g.type_count))
        return ModelConfig(
            node_type_dims=dims, relation_count=g.relation_count, **kwargs
        )


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _glorot_vec(rng, length: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (length + 1))
    return rng.uniform(-limit, limit, size=length)


class ModelParameters:
    """All learnable arrays, with a stable naming scheme for optimizers.

    Relation matrices are never stored densely per relation; each layer
    holds B shared basis matrices plus a length-B coefficient vector per
    relation, and the effective matrix is their linear combination.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        d = config.hidden_dim
        rng = subsystem_rng(config.seed, "model")
        self.encoders = [_glorot(rng, dim, d) for dim in config.node_type_dims]
        self.encoder_bias = [np.zeros(d) for _ in config.node_type_dims]
        self.bases = [
            [_glorot(rng, d, d) for _ in range(config.bases)]
            for _ in range(config.layers)
        ]
        self.rel_coeffs = [
            [_glorot_vec(rng, config.bases) for _ in range(config.relation_count)]
            for _ in range(config.layers)
        ]
        self.w_self = [_glorot(rng, d, d) for _ in range(config.layers)]
        self.attention = [
            [_glorot_vec(rng, 3 * d) for _ in range(config.heads)]
            for _ in range(config.layers)
        ]
        self.rel_emb = np.stack(
            [_glorot_vec(rng, d) for _ in range(config.relation_count)]
        )
        self.fusion = _glorot_vec(rng, d)

    def named_arrays(self):
        """Stable (name, array) iteration over every parameter group."""
        for k, (u, b) in enumerate(zip(self.encoders, self.encoder_bias)):
            yield f"encoder.{k}.weight", u
            yield f"encoder.{k}.bias", b
        for t in range(self.config.layers):
            for b in range(self.config.bases):
                yield f"layer.{t}.basis.{b}", self.bases[t][b]
            for r in range(self.config.relation_count):
                yield f"layer.{t}.coeff.{r}", self.rel_coeffs[t][r]
            yield f"layer.{t}.self", self.w_self[t]
            for l in range(self.config.heads):
                yield f"layer.{t}.attn.{l}", self.attention[t][l]
        yield "relation_embedding", self.rel_emb
        yield "fusion_attention", self.fusion

    def set_array(self, name: str, value: np.ndarray) -> None:
        target = dict(self.named_arrays())[name]
        if target.shape != value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {target.shape}")
        target[...] = value

    def copy(self) -> "ModelParameters":
        dup = ModelParameters.__new__(ModelParameters)
        dup.config = self.config
        dup.encoders = [a.copy() for a in self.encoders]
        dup.encoder_bias = [a.copy() for a in self.encoder_bias]
        dup.bases = [[a.copy() for a in row] for row in self.bases]
        dup.rel_coeffs = [[a.copy() for a in row] for row in self.rel_coeffs]
        dup.w_self = [a.copy() for a in self.w_self]
        dup.attention = [[a.copy() for a in row] for row in self.attention]
        dup.rel_emb = self.rel_emb.copy()
        dup.fusion = self.fusion.copy()
        return dup

    def parameter_count(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def relation_parameter_count_per_layer(self) -> int:
        """Per-layer relation encoding size: B*d^2 + |R|*B, not |R|*d^2."""
        cfg = self.config
        return sum(a.size for a in self.bases[0]) + sum(
            a.size for a in self.rel_coeffs[0]
        )


class BoundParameters:
    """Tape-recorded tensor views of a parameter set, for one forward pass."""

    def __init__(self, params: ModelParameters, tape: Tape):
        self.config = params.config
        self.tape = tape
        self.tensors: dict[str, Tensor] = {
            name: tape.tensor(arr) for name, arr in params.named_arrays()
        }

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


class PropagationIndex:
    """Static edge bookkeeping for vectorized propagation.

    Incoming edges are enumerated in canonical order, sorted by
    (destination, relation, source); attention groups are contiguous
    runs sharing a destination.
    """

    def __init__(self, g: HeteroGraph):
        self.node_count = g.node_count
        edges = g.edges
        if len(edges):
            order = np.lexsort((edges[:, 0], edges[:, 1], edges[:, 2]))
            ordered = edges[order]
        else:
            ordered = edges.reshape(0, 3)
        self.src = ordered[:, 0]
        self.rel = ordered[:, 1]
        self.dst = ordered[:, 2]
        self.in_degrees = np.bincount(self.dst, minlength=g.node_count)
        self.group_nodes = np.flatnonzero(self.in_degrees > 0)
        counts = self.in_degrees[self.group_nodes]
        self.group_offsets = np.concatenate(([0], np.cumsum(counts)))
        self.slots_by_rel = [
            np.flatnonzero(self.rel == r) for r in range(max(g.relation_count, 1))
        ]
        # Uniform fallback weights (attention disabled): 1/|N(v)| per edge.
        self.uniform_weights = 1.0 / self.in_degrees[self.dst] if len(edges) else (
            np.empty(0)
        )

    @property
    def edge_count(self) -> int:
        return len(self.src)

    def node_slice(self, v: int) -> slice:
        """Canonical-order slice holding node v's incoming edges."""
        pos = np.searchsorted(self.group_nodes, v)
        if pos == len(self.group_nodes) or self.group_nodes[pos] != v:
            return slice(0, 0)
        return slice(self.group_offsets[pos], self.group_offsets[pos + 1])


@dataclass
class AttentionRecord:
    logits: Tensor | None
    weights: Tensor


class ForwardState:
    """Everything one forward pass produced, still attached to its tape."""

    def __init__(self, tape, bound, index, states, final, attention_records):
        self.tape = tape
        self.bound: BoundParameters = bound
        self.config = bound.config
        self.index = index
        self.states: list[Tensor] = states
        self.final: Tensor = final
        self.attention_records: dict[tuple[int, int], AttentionRecord] = (
            attention_records
        )

    @property
    def relation_embedding(self) -> Tensor:
        return self.bound["relation_embedding"]

    def named_parameter_tensors(self):
        return self.bound.tensors.items()

    def state_values(self, t: int) -> np.ndarray:
        return self.states[t].data

    def final_values(self) -> np.ndarray:
        return self.final.data


def _embed_attributes(g: HeteroGraph, bound: BoundParameters) -> Tensor:
    cfg = bound.config
    tape = bound.tape
    parts = []
    for k in range(len(cfg.node_type_dims)):
        members = g.type_members[k] if k < g.type_count else np.empty(0, dtype=int)
        if len(members) == 0:
            continue
        attrs = tape.constant(np.stack([g.attributes[i] for i in members]))
        h = ad.matmul(attrs, bound[f"encoder.{k}.weight"])
        h = ad.add_rowvec(h, bound[f"encoder.{k}.bias"])
        h = ad.leaky_relu(h, cfg.slope)
        parts.append(ad.scatter_rows(h, members, g.node_count))
    h0 = parts[0]
    for p in parts[1:]:
        h0 = ad.add(h0, p)
    return h0


def forward(
    g: HeteroGraph,
    params: ModelParameters,
    tape: Tape | None = None,
    index: PropagationIndex | None = None,
) -> ForwardState:
    """Run the full-graph forward pass and return all intermediate states."""
    cfg = params.config
    if g.relation_count > cfg.relation_count:
        raise ValueError(
            f"graph has {g.relation_count} relations, model supports "
            f"{cfg.relation_count}"
        )
    tape = tape if tape is not None else Tape()
    index = index if index is not None else PropagationIndex(g)
    bound = BoundParameters(params, tape)
    n = g.node_count
    E = index.edge_count

    h = _embed_attributes(g, bound)
    states = [h]
    attention_records: dict[tuple[int, int], AttentionRecord] = {}

    for t in range(cfg.layers):
        self_msg = ad.matmul(h, bound[f"layer.{t}.self"])
        rel_msgs = []
        for r in range(cfg.relation_count):
            w_r = ad.lincomb(
                bound[f"layer.{t}.coeff.{r}"],
                [bound[f"layer.{t}.basis.{b}"] for b in range(cfg.bases)],
            )
            transformed = ad.matmul(h, w_r)
            slots = index.slots_by_rel[r] if r < len(index.slots_by_rel) else []
            if len(slots) == 0:
                rel_msgs.append(None)
            else:
                rel_msgs.append(ad.gather(transformed, index.src[slots]))

        head_aggs = []
        for l in range(cfg.heads):
            if E == 0:
                break
            weights = _attention_weights_tensor(
                bound, index, t, l, self_msg, rel_msgs, attention_records
            )
            agg = None
            for r in range(cfg.relation_count):
                if rel_msgs[r] is None:
                    continue
                slots = index.slots_by_rel[r]
                contrib = ad.scatter_rows(
                    ad.scale_rows(rel_msgs[r], ad.gather(weights, slots)),
                    index.dst[slots],
                    n,
                )
                agg = contrib if agg is None else ad.add(agg, contrib)
            head_aggs.append(agg)

        if head_aggs:
            total = head_aggs[0]
            for extra in head_aggs[1:]:
                total = ad.add(total, extra)
            pre = ad.add(ad.scale(total, 1.0 / cfg.heads), self_msg)
        else:
            pre = self_msg
        h = ad.leaky_relu(pre, cfg.slope)
        states.append(h)

    final = _fuse(states[0], states[-1], bound)
    return ForwardState(tape, bound, index, states, final, attention_records)


def _attention_weights_tensor(
    bound, index, t, l, self_msg, rel_msgs, attention_records
) -> Tensor:
    cfg = bound.config
    d = cfg.hidden_dim
    E = index.edge_count
    if not cfg.attention:
        weights = bound.tape.constant(index.uniform_weights)
        attention_records[(t + 1, l)] = AttentionRecord(None, weights)
        return weights
    a = bound[f"layer.{t}.attn.{l}"]
    a_self = ad.narrow(a, 0, d)
    a_rel = ad.narrow(a, d, 2 * d)
    a_msg = ad.narrow(a, 2 * d, 3 * d)
    dst_term = ad.matmul(self_msg, a_self)
    rel_term = ad.matmul(bound["relation_embedding"], a_rel)
    logits = None
    for r in range(cfg.relation_count):
        if rel_msgs[r] is None:
            continue
        slots = index.slots_by_rel[r]
        term = ad.add(
            ad.matmul(rel_msgs[r], a_msg),
            ad.add(
                ad.gather(dst_term, index.dst[slots]),
                ad.gather(rel_term, np.full(len(slots), r)),
            ),
        )
        placed = ad.scatter_rows(term, slots, E)
        logits = placed if logits is None else ad.add(logits, placed)
    logits = ad.leaky_relu(logits, cfg.slope)
    weights = ad.masked_softmax(logits, index.group_offsets)
    attention_records[(t + 1, l)] = AttentionRecord(logits, weights)
    return weights


def _fuse(h0: Tensor, h_last: Tensor, bound: BoundParameters) -> Tensor:
    """Two-way softmax mix of the attribute and propagated embeddings.

    softmax over the pair (s0, sT) equals sigmoid(s0 - sT) for the first
    weight, which is how it is computed here (numerically stable).
    """
    cfg = bound.config
    a_s = bound["fusion_attention"]
    s0 = ad.leaky_relu(ad.matmul(h0, a_s), cfg.slope)
    s_last = ad.leaky_relu(ad.matmul(h_last, a_s), cfg.slope)
    alpha_attr = ad.sigmoid(ad.sub(s0, s_last))
    ones = bound.tape.constant(np.ones(h0.data.shape[0]))
    alpha_graph = ad.sub(ones, alpha_attr)
    return ad.add(
        ad.scale_rows(h0, alpha_attr), ad.scale_rows(h_last, alpha_graph)
    )


def score_triples_tensor(
    final: Tensor, rel_emb: Tensor, triples: np.ndarray
) -> Tensor:
    """Sigmoid of the diagonal bilinear form for each (src, rel, dst) row."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    hi = ad.gather(final, triples[:, 0])
    hr = ad.gather(rel_emb, triples[:, 1])
    hj = ad.gather(final, triples[:, 2])
    return ad.sigmoid(ad.row_sum(ad.elementwise_mul(ad.elementwise_mul(hi, hr), hj)))


def attribute_embed(g: HeteroGraph, params: ModelParameters) -> np.ndarray:
    """Initial embedding matrix: per-type linear encoding plus activation."""
    tape = Tape()
    return _embed_attributes(g, BoundParameters(params, tape)).data.copy()


def incoming_edges(index: PropagationIndex, v: int) -> np.ndarray:
    """(src, rel) pairs of v's incoming edges in canonical order."""
    sl = index.node_slice(v)
    return np.stack([index.src[sl], index.rel[sl]], axis=1)


def attention_logits(fwd: ForwardState, v: int, t: int, head: int) -> np.ndarray:
    """Pre-softmax attention scores for node v's incoming edges at layer t."""
    if not fwd.config.attention:
        raise ValueError("attention is disabled in this model configuration")
    record = fwd.attention_records[(t, head)]
    return record.logits.data[fwd.index.node_slice(v)].copy()


def attention_weights(fwd: ForwardState, v: int, t: int, head: int) -> np.ndarray:
    """Attention distribution over node v's incoming edges; empty if isolated."""
    record = fwd.attention_records[(t, head)]
    return record.weights.data[fwd.index.node_slice(v)].copy()


@dataclass
class EntropyRecord:
    layer: int
    node_ids: np.ndarray
    in_degrees: np.ndarray
    entropies: np.ndarray


def attention_entropy(fwd: ForwardState) -> list[EntropyRecord]:
    """Shannon entropy (natural log) of each node's attention distribution.

    One record per layer; per-node entropy is averaged over heads, which
    reduces to the plain per-head value in a single-head model.  Nodes
    with no incoming edges are omitted.
    """
    index = fwd.index
    records = []
    for t in range(1, fwd.config.layers + 1):
        if (t, 0) not in fwd.attention_records:
            records.append(
                EntropyRecord(t, np.empty(0, int), np.empty(0, int), np.empty(0))
            )
            continue
        per_head = []
        for l in range(fwd.config.heads):
            weights = fwd.attention_records[(t, l)].weights.data
            ent = np.zeros(len(index.group_nodes))
            for i in range(len(index.group_nodes)):
                w = weights[index.group_offsets[i] : index.group_offsets[i + 1]]
                ent[i] = -(w * np.log(w)).sum()
            per_head.append(ent)
        records.append(
            EntropyRecord(
                layer=t,
                node_ids=index.group_nodes.copy(),
                in_degrees=index.in_degrees[index.group_nodes].copy(),
                entropies=np.mean(per_head, axis=0),
            )
        )
    return records


class EmbeddingScorer:
    """Frozen triple scorer: fixed final embeddings, no gradients.

    Built from a parameter snapshot once per epoch; selection and ranking
    paths score against this object.
    """

    def __init__(self, final_embeddings: np.ndarray, rel_emb: np.ndarray):
        self.final_embeddings = np.asarray(final_embeddings, dtype=np.float64)
        self.rel_emb = np.asarray(rel_emb, dtype=np.float64)

    @staticmethod
    def from_parameters(g: HeteroGraph, params: ModelParameters,
                        index: PropagationIndex | None = None) -> "EmbeddingScorer":
        fwd = forward(g, params, index=index)
        return EmbeddingScorer(fwd.final_values().copy(), params.rel_emb.copy())

    def score_triples(self, triples: np.ndarray) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        z = (
            self.final_embeddings[triples[:, 0]]
            * self.rel_emb[triples[:, 1]]
            * self.final_embeddings[triples[:, 2]]
        ).sum(axis=1)
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        enz = np.exp(z[~pos])
        out[~pos] = enz / (1.0 + enz)
        return out

    def score_one(self, src: int, rel: int, dst: int) -> float:
        return float(self.score_triples(np.array([[src, rel, dst]]))[0])


CHECKPOINT_FORMAT = "hetlink-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParameters, extra: dict | None = None):
    """Write config, metadata and all parameter arrays as structured text."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "extra": extra or {},
        "arrays": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.named_arrays()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelParameters, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload.get('version')}"
        )
    raw = dict(payload["config"])
    raw["node_type_dims"] = tuple(raw["node_type_dims"])
    config = ModelConfig(**raw)
    params = ModelParameters(config)
    for name, _ in params.named_arrays():
        if name not in payload["arrays"]:
            raise CheckpointError(f"{path}: missing array {name}")
        entry = payload["arrays"][name]
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params.set_array(name, arr)
    return params, payload.get("extra", {})
