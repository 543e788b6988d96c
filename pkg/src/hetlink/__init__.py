"""Relationship prediction on attributed heterogeneous graphs."""

from .graph import (
    HeteroGraph,
    SyntheticSpec,
    generate_synthetic,
    in_neighbors,
    load_graph,
    save_graph,
    split_edges,
)
from .model import (
    EmbeddingScorer,
    ModelConfig,
    ModelParameters,
    attention_entropy,
    attribute_embed,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .sampling import (
    Corruption,
    SamplerConfig,
    corrupt_random,
    draw_pool,
    false_negative_rate,
    mu_at,
    select_asa,
    select_self_adversarial,
)
from .training import TrainConfig, TrainResult, bce_pair_loss, fit, train_epoch
from .metrics import (
    LabeledScores,
    MetricsReport,
    average_precision,
    f1_at,
    filtered_ranking,
    hit_at_k,
    mrr,
    roc_auc,
)

__version__ = "0.1.0"
