"""Flat key=value run configuration with strict schemas.

Config files hold one ``key = value`` pair per line; keys are dotted to
group them by subsystem (``sampler.mu``), ``#`` starts a comment.  Every
command validates against its schema (unknown keys are rejected), fills
in defaults, and writes the fully resolved config next to its outputs so
a run can be reproduced by feeding that file back in.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .graph import SyntheticSpec
from .model import ModelConfig
from .sampling import SamplerConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Unknown key, malformed value, or missing required setting."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "on", "yes", "1"):
        return True
    if t in ("false", "off", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _parse_float_triple(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated floats, got {text!r}") from None


_PARSERS: dict[str, Callable[[str], Any]] = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "int_list": _parse_int_list,
    "float_list": _parse_float_triple,
}


@dataclass(frozen=True)
class Key:
    name: str
    kind: str
    default: Any  # None means required
    help: str = ""


class Schema:
    def __init__(self, keys: Sequence[Key]):
        self.keys = {k.name: k for k in keys}
        self.order = [k.name for k in keys]

    def resolve(self, raw: dict[str, str]) -> dict[str, Any]:
        unknown = set(raw) - set(self.keys)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        out: dict[str, Any] = {}
        for name in self.order:
            key = self.keys[name]
            if name in raw:
                parser = _PARSERS[key.kind]
                try:
                    out[name] = parser(raw[name])
                except ConfigError:
                    raise
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{name}: {exc}") from None
            elif key.default is None:
                raise ConfigError(f"missing required config key {name}")
            else:
                out[name] = key.default
        return out

    def format_resolved(self, values: dict[str, Any]) -> str:
        lines = []
        for name in self.order:
            v = values[name]
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, (tuple, list)):
                text = ",".join(str(x) for x in v)
            else:
                text = str(v)
            lines.append(f"{name} = {text}")
        return "\n".join(lines) + "\n"


def parse_kv_file(path) -> dict[str, str]:
    raw: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, value = stripped.split("=", 1)
            key = key.strip()
            if key in raw:
                raise ConfigError(f"{path}: line {lineno}: duplicate key {key}")
            raw[key] = value.strip()
    return raw


def apply_overrides(raw: dict[str, str], overrides: dict[str, str]) -> dict[str, str]:
    merged = dict(raw)
    merged.update(overrides)
    return merged


GENERATE_SCHEMA = Schema([
    Key("nodes_per_type", "int_list", (100, 100)),
    Key("attr_dims_per_type", "int_list", (8, 8)),
    Key("relations", "int", 3),
    Key("edges_per_relation", "int_list", (334, 333, 333)),
    Key("communities", "int", 8),
    Key("noise_fraction", "float", 0.1),
    Key("seed", "int", 0),
])


def synthetic_spec_from(values: dict[str, Any]) -> SyntheticSpec:
    edges = values["edges_per_relation"]
    if len(edges) == 1:
        edges = edges * values["relations"]
    try:
        return SyntheticSpec(
            nodes_per_type=tuple(values["nodes_per_type"]),
            attr_dims_per_type=tuple(values["attr_dims_per_type"]),
            relation_count=values["relations"],
            edges_per_relation=tuple(edges),
            community_count=values["communities"],
            noise_fraction=values["noise_fraction"],
            seed=values["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


RUN_SCHEMA = Schema([
    Key("data.nodes", "str", None, "nodes.tsv path"),
    Key("data.edges", "str", None, "edges.tsv path"),
    Key("data.heldout", "str", "", "optional withheld-positives tsv"),
    Key("split.ratios", "float_list", (0.8, 0.1, 0.1)),
    Key("seed", "int", 0),
    Key("model.hidden_dim", "int", 16),
    Key("model.layers", "int", 2),
    Key("model.heads", "int", 2),
    Key("model.bases", "int", 2),
    Key("model.slope", "float", 0.2),
    Key("model.attention", "bool", True),
    Key("train.epochs", "int", 60),
    Key("train.learning_rate", "float", 1e-3),
    Key("train.optimizer", "str", "adam"),
    Key("train.adam_beta1", "float", 0.9),
    Key("train.adam_beta2", "float", 0.999),
    Key("train.adam_eps", "float", 1e-8),
    Key("train.batch_size", "int", 256),
    Key("train.weight_decay", "float", 0.0),
    Key("train.patience", "int", 10),
    Key("sampler.strategy", "str", "random"),
    Key("sampler.pool_size", "int", 10),
    Key("sampler.mu", "float", 0.1),
    Key("sampler.schedule", "str", "constant"),
    Key("sampler.rate", "float", 0.0),
    Key("sampler.negatives", "int", 1),
    Key("sampler.seed", "int", -1, "derived from top-level seed when -1"),
    Key("eval.ks", "int_list", (1, 10, 30)),
])


def sampler_config_from(values: dict[str, Any]) -> SamplerConfig:
    seed = values["sampler.seed"]
    if seed < 0:
        seed = values["seed"]
    try:
        return SamplerConfig(
            strategy=values["sampler.strategy"],
            pool_size=values["sampler.pool_size"],
            mu=values["sampler.mu"],
            schedule=values["sampler.schedule"],
            rate=values["sampler.rate"],
            negatives_per_positive=values["sampler.negatives"],
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_config_from(values: dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=values["train.epochs"],
            learning_rate=values["train.learning_rate"],
            optimizer=values["train.optimizer"],
            adam_beta1=values["train.adam_beta1"],
            adam_beta2=values["train.adam_beta2"],
            adam_eps=values["train.adam_eps"],
            batch_size=values["train.batch_size"],
            weight_decay=values["train.weight_decay"],
            patience=values["train.patience"],
            seed=values["seed"],
            sampler=sampler_config_from(values),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def model_config_from(values: dict[str, Any], node_type_dims, relation_count) -> ModelConfig:
    try:
        return ModelConfig(
            node_type_dims=tuple(node_type_dims),
            relation_count=relation_count,
            hidden_dim=values["model.hidden_dim"],
            layers=values["model.layers"],
            heads=values["model.heads"],
            bases=values["model.bases"],
            slope=values["model.slope"],
            attention=values["model.attention"],
            seed=values["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path, overrides: dict[str, str] | None = None) -> dict[str, Any]:
    raw = parse_kv_file(path) if path else {}
    if overrides:
        raw = apply_overrides(raw, overrides)
    return RUN_SCHEMA.resolve(raw)


def write_resolved(schema: Schema, values: dict[str, Any], path) -> None:
    Path(path).write_text(schema.format_resolved(values), encoding="utf-8")
