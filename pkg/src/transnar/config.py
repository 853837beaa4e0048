"""Experiment configuration: nested dataclasses loaded from YAML.

Published-scale values are kept in ``resources/published.yaml``; desk-scale defaults
are the dataclass defaults below (also shipped as ``resources/desk.yaml``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .data import DatasetConfig

SCHEMA_VERSION = 1
VARIANTS = ("baseline", "transnar")
LM_INITS = ("pretrained", "untrained")
POSITIONAL = ("rope", "randomized-rope")
EVAL_POSITIONS = ("randomized", "canonical")


class ConfigError(ValueError):
    pass


@dataclass
class NarSection:
    hidden: int = 128
    sizes: list[int] = field(default_factory=lambda: list(range(4, 17)))
    samples_per_size: int = 1000
    eval_sizes: list[int] = field(default_factory=lambda: [32, 64])
    eval_samples_per_size: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    steps: int = 4000
    log_every: int = 100
    checkpoint_every: int = 0


@dataclass
class LmSection:
    width: int = 128
    layers: int = 6
    heads: int = 4
    ffn_mult: int = 4
    context: int = 512
    max_position: int = 8192
    tie_embeddings: bool = False
    adapter: bool = False


@dataclass
class TrainSection:
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 7
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    max_steps: int = 0
    grad_clip: float = 1.0
    pretrain_steps: int = 500
    log_every: int = 50


@dataclass
class EvalSection:
    batch_size: int = 64
    budget_slack: int = 8
    splits: list[str] = field(default_factory=lambda: ["eval"])


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "desk"
    variant: str = "transnar"
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    lm_init: str = "untrained"
    positional: str = "randomized-rope"
    eval_positions: str = "randomized"
    deterministic: bool = True
    data_root: str = ""
    data: DatasetConfig = field(default_factory=DatasetConfig)
    nar: NarSection = field(default_factory=NarSection)
    lm: LmSection = field(default_factory=LmSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def dump(self, path: Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {self.schema_version}")
        checks = [
            ("variant", self.variant, VARIANTS),
            ("lm_init", self.lm_init, LM_INITS),
            ("positional", self.positional, POSITIONAL),
            ("eval_positions", self.eval_positions, EVAL_POSITIONS),
            ("train.optimizer", self.train.optimizer, ("adam",)),
        ]
        for key, value, allowed in checks:
            if value not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {value!r}")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"variants entries must be in {VARIANTS}, got {v!r}")
        if self.lm.width % self.lm.heads:
            raise ConfigError("lm.width must be divisible by lm.heads")
        return self


def _build(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {path + key!r}")
        sub = _SECTIONS.get(key) if cls is ExperimentConfig else None
        if sub:
            kwargs[key] = _build(sub, value, f"{path}{key}.")
        else:
            kwargs[key] = _check_type(fields[key].type, value, path + key)
    return cls(**kwargs)


_SCALARS = {"int": int, "float": (int, float), "str": str, "bool": bool}


def _check_type(annotation: str, value, key: str):
    """Reject values whose YAML type does not match the field annotation."""
    if annotation.startswith("list["):
        inner = _SCALARS[annotation[5:-1]]
        ok = isinstance(value, list) and all(isinstance(v, inner) and not (inner is int and isinstance(v, bool))
                                             for v in value)
    else:
        want = _SCALARS[annotation]
        ok = isinstance(value, want) and (want is bool or not isinstance(value, bool))
    if not ok:
        raise ConfigError(f"{key} must be {annotation}, got {value!r}")
    return float(value) if annotation == "float" else value


_SECTIONS = {"data": DatasetConfig, "nar": NarSection, "lm": LmSection, "train": TrainSection, "eval": EvalSection}


def _coerce(text: str):
    return yaml.safe_load(text)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides (values parsed as YAML scalars/lists)."""
    raw = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = _coerce(value)
    return raw


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text() if Path(path).is_file() else builtin_config_text(str(path))
        raw = yaml.safe_load(text) or {}
    raw = apply_overrides(raw, list(overrides))
    return _build(ExperimentConfig, raw).validate()


def builtin_config_text(name: str) -> str:
    """Text of a shipped config (``desk``, ``published``, ``smoke``, ``acceptance``)."""
    fname = name if name.endswith(".yaml") else f"{name}.yaml"
    try:
        return resources.files("transnar.resources").joinpath(fname).read_text()
    except FileNotFoundError:
        raise ConfigError(f"no config file or built-in config named {name!r}") from None
