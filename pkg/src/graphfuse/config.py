"""Serializable run and model configuration.

Configs are plain JSON with a ``schema_version`` field.  Unknown keys are
rejected so that a typo never silently falls back to a default.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

SCHEMA_VERSION = 1

TARGETS = ("arousal", "valence", "liking")
STREAMS = ("egemaps", "mfcc", "boaw_e", "boaw_m", "deep_spectrum")
STRATEGIES = ("ave", "fc", "gnn_st", "gnn_od_edge", "baseline_ave", "single_feature",
              "ttf_only", "amef_only", "ttf_amef")


@dataclass
class ModelConfig:
    strategy: str = "ttf_amef"
    width: int = 32                 # K, unified vertex width
    edge_width: int | None = None   # D_e; None ties it to K
    key_width: int | None = None    # attention d_k; None ties it to K
    k_nn: int = 4
    lstm_hidden: tuple[int, ...] = (64, 32)
    head_hidden: tuple[int, ...] = (64, 32)
    dropout: float = 0.1
    bn_momentum: float = 0.1
    adjacency_rule: str = "complete"
    adjacency_mask: list[list[int]] | None = None
    attention_bypass: bool = False
    avvr_context_tokens: bool = False
    standardize_before_ccc: bool = False
    single_stream: str | None = None   # stream used by single_feature

    def __post_init__(self):
        self.lstm_hidden = tuple(self.lstm_hidden)
        self.head_hidden = tuple(self.head_hidden)
        self.validate()

    @property
    def resolved_edge_width(self) -> int:
        if self.strategy in ("gnn_od_edge", "gnn_st"):
            return 1
        return self.edge_width or self.width

    @property
    def resolved_key_width(self) -> int:
        return self.key_width or self.width

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.strategy == "single_feature" and self.single_stream not in STREAMS:
            raise ConfigError(f"single_feature needs single_stream in {STREAMS}")
        if self.width < 1 or (self.edge_width is not None and self.edge_width < 1):
            raise ConfigError("widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 1 <= self.k_nn <= len(STREAMS) - 1:
            raise ConfigError(f"k_nn must be in [1, {len(STREAMS) - 1}], got {self.k_nn}")
        if self.attention_bypass and self.resolved_edge_width != 1:
            raise ConfigError("attention_bypass uses scalar edges and needs edge_width=1")
        if self.adjacency_rule not in ("complete", "custom"):
            raise ConfigError(f"unknown adjacency_rule {self.adjacency_rule!r}")


@dataclass
class RunConfig:
    seed: int = 0
    manifest: str | None = None
    out_dir: str = "runs/default"
    cultures: tuple[str, ...] = ("DE", "HU")
    targets: tuple[str, ...] = TARGETS
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 0.005
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    lr_sweep: bool = False
    lr_sweep_stop: float = 0.01
    lr_sweep_step: float = 0.001
    model: ModelConfig = field(default_factory=ModelConfig)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.cultures = tuple(self.cultures)
        self.targets = tuple(self.targets)
        if isinstance(self.model, dict):
            self.model = model_config_from_dict(self.model)
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        bad = [t for t in self.targets if t not in TARGETS]
        if bad or not self.targets:
            raise ConfigError(f"targets must be a nonempty subset of {TARGETS}, got {self.targets}")
        if not self.cultures:
            raise ConfigError("cultures must be nonempty")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cultures"] = list(self.cultures)
        d["targets"] = list(self.targets)
        d["model"]["lstm_hidden"] = list(self.model.lstm_hidden)
        d["model"]["head_hidden"] = list(self.model.head_hidden)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def with_model(self, **changes) -> "RunConfig":
        return replace(self, model=replace(self.model, **changes))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _check_keys(cls, data: dict, where: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


def model_config_from_dict(data: dict) -> ModelConfig:
    if not isinstance(data, dict):
        raise ConfigError("model config must be a mapping")
    _check_keys(ModelConfig, data, "model")
    try:
        return ModelConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run config must be a mapping")
    _check_keys(RunConfig, data, "run")
    data = dict(data)
    data["model"] = model_config_from_dict(data.get("model", {}))
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(data)
