"""Deterministic checkpoint files.

A checkpoint is sorted-key JSON; arrays are stored as base64 of their
little-endian float64 bytes, so equal weights give byte-identical files.
"""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import SCHEMA_VERSION, RunConfig, run_config_from_dict
from .errors import ConfigError
from .model import EnsembleModel, FusionModel

FORMAT = "graphfuse-checkpoint"


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: Mapping) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def state_checksum(state: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(np.ascontiguousarray(state[name], dtype="<f8").tobytes())
    return h.hexdigest()


def model_checksum(model) -> str:
    if isinstance(model, EnsembleModel):
        return hashlib.sha256("".join(model_checksum(m) for m in model.models).encode()).hexdigest()
    return state_checksum(model.state())


def _member(model: FusionModel) -> dict:
    state = model.state()
    return {"strategy": model.config.strategy, "single_stream": model.config.single_stream,
            "seed": model.seed, "checksum": state_checksum(state),
            "state": {k: encode_array(v) for k, v in sorted(state.items())}}


def save_checkpoint(path, model, cfg: RunConfig, extra: Mapping | None = None) -> str:
    """Write ``model`` with its run config; returns the model checksum."""
    members = model.models if isinstance(model, EnsembleModel) else [model]
    doc = {"format": FORMAT, "schema_version": SCHEMA_VERSION, "config": cfg.to_dict(),
           "stream_widths": members[0].stream_widths, "targets": list(members[0].targets),
           "members": [_member(m) for m in members], "checksum": model_checksum(model),
           "extra": dict(extra or {})}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return doc["checksum"]


def load_checkpoint(path) -> tuple[FusionModel | EnsembleModel, RunConfig]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT or doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: not a schema-{SCHEMA_VERSION} checkpoint")
    cfg = run_config_from_dict(doc["config"])
    models = []
    for m in doc["members"]:
        state = {k: decode_array(v) for k, v in m["state"].items()}
        if state_checksum(state) != m["checksum"]:
            raise ConfigError(f"{path}: checksum mismatch, file is corrupted")
        mcfg = cfg.model
        if m["strategy"] != mcfg.strategy:
            mcfg = replace(mcfg, strategy=m["strategy"], single_stream=m["single_stream"])
        model = FusionModel(mcfg, doc["stream_widths"], doc["targets"], m["seed"])
        model.load_state(state)
        models.append(model)
    model = models[0] if cfg.model.strategy != "baseline_ave" else EnsembleModel(models)
    if model_checksum(model) != doc.get("checksum"):
        raise ConfigError(f"{path}: checksum mismatch, file is corrupted")
    return model, cfg
