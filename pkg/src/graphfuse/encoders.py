"""Recurrent encoders: per-stream LSTM stacks and the bidirectional GRU backbone.

Stream encoders run along time and are causal.  The backbone runs along the
node axis of one frame (eGeMAPS, MFCC, BoAW-e, BoAW-m, DeepSpectrum order),
forward and backward, with the two hidden sequences summed and projected.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .errors import DataError, DimensionError, UsageError
from .numcore import ParamStore, Tensor

NODE_ORDER = ("egemaps", "mfcc", "boaw_e", "boaw_m", "deep_spectrum")


@dataclass
class LstmLayer:
    W_x: Tensor  # (in, 4h), gate blocks ordered i, f, g, o
    W_h: Tensor  # (h, 4h)
    b: Tensor    # (4h,)

    @property
    def hidden(self) -> int:
        return self.W_h.shape[0]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, in_width: int, hidden: int,
               rng: np.random.Generator) -> "LstmLayer":
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        return cls(store.add(f"{prefix}.W_x", nc.glorot(rng, in_width, 4 * hidden)),
                   store.add(f"{prefix}.W_h", nc.glorot(rng, hidden, 4 * hidden)),
                   store.add(f"{prefix}.b", b))


@dataclass
class LstmStack:
    layers: list[LstmLayer]
    proj_W: Tensor
    proj_b: Tensor

    @property
    def input_width(self) -> int:
        return self.layers[0].W_x.shape[0]

    @property
    def out_width(self) -> int:
        return self.proj_W.shape[1]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, in_width: int, out_width: int,
               rng: np.random.Generator, hidden: Sequence[int] = (64, 32)) -> "LstmStack":
        if in_width <= 0 or out_width <= 0 or min(hidden) <= 0:
            raise DimensionError("LSTM widths must be positive")
        layers, width = [], in_width
        for n, h in enumerate(hidden):
            layers.append(LstmLayer.create(store, f"{prefix}.lstm{n}", width, h, rng))
            width = h
        return cls(layers,
                   store.add(f"{prefix}.proj_W", nc.glorot(rng, width, out_width)),
                   store.add(f"{prefix}.proj_b", np.zeros(out_width)))


def lstm_layer(x: Tensor, layer: LstmLayer) -> Tensor:
    """Run one LSTM layer over (batch, frames, width) from zero state."""
    return nc.lstm_scan(nc.matmul(x, layer.W_x) + layer.b, layer.W_h)


def lstm_layer_stepwise(x: Tensor, layer: LstmLayer) -> Tensor:
    """Same recurrence composed from elementary ops; reference for lstm_scan."""
    B, N, _ = x.shape
    H = layer.hidden
    xw = nc.matmul(x, layer.W_x) + layer.b
    h = Tensor(np.zeros((B, H)), _check=False)
    c = h
    outs = []
    for t in range(N):
        gates = xw[:, t] + nc.matmul(h, layer.W_h)
        i = nc.sigmoid(gates[:, :H])
        f = nc.sigmoid(gates[:, H:2 * H])
        g = nc.tanh(gates[:, 2 * H:3 * H])
        o = nc.sigmoid(gates[:, 3 * H:])
        c = f * c + i * g
        h = o * nc.tanh(c)
        outs.append(h)
    return nc.stack(outs, axis=1)


def run_lstm_stack(x: Tensor, stack: LstmStack, project: bool = True) -> Tensor:
    for layer in stack.layers:
        x = lstm_layer(x, layer)
    return nc.fully_connected(x, stack.proj_W, stack.proj_b) if project else x


def encode_stream(stream, stack: LstmStack) -> Tensor:
    """Map per-frame vectors of any width to width K.

    Accepts (frames, width) or (batch, frames, width); output keeps the
    leading layout with the last axis replaced by K.
    """
    x = nc.as_tensor(stream)
    squeeze = x.ndim == 2
    if squeeze:
        x = nc.expand_dims(x, 0)
    if x.ndim != 3 or x.shape[1] == 0:
        raise UsageError(f"encode_stream needs at least one frame, got shape {x.shape}")
    if x.shape[-1] != stack.input_width:
        raise DimensionError(f"stream width {x.shape[-1]} != encoder input width {stack.input_width}")
    out = run_lstm_stack(x, stack)
    return out[0] if squeeze else out


def build_vertex_set(streams: Mapping[str, object], stacks: Mapping[str, LstmStack],
                     order: Sequence[str] = NODE_ORDER) -> Tensor:
    """Encode each named stream and stack them as nodes: (..., frames, A, K)."""
    missing = [name for name in order if name not in streams]
    if missing:
        raise DataError(f"bundle is missing streams {missing}")
    frames = {name: nc.as_tensor(streams[name]).shape[-2] for name in order}
    if len(set(frames.values())) != 1:
        raise DataError(f"frame counts differ across streams: {frames}")
    encoded = [encode_stream(streams[name], stacks[name]) for name in order]
    return nc.stack(encoded, axis=-2)


@dataclass
class GruCell:
    W_x: Tensor  # (in, 3h), blocks ordered reset, update, candidate
    W_h: Tensor  # (h, 3h)
    b: Tensor    # (3h,)

    @property
    def hidden(self) -> int:
        return self.W_h.shape[0]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, in_width: int, hidden: int,
               rng: np.random.Generator) -> "GruCell":
        return cls(store.add(f"{prefix}.W_x", nc.glorot(rng, in_width, 3 * hidden)),
                   store.add(f"{prefix}.W_h", nc.glorot(rng, hidden, 3 * hidden)),
                   store.add(f"{prefix}.b", np.zeros(3 * hidden)))


def gru_step(x: Tensor, h: Tensor, cell: GruCell) -> Tensor:
    H = cell.hidden
    xw = nc.matmul(x, cell.W_x) + cell.b
    hw = nc.matmul(h, cell.W_h[:, :2 * H])
    r = nc.sigmoid(xw[..., :H] + hw[..., :H])
    z = nc.sigmoid(xw[..., H:2 * H] + hw[..., H:])
    n = nc.tanh(xw[..., 2 * H:] + nc.matmul(r * h, cell.W_h[:, 2 * H:]))
    return (1.0 - z) * n + z * h


def run_gru(tokens: Tensor, cell: GruCell, reverse: bool = False) -> list[Tensor]:
    """Hidden states per token position (original order) for (..., T, width) input."""
    T = tokens.shape[-2]
    h = Tensor(np.zeros(tokens.shape[:-2] + (cell.hidden,)), _check=False)
    states: list[Tensor | None] = [None] * T
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        h = gru_step(tokens[..., t, :], h, cell)
        states[t] = h
    return states  # type: ignore[return-value]


@dataclass
class BiGruBackbone:
    forward: GruCell
    backward: GruCell
    merge_W: Tensor
    merge_b: Tensor

    @classmethod
    def create(cls, store: ParamStore, prefix: str, width: int,
               rng: np.random.Generator) -> "BiGruBackbone":
        return cls(GruCell.create(store, f"{prefix}.fwd", width, width, rng),
                   GruCell.create(store, f"{prefix}.bwd", width, width, rng),
                   store.add(f"{prefix}.merge_W", nc.glorot(rng, width, width)),
                   store.add(f"{prefix}.merge_b", np.zeros(width)))


def global_context(vertices: Tensor, backbone: BiGruBackbone) -> Tensor:
    """Context matrix with the same (..., A, K) shape as the vertex set."""
    vertices = nc.as_tensor(vertices)
    fwd = run_gru(vertices, backbone.forward)
    bwd = run_gru(vertices, backbone.backward, reverse=True)
    summed = nc.stack([f + b for f, b in zip(fwd, bwd)], axis=-2)
    return nc.fully_connected(summed, backbone.merge_W, backbone.merge_b)
