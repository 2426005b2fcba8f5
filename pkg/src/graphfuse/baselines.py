"""Ablation fusion strategies sharing the encoder/regressor of the main model.

The graph strategies without multi-dimensional edges (GNN+ST, GNN+OD-edge)
use a scalar-edge convolution written directly in terms of the topology, so
that it can be checked against the full model run with scalar edges.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from . import numcore as nc
from .amef import EdgeGcn
from .config import STREAMS, ModelConfig
from .errors import ConfigError
from .head_loss import fuse_readout
from .numcore import Tensor

VARIANTS = ("ttf_only", "amef_only", "ttf_amef")


def fuse_ave(vertices) -> Tensor:
    """Plain mean of the node rows (pairwise means of five rows average to the same)."""
    return nc.mean(nc.as_tensor(vertices), axis=-2)


def fuse_fc(vertices, W: Tensor, b: Tensor | None = None) -> Tensor:
    return fuse_readout(vertices, W, b)


def scalar_edge_gcn(refined, adj, gcn: EdgeGcn, training: bool = False,
                    normalize: bool = True) -> Tensor:
    """Node update when every edge is the scalar topology weight itself.

    Each message is a_ij * (a_ij * w_e) * (mu_j W_v), i.e. the squared weight
    scales a gated neighbour projection.
    """
    refined = nc.as_tensor(refined)
    adj = nc.as_tensor(adj)
    A = refined.shape[-2]
    if gcn.W_e.shape[0] != 1:
        raise ConfigError("scalar-edge convolution needs a 1-row edge projection")
    weights = adj * adj
    agg = nc.matmul(weights, nc.matmul(refined, gcn.W_v)) * gcn.W_e[0] * (1.0 / A)
    nodes = nc.relu(refined + agg)
    if normalize:
        nodes = nc.batch_norm(nodes, 1, gcn.node_bn, gcn.node_gamma, gcn.node_beta, training)
    return nodes


def fuse_gnn_st(refined, adj, gcn: EdgeGcn, training: bool = False,
                normalize: bool = True) -> Tensor:
    """Scalar-edge convolution, then all node rows concatenated (width A*K)."""
    nodes = scalar_edge_gcn(refined, adj, gcn, training, normalize)
    return nc.reshape(nodes, nodes.shape[:-2] + (nodes.shape[-2] * nodes.shape[-1],))


def fuse_gnn_od_edge(refined, adj, gcn: EdgeGcn, W: Tensor, b: Tensor | None = None,
                     training: bool = False, normalize: bool = True) -> Tensor:
    """Scalar-edge convolution followed by the usual fusion readout to K."""
    return fuse_readout(scalar_edge_gcn(refined, adj, gcn, training, normalize), W, b)


def baseline_ave(predictions: Sequence) -> np.ndarray:
    """Average per-frame predictions of independently trained single-stream models."""
    if not predictions:
        raise ConfigError("baseline_ave needs at least one model's predictions")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in predictions])
    # averaging offsets from the first member keeps identical members exact
    return stacked[0] + np.mean(stacked - stacked[0], axis=0)


def variant(kind: str, base: ModelConfig | None = None) -> ModelConfig:
    """Model config for one of the TTF / AMEF / TTF+AMEF ablation columns."""
    if kind not in VARIANTS:
        raise ConfigError(f"unknown variant {kind!r}; choose from {VARIANTS}")
    return replace(base or ModelConfig(), strategy=kind)


def single_feature(stream: str, base: ModelConfig | None = None) -> ModelConfig:
    if stream not in STREAMS:
        raise ConfigError(f"unknown stream {stream!r}")
    return replace(base or ModelConfig(), strategy="single_feature", single_stream=stream)
