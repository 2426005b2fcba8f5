"""End-to-end fusion model: encoders, graph fusion strategy, per-target heads.

Every strategy builds the same parameter set in the same order from the seed,
so models that differ only in strategy start from identical weights.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .amef import EdgeEncoder, EdgeGcn, edge_features, edge_gcn, unify
from .baselines import fuse_ave, scalar_edge_gcn
from .config import STREAMS, TARGETS, ModelConfig
from .encoders import BiGruBackbone, LstmStack, build_vertex_set, encode_stream, global_context
from .errors import ConfigError, DataError
from .graph_ttf import (TtfLayer, base_adjacency, knn_topology, normalized_base_adjacency,
                        task_adjacency, ttf_refine)
from .head_loss import ReadoutHead, fuse_readout, predict_sequence
from .numcore import BatchNormState, ParamStore, Tensor

NUM_NODES = len(STREAMS)
GRAPH_STRATEGIES = ("ttf_amef", "ttf_only", "amef_only", "gnn_od_edge", "gnn_st")


class FusionModel:
    def __init__(self, config: ModelConfig, stream_widths: Mapping[str, int],
                 targets: Sequence[str] = TARGETS, seed: int = 0):
        if config.strategy == "baseline_ave":
            raise ConfigError("baseline_ave is an ensemble of single_feature models; "
                              "use train.train_strategy")
        config.validate()
        self.config = config
        self.targets = tuple(targets)
        self.stream_widths = {s: int(stream_widths[s]) for s in STREAMS}
        self.seed = seed
        rng = np.random.default_rng(seed)
        K = config.width
        store = self.store = ParamStore()
        self.encoders = {s: LstmStack.create(store, f"enc.{s}", self.stream_widths[s], K, rng,
                                             config.lstm_hidden) for s in STREAMS}
        self.backbone = BiGruBackbone.create(store, "backbone", K, rng)
        self.ttf = TtfLayer.create(store, "ttf", K, rng)
        De = config.resolved_edge_width
        self.edge_encoder = EdgeEncoder.create(store, "amef.edges", K, config.resolved_key_width,
                                               De, rng)
        self.gcn = EdgeGcn.create(store, "amef.gcn", K, De, NUM_NODES, rng)
        self.gcn.node_bn.momentum = self.gcn.edge_bn.momentum = config.bn_momentum
        head_in = NUM_NODES * K if config.strategy == "gnn_st" else K
        self.heads = {t: ReadoutHead.create(store, f"head.{t}", NUM_NODES, K, head_in, rng,
                                            config.head_hidden) for t in self.targets}
        self.base_adj = base_adjacency(config.adjacency_rule, NUM_NODES, config.adjacency_mask)

    @property
    def strategy(self) -> str:
        return self.config.strategy

    # -- graph stage ---------------------------------------------------
    def graph_pass(self, vertices, context=None, training: bool = False) -> dict[str, Tensor]:
        """Graph fusion over frames shaped (F, A, K).

        Returns the intermediate tensors; ``nodes`` is the stage output.
        ``context`` is computed by the backbone when not supplied.
        """
        cfg = self.config
        v = nc.as_tensor(vertices)
        out: dict[str, Tensor] = {"vertices": v}
        kind = cfg.strategy
        if kind in ("ttf_amef", "ttf_only", "gnn_od_edge", "gnn_st"):
            out["adj0"] = knn_topology(v, cfg.k_nn, self.base_adj)
            refined = ttf_refine(v, out["adj0"], self.ttf)
            adj = task_adjacency(refined, cfg.k_nn, self.base_adj)
        elif kind == "amef_only":
            refined = v
            adj = nc.as_tensor(np.broadcast_to(normalized_base_adjacency(self.base_adj),
                                               v.shape[:-2] + self.base_adj.shape))
        else:
            raise ConfigError(f"strategy {kind!r} has no graph stage")
        out["refined"], out["adj"] = refined, adj
        if kind == "ttf_only":
            out["nodes"] = refined
            return out
        if kind in ("gnn_od_edge", "gnn_st"):
            out["nodes"] = scalar_edge_gcn(refined, adj, self.gcn, training)
            return out
        if cfg.attention_bypass:
            edges = nc.as_tensor(np.broadcast_to((1.0 - np.eye(NUM_NODES))[..., None],
                                                 adj.shape + (1,)))
        else:
            if context is None:
                context = global_context(v, self.backbone)
            out["context"] = context
            edges = edge_features(refined, context, self.edge_encoder, cfg.avvr_context_tokens)
        out["edges"] = edges
        out["unified"] = unify(edges, adj)
        out["nodes"], out["edges_out"] = edge_gcn(refined, out["unified"], adj, self.gcn, training)
        return out

    # -- full forward --------------------------------------------------
    def vertex_set(self, streams: Mapping[str, np.ndarray]) -> Tensor:
        return build_vertex_set(streams, self.encoders)

    def fused(self, streams: Mapping[str, np.ndarray], training: bool = False,
              keep: dict | None = None) -> dict[str, Tensor]:
        """Per-target fused frame vectors, shaped (B, N, width)."""
        cfg = self.config
        first = np.asarray(streams[STREAMS[0]] if cfg.strategy != "single_feature"
                           else streams[cfg.single_stream])
        if first.ndim != 3:
            raise DataError(f"streams must be (batch, frames, width), got {first.shape}")
        B, N = first.shape[:2]
        if cfg.strategy == "single_feature":
            v = encode_stream(streams[cfg.single_stream], self.encoders[cfg.single_stream])
            return {t: v for t in self.targets}
        verts = self.vertex_set(streams)
        flat = nc.reshape(verts, (B * N, NUM_NODES, cfg.width))
        if keep is not None:
            keep["vertices"] = flat
        if cfg.strategy == "ave":
            f = fuse_ave(flat)
            return {t: nc.reshape(f, (B, N, cfg.width)) for t in self.targets}
        if cfg.strategy == "fc":
            nodes = flat
        else:
            g = self.graph_pass(flat, training=training)
            if keep is not None:
                keep.update(g)
            nodes = g["nodes"]
        if cfg.strategy == "gnn_st":
            f = nc.reshape(nodes, (B, N, NUM_NODES * cfg.width))
            return {t: f for t in self.targets}
        return {t: nc.reshape(fuse_readout(nodes, self.heads[t].fusion_W, self.heads[t].fusion_b),
                              (B, N, cfg.width)) for t in self.targets}

    def forward(self, streams: Mapping[str, np.ndarray], training: bool = False,
                rng: np.random.Generator | None = None) -> dict[str, Tensor]:
        """Per-target predictions shaped (B, N)."""
        fused = self.fused(streams, training)
        preds = {}
        for t in self.targets:
            x = nc.dropout(fused[t], self.config.dropout, training, rng)
            preds[t] = predict_sequence(x, self.heads[t])
        return preds

    def predict(self, streams: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {t: p.data for t, p in self.forward(streams).items()}

    # -- state ---------------------------------------------------------
    def batch_norm_states(self) -> dict[str, BatchNormState]:
        return {"amef.gcn.node_bn": self.gcn.node_bn, "amef.gcn.edge_bn": self.gcn.edge_bn}

    def state(self) -> dict[str, np.ndarray]:
        st = self.store.state_dict()
        for name, bn in self.batch_norm_states().items():
            st[f"{name}.running_mean"] = bn.running_mean.copy()
            st[f"{name}.running_var"] = bn.running_var.copy()
        return st

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        params = {k: v for k, v in state.items() if k in self.store}
        bn_keys = {k for k in state if k not in self.store}
        self.store.load_state_dict(params)
        for name, bn in self.batch_norm_states().items():
            mk, vk = f"{name}.running_mean", f"{name}.running_var"
            if mk not in bn_keys or vk not in bn_keys:
                raise ConfigError(f"state lacks batch-norm statistics for {name}")
            bn.running_mean = np.array(state[mk], dtype=np.float64)
            bn.running_var = np.array(state[vk], dtype=np.float64)
            bn_keys -= {mk, vk}
        if bn_keys:
            raise ConfigError(f"unexpected state entries: {sorted(bn_keys)}")


class EnsembleModel:
    """Averages per-frame predictions of independently trained models."""

    def __init__(self, models: Sequence[FusionModel]):
        if not models:
            raise ConfigError("ensemble needs at least one model")
        self.models = list(models)
        self.targets = self.models[0].targets

    def predict(self, streams: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        from .baselines import baseline_ave
        per_model = [m.predict(streams) for m in self.models]
        return {t: baseline_ave([p[t] for p in per_model]) for t in self.targets}
