"""Per-layer finite-difference checks on a small random instance of the model."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import numcore as nc
from .amef import edge_features, edge_gcn, unify
from .config import STREAMS, ModelConfig
from .encoders import encode_stream, global_context
from .graph_ttf import knn_topology, task_adjacency, ttf_refine
from .head_loss import ccc_loss, fuse_readout, predict_sequence
from .model import NUM_NODES, FusionModel

LAYERS = ("lstm", "gru", "ttf", "avcr_avvr", "edge_gcn", "readout", "ccc_loss")


def _weighted(out: nc.Tensor, weights: np.ndarray) -> nc.Tensor:
    # a fixed random projection makes every output coordinate matter
    return nc.tsum(out * weights)


def layer_gradcheck(model_cfg: ModelConfig, seed: int = 0, frames: int = 4, batch: int = 2,
                    stream_width: int = 6, max_entries: int = 40,
                    step: float = 1e-5) -> dict[str, float]:
    """Max relative error per layer between tape and central-difference gradients.

    The model keeps the configured widths but reads narrow random streams so
    that every parameter block can be probed within seconds.
    """
    cfg = replace(model_cfg, strategy="ttf_amef", edge_width=model_cfg.edge_width
                  if model_cfg.strategy not in ("gnn_od_edge", "gnn_st") else None,
                  attention_bypass=False, dropout=0.0)
    rng = np.random.default_rng(seed)
    widths = {s: stream_width for s in STREAMS}
    model = FusionModel(cfg, widths, ("arousal",), int(rng.integers(2**31)))
    K = cfg.width
    F = batch * frames
    x = rng.standard_normal((batch, frames, stream_width))
    verts = nc.tensor(rng.standard_normal((F, NUM_NODES, K)), requires_grad=True)
    verts.name = "vertices"
    pick = np.random.default_rng(seed + 1)

    def check(fn, params) -> float:
        rep = nc.finite_difference_check(fn, params, step=step, max_entries=max_entries, rng=pick)
        return max(rep.values())

    def store_params(prefix: str) -> list[nc.Tensor]:
        return [t for k, t in model.store.items() if k.startswith(prefix)]

    report: dict[str, float] = {}
    enc = model.encoders[STREAMS[0]]
    w_enc = rng.standard_normal((batch, frames, K))
    report["lstm"] = check(lambda: _weighted(encode_stream(x, enc), w_enc),
                           store_params(f"enc.{STREAMS[0]}."))

    w_node = rng.standard_normal((F, NUM_NODES, K))
    report["gru"] = check(lambda: _weighted(global_context(verts, model.backbone), w_node),
                          store_params("backbone.") + [verts])

    adj0 = knn_topology(verts.data, cfg.k_nn, model.base_adj)
    report["ttf"] = check(lambda: _weighted(ttf_refine(verts, adj0, model.ttf), w_node),
                          store_params("ttf.") + [verts])

    context = nc.tensor(rng.standard_normal((F, NUM_NODES, K)), requires_grad=True)
    context.name = "context"
    De = cfg.resolved_edge_width
    w_edge = rng.standard_normal((F, NUM_NODES, NUM_NODES, De))
    report["avcr_avvr"] = check(
        lambda: _weighted(edge_features(verts, context, model.edge_encoder,
                                        cfg.avvr_context_tokens), w_edge),
        store_params("amef.edges.") + [verts, context])

    adj = task_adjacency(verts.data, cfg.k_nn, model.base_adj)
    edges = nc.tensor(unify(rng.standard_normal((F, NUM_NODES, NUM_NODES, De)), adj).data,
                      requires_grad=True)
    edges.name = "edges"

    def gcn_loss():
        nodes, new_edges = edge_gcn(verts, edges, adj, model.gcn, training=True)
        return _weighted(nodes, w_node) + _weighted(new_edges, w_edge)
    report["edge_gcn"] = check(gcn_loss, store_params("amef.gcn.") + [verts, edges])

    head = model.heads["arousal"]
    w_pred = rng.standard_normal((batch, frames))
    nodes = nc.tensor(rng.standard_normal((batch, frames, NUM_NODES, K)), requires_grad=True)
    nodes.name = "nodes"
    report["readout"] = check(
        lambda: _weighted(predict_sequence(fuse_readout(nodes, head.fusion_W, head.fusion_b),
                                           head), w_pred),
        store_params("head.arousal.") + [nodes])

    pred = nc.tensor(rng.standard_normal((batch, 3 * frames)), requires_grad=True)
    pred.name = "prediction"
    label = rng.uniform(-1, 1, (batch, 3 * frames))
    report["ccc_loss"] = check(lambda: ccc_loss(pred, label, cfg.standardize_before_ccc), [pred])
    return report
