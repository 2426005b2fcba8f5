"""Multi-dimensional edge features: cross-attention blocks, unification with the
task topology, and the edge-conditioned graph convolution.

Shapes broadcast over leading frame axes: vertices/context are (..., A, K),
edge tensors (..., A, A, D_e) with ``e[..., i, j, :]`` the edge seen from i
toward j.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DimensionError
from .numcore import BatchNormState, ParamStore, Tensor


@dataclass
class AttentionBlock:
    S_q: Tensor  # (K, d_k)
    S_k: Tensor  # (K, d_k)
    S_v: Tensor  # (K, K)

    @property
    def scale(self) -> float:
        return float(self.S_q.shape[1])

    @classmethod
    def create(cls, store: ParamStore, prefix: str, width: int, key_width: int,
               rng: np.random.Generator) -> "AttentionBlock":
        return cls(store.add(f"{prefix}.S_q", nc.glorot(rng, width, key_width)),
                   store.add(f"{prefix}.S_k", nc.glorot(rng, width, key_width)),
                   store.add(f"{prefix}.S_v", nc.glorot(rng, width, width)))


def attention_weights(query, keys, block: AttentionBlock) -> Tensor:
    """softmax(q S_q (k S_k)^T / sqrt(f_k)) for (..., Q, K) queries, (..., T, K) keys."""
    q = nc.matmul(nc.as_tensor(query), block.S_q)
    k = nc.matmul(nc.as_tensor(keys), block.S_k)
    scores = nc.matmul(q, nc.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(block.scale))
    return nc.softmax_rows(scores)


def cross_attention(query, key_value, block: AttentionBlock) -> Tensor:
    kv = nc.as_tensor(key_value)
    if nc.as_tensor(query).shape[-1] != kv.shape[-1]:
        raise DimensionError("query and key/value widths differ")
    w = attention_weights(query, kv, block)
    return nc.matmul(w, nc.matmul(kv, block.S_v))


def avcr(query_vertex, context, block: AttentionBlock) -> Tensor:
    """Vertex-context relation: a (..., 1, K) or (..., K) query attends over context rows."""
    q = nc.as_tensor(query_vertex)
    if q.ndim == 1:
        return cross_attention(nc.expand_dims(q, 0), context, block)[0]
    return cross_attention(q, context, block)


def avvr(query, key_value, block: AttentionBlock, context=None) -> Tensor:
    """Vertex-vertex relation between two context-aware vertex features.

    With a single key the attention weight is identically 1, so the result is
    ``key_value @ S_v`` whatever the query.  Passing ``context`` appends its
    rows to the key/value tokens.
    """
    q = nc.as_tensor(query)
    kv = nc.as_tensor(key_value)
    squeeze = q.ndim == 1
    if squeeze:
        q, kv = nc.expand_dims(q, 0), nc.expand_dims(kv, 0)
    if context is not None:
        kv = nc.concat([kv, nc.as_tensor(context)], axis=-2)
    out = cross_attention(q, kv, block)
    return out[0] if squeeze else out


@dataclass
class EdgeEncoder:
    avcr: AttentionBlock
    avvr: AttentionBlock
    W: Tensor  # (K, D_e)
    b: Tensor  # (D_e,)

    @classmethod
    def create(cls, store: ParamStore, prefix: str, width: int, key_width: int,
               edge_width: int, rng: np.random.Generator) -> "EdgeEncoder":
        return cls(AttentionBlock.create(store, f"{prefix}.avcr", width, key_width, rng),
                   AttentionBlock.create(store, f"{prefix}.avvr", width, key_width, rng),
                   store.add(f"{prefix}.fc_W", nc.glorot(rng, width, edge_width)),
                   store.add(f"{prefix}.fc_b", np.zeros(edge_width)))


def pair_relations(relations: Tensor, block: AttentionBlock, context=None) -> Tensor:
    """AVVR for every ordered pair at once.

    ``out[..., i, j, :]`` uses node j's relation feature as query and node i's
    (optionally followed by the context rows) as key/value.
    """
    rel = nc.as_tensor(relations)
    A = rel.shape[-2]
    kv = nc.expand_dims(rel, -2)                               # (..., A_i, 1, K)
    if context is not None:
        ctx = nc.as_tensor(context)
        ctx = nc.expand_dims(ctx, -3) * np.ones((A, 1, 1))     # (..., A_i, A, K)
        kv = nc.concat([kv, ctx], axis=-2)
    q = nc.expand_dims(nc.matmul(rel, block.S_q), -3)          # (..., 1, A_j, d)
    k = nc.matmul(kv, block.S_k)                               # (..., A_i, T, d)
    v = nc.matmul(kv, block.S_v)                               # (..., A_i, T, K)
    scores = nc.matmul(q, nc.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(block.scale))
    return nc.matmul(nc.softmax_rows(scores), v)               # (..., A_i, A_j, K)


def edge_features(refined, context, encoder: EdgeEncoder, context_tokens: bool = False) -> Tensor:
    """Directed edge vectors e_ij = FC(AVVR(F_j, F_i)) with F = AVCR(mu_hat, context)."""
    refined = nc.as_tensor(refined)
    A = refined.shape[-2]
    relations = cross_attention(refined, context, encoder.avcr)
    pairs = pair_relations(relations, encoder.avvr, context if context_tokens else None)
    e = nc.fully_connected(pairs, encoder.W, encoder.b)
    return e * (1.0 - np.eye(A))[..., None]


def unify(edges, adj) -> Tensor:
    """Scale each directed edge vector by its topology weight."""
    edges, adj = nc.as_tensor(edges), nc.as_tensor(adj)
    if edges.shape[-3:-1] != adj.shape[-2:]:
        raise DimensionError(f"edges {edges.shape} do not match adjacency {adj.shape}")
    return edges * nc.expand_dims(adj, -1)


@dataclass
class EdgeGcn:
    W_e: Tensor          # (D_e, K) edge projection used to gate messages
    W_v: Tensor          # (K, K) neighbour projection
    node_gamma: Tensor   # (A,)
    node_beta: Tensor
    edge_W: Tensor       # (D_e + 2K, D_e) edge update over [e_ij || mu_i || mu_j]
    edge_b: Tensor
    edge_gamma: Tensor   # (A*A,)
    edge_beta: Tensor
    node_bn: BatchNormState
    edge_bn: BatchNormState

    @classmethod
    def create(cls, store: ParamStore, prefix: str, width: int, edge_width: int,
               num_nodes: int, rng: np.random.Generator) -> "EdgeGcn":
        # node count enters the init scale of the message weights
        scale = 1.0 / np.sqrt(num_nodes)
        return cls(
            store.add(f"{prefix}.W_e", nc.glorot(rng, edge_width, width) * scale),
            store.add(f"{prefix}.W_v", nc.glorot(rng, width, width)),
            store.add(f"{prefix}.node_gamma", np.ones(num_nodes)),
            store.add(f"{prefix}.node_beta", np.zeros(num_nodes)),
            store.add(f"{prefix}.edge_W", nc.glorot(rng, edge_width + 2 * width, edge_width)),
            store.add(f"{prefix}.edge_b", np.zeros(edge_width)),
            store.add(f"{prefix}.edge_gamma", np.ones(num_nodes * num_nodes)),
            store.add(f"{prefix}.edge_beta", np.zeros(num_nodes * num_nodes)),
            BatchNormState(num_nodes),
            BatchNormState(num_nodes * num_nodes),
        )


def edge_messages(refined, edges, adj, gcn: EdgeGcn) -> Tensor:
    """m_ij = A_ij * (e_ij W_e) * (mu_j W_v), shape (..., A, A, K)."""
    gate = nc.matmul(nc.as_tensor(edges), gcn.W_e)
    neigh = nc.expand_dims(nc.matmul(nc.as_tensor(refined), gcn.W_v), -3)
    return nc.expand_dims(nc.as_tensor(adj), -1) * gate * neigh


def edge_gcn(refined, edges, adj, gcn: EdgeGcn, training: bool = False,
             normalize: bool = True) -> tuple[Tensor, Tensor]:
    """One edge-conditioned convolution over frames shaped (F, A, K).

    Returns the fused vertices and the updated edges.  Aggregated messages are
    divided by the node count; node and edge outputs are batch-normalised per
    node and per ordered pair respectively.  Updated edges stay zero off the
    topology support.
    """
    refined = nc.as_tensor(refined)
    edges = nc.as_tensor(edges)
    adj_t = nc.as_tensor(adj)
    F, A, K = refined.shape
    D = edges.shape[-1]
    agg = nc.tsum(edge_messages(refined, edges, adj_t, gcn), axis=-2) * (1.0 / A)
    nodes = nc.relu(refined + agg)

    W = gcn.edge_W
    own = nc.expand_dims(nc.matmul(refined, W[D:D + K]), -2)    # mu_i term
    other = nc.expand_dims(nc.matmul(refined, W[D + K:]), -3)   # mu_j term
    support = (adj_t.data > 0)[..., None]
    new_edges = nc.relu(edges + nc.matmul(edges, W[:D]) + own + other + gcn.edge_b) * support

    if normalize:
        nodes = nc.batch_norm(nodes, 1, gcn.node_bn, gcn.node_gamma, gcn.node_beta, training)
        flat = nc.reshape(new_edges, (F, A * A, D))
        flat = nc.batch_norm(flat, 1, gcn.edge_bn, gcn.edge_gamma, gcn.edge_beta, training)
        new_edges = nc.reshape(flat, (F, A, A, D)) * support
    return nodes, new_edges
