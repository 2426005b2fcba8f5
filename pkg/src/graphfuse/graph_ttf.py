"""Base graph, similarity-KNN topology and the task-specific vertex refinement.

All functions act on the last two axes (nodes, features) and broadcast over
any leading frame/batch axes.  Self-pairs never enter a neighbour set; the
residual term carries each node's own contribution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError
from .numcore import ParamStore, Tensor


def base_adjacency(rule: str, num_nodes: int, mask=None) -> np.ndarray:
    if num_nodes < 1:
        raise ConfigError(f"node count must be >= 1, got {num_nodes}")
    if rule == "complete":
        return 1.0 - np.eye(num_nodes)
    if rule == "custom":
        if mask is None:
            raise ConfigError("custom rule needs an explicit mask")
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != (num_nodes, num_nodes):
            raise ConfigError(f"custom mask must be {num_nodes}x{num_nodes}, got {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise ConfigError("custom mask entries must be 0 or 1")
        return m.copy()
    raise ConfigError(f"unknown adjacency rule {rule!r}")


def similarity(vertices) -> Tensor:
    """Gram matrix of node features, (..., A, A)."""
    v = nc.as_tensor(vertices)
    return nc.matmul(v, nc.swapaxes(v, -1, -2))


def knn_support(sim: np.ndarray, k_nn: int, allowed: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask keeping the k_nn most similar non-self nodes of each row.

    Equal similarities are resolved toward the lower node index.  Pairs not in
    ``allowed`` are never kept, so a row may end up with fewer entries.
    """
    sim = np.asarray(sim)
    A = sim.shape[-1]
    if A == 1:
        return np.zeros(sim.shape, dtype=bool)
    if not 1 <= k_nn <= A - 1:
        raise ConfigError(f"k_nn must lie in [1, {A - 1}] for {A} nodes, got {k_nn}")
    ok = ~np.eye(A, dtype=bool)
    if allowed is not None:
        ok = ok & (np.asarray(allowed) > 0)
    ok = np.broadcast_to(ok, sim.shape)
    keyed = np.where(ok, -sim, np.inf)
    order = np.argsort(keyed, axis=-1, kind="stable")[..., :k_nn]
    support = np.zeros(sim.shape, dtype=bool)
    np.put_along_axis(support, order, True, axis=-1)
    return support & ok


def knn_topology(vertices, k_nn: int, allowed: np.ndarray | None = None) -> Tensor:
    """Row-stochastic adjacency over each node's k_nn most similar neighbours.

    Retained entries carry the raw similarity and are softmax-normalised per
    row; everything else is exactly 0.
    """
    sim = similarity(vertices)
    support = knn_support(sim.data, k_nn, allowed)
    return nc.softmax_rows(sim, support)


# the task-specific topology is the same construction applied to refined vertices
task_adjacency = knn_topology


def normalized_base_adjacency(base: np.ndarray) -> np.ndarray:
    """Uniform row-stochastic version of a 0/1 adjacency (zero rows stay zero)."""
    deg = base.sum(axis=-1, keepdims=True)
    return np.divide(base, deg, out=np.zeros_like(base, dtype=np.float64), where=deg > 0)


@dataclass
class TtfLayer:
    W_q: Tensor  # (K, K) neighbour transform
    W_p: Tensor  # (2K, K) combine transform over [self || message]
    b_p: Tensor  # (K,)

    @classmethod
    def create(cls, store: ParamStore, prefix: str, width: int,
               rng: np.random.Generator) -> "TtfLayer":
        return cls(store.add(f"{prefix}.W_q", nc.glorot(rng, width, width)),
                   store.add(f"{prefix}.W_p", nc.glorot(rng, 2 * width, width)),
                   store.add(f"{prefix}.b_p", np.zeros(width)))


def ttf_refine(vertices, adj, layer: TtfLayer) -> Tensor:
    """mu_hat_i = ReLU(mu_i + [mu_i || sum_j a_ij mu_j W_q] W_p + b_p)."""
    v = nc.as_tensor(vertices)
    adj = nc.as_tensor(adj)
    if adj.shape[-1] != v.shape[-2] or adj.shape[-2] != v.shape[-2]:
        raise DimensionError(f"adjacency {adj.shape} does not match {v.shape[-2]} nodes")
    message = nc.matmul(adj, nc.matmul(v, layer.W_q))
    combined = nc.fully_connected(nc.concat([v, message], axis=-1), layer.W_p, layer.b_p)
    return nc.relu(v + combined)
