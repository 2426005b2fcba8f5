import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from graphfuse import numcore as nc
from graphfuse.errors import ConfigError
from graphfuse.graph_ttf import (TtfLayer, base_adjacency, knn_support, knn_topology,
                                 normalized_base_adjacency, similarity, task_adjacency,
                                 ttf_refine)
from graphfuse.numcore import ParamStore, Tensor


def _has_ties(sim, tol=1e-9):
    """True when some row has two off-diagonal similarities within ``tol``."""
    A = sim.shape[-1]
    off = sim[..., ~np.eye(A, dtype=bool)].reshape(sim.shape[:-2] + (A, A - 1))
    d = np.diff(np.sort(off, axis=-1), axis=-1)
    return bool(np.any(d < tol))


def _layer(K=3, seed=0):
    return TtfLayer.create(ParamStore(), "ttf", K, np.random.default_rng(seed))


# -- base adjacency ---------------------------------------------------------

def test_complete_base_graph():
    a = base_adjacency("complete", 5)
    assert a.sum() == 20 and np.all(np.diag(a) == 0)
    assert np.array_equal(a, a.T)


def test_single_node_graph_is_empty():
    assert np.array_equal(base_adjacency("complete", 1), np.zeros((1, 1)))


def test_custom_mask_round_trips():
    mask = [[0, 1, 0], [1, 0, 1], [0, 0, 0]]
    assert np.array_equal(base_adjacency("custom", 3, mask), np.array(mask, dtype=float))


@pytest.mark.parametrize("mask", [[[0, 1], [1, 0], [0, 0]], [[0, 2], [1, 0]], None])
def test_bad_custom_masks_are_config_errors(mask):
    with pytest.raises(ConfigError):
        base_adjacency("custom", 2, mask)


def test_unknown_rule_and_bad_node_count():
    with pytest.raises(ConfigError):
        base_adjacency("ring", 3)
    with pytest.raises(ConfigError):
        base_adjacency("complete", 0)


# -- knn ----------------------------------------------------------------------

def test_orthonormal_rows_tie_to_lower_index():
    v = np.eye(5)
    for k in range(1, 5):
        s = knn_support(similarity(v).data, k)
        assert np.all(s.sum(-1) == k)
        for i in range(5):
            expected = [j for j in range(5) if j != i][:k]
            assert sorted(np.flatnonzero(s[i])) == expected


def test_full_k_equals_complete_graph():
    v = np.random.default_rng(0).standard_normal((5, 4))
    assert np.array_equal(knn_support(similarity(v).data, 4), base_adjacency("complete", 5) > 0)


def test_three_node_hand_case_matches_brute_force():
    v = np.array([[1.0, 0.0], [0.9, 0.5], [-0.3, 2.0]])
    sim = v @ v.T  # off-diagonal: (0,1)=0.9 (0,2)=-0.3 (1,2)=0.73
    s = knn_support(sim, 1)
    assert np.array_equal(np.argmax(s, axis=-1), [1, 0, 1])
    for i in range(3):
        others = [j for j in range(3) if j != i]
        best = max(others, key=lambda j: sim[i, j])
        assert s[i, best] and s[i].sum() == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.data())
def test_support_matches_exhaustive_top_k(seed, A, data):
    k = data.draw(st.integers(1, A - 1))
    sim = np.random.default_rng(seed).standard_normal((A, A))
    s = knn_support(sim, k)
    for i in range(A):
        others = [j for j in range(A) if j != i]
        best = max(itertools.combinations(others, k), key=lambda c: sum(sim[i, j] for j in c))
        assert set(np.flatnonzero(s[i])) == set(best)


def test_k_out_of_range_is_config_error():
    sim = np.zeros((5, 5))
    for k in (0, 5):
        with pytest.raises(ConfigError):
            knn_support(sim, k)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_support_is_monotone_in_k(seed):
    sim = np.random.default_rng(seed).standard_normal((3, 5, 5))
    prev = knn_support(sim, 1)
    for k in range(2, 5):
        cur = knn_support(sim, k)
        assert np.all(cur[prev])
        prev = cur


def test_custom_mask_bounds_support():
    rng = np.random.default_rng(1)
    mask = (rng.random((5, 5)) < 0.5).astype(float)
    np.fill_diagonal(mask, 0)
    adj = knn_topology(rng.standard_normal((20, 5, 4)), 3, mask).data
    assert np.all(adj[:, mask == 0] == 0)
    rows = adj.sum(-1)
    kept = rows > 0
    assert np.allclose(rows[kept], 1.0, atol=1e-9)


def test_identical_unit_rows_give_uniform_rows():
    v = np.tile(np.array([0.6, 0.8]), (5, 1))
    adj = knn_topology(v, 4).data
    assert np.allclose(adj, base_adjacency("complete", 5) / 4, atol=1e-15)


def test_orthogonal_rows_gram_oracle():
    v = np.eye(4)[:, :4] * np.array([1.0, 2.0, 0.5, 3.0])[:, None]
    sim = similarity(v).data
    assert np.array_equal(sim, np.diag([1.0, 4.0, 0.25, 9.0]))
    adj = task_adjacency(v, 3).data
    # all retained similarities are 0, so every kept entry shares one softmax weight
    assert np.allclose(adj, (1 - np.eye(4)) / 3, atol=1e-15)


def test_retained_entries_follow_masked_softmax():
    v = np.random.default_rng(2).standard_normal((5, 3))
    sim = v @ v.T
    adj = knn_topology(v, 2).data
    s = knn_support(sim, 2)
    for i in range(5):
        keep = np.flatnonzero(s[i])
        e = np.exp(sim[i, keep] - sim[i, keep].max())
        assert np.allclose(adj[i, keep], e / e.sum(), atol=1e-15)
        assert np.all(adj[i, ~s[i]] == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_topology_permutes_with_nodes(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((5, 4))
    perm = rng.permutation(5)
    a = knn_topology(v, 2).data
    b = knn_topology(v[perm], 2).data
    assert np.allclose(b, a[np.ix_(perm, perm)], atol=1e-12)


def test_normalized_base_adjacency_keeps_zero_rows():
    base = np.array([[0, 1, 1], [0, 0, 0], [1, 0, 0]], dtype=float)
    assert np.array_equal(normalized_base_adjacency(base),
                          [[0, 0.5, 0.5], [0, 0, 0], [1, 0, 0]])


# -- refinement ---------------------------------------------------------------

def test_message_free_residual_is_relu():
    layer = _layer()
    layer.W_p.data[...] = 0.0
    v = np.random.default_rng(3).standard_normal((5, 3))
    out = ttf_refine(v, np.zeros((5, 5)), layer).data
    assert np.array_equal(out, np.maximum(v, 0))


def test_zero_vertices_give_zero_output():
    out = ttf_refine(np.zeros((2, 5, 3)), knn_topology(np.zeros((2, 5, 3)), 4), _layer()).data
    assert np.array_equal(out, np.zeros((2, 5, 3)))


def test_two_node_scalar_hand_case():
    # K=1: mu_hat_i = relu(mu_i + p_self*mu_i + p_msg*a_ij*q*mu_j + b)
    layer = TtfLayer(Tensor([[0.5]]), Tensor([[0.2], [-1.5]]), Tensor([0.1]))
    mu = np.array([[1.0], [-2.0]])
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    hand = [max(0.0, 1.0 + 0.2 * 1.0 - 1.5 * 0.5 * -2.0 + 0.1),
            max(0.0, -2.0 + 0.2 * -2.0 - 1.5 * 0.5 * 1.0 + 0.1)]
    assert ttf_refine(mu, adj, layer).data[:, 0] == pytest.approx(hand, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_refinement_and_task_topology_permute_with_nodes(seed):
    rng = np.random.default_rng(seed)
    layer = _layer(K=4, seed=seed)
    v = rng.standard_normal((5, 4))
    perm = rng.permutation(5)

    def run(x):
        refined = ttf_refine(x, knn_topology(x, 2), layer)
        return refined.data, task_adjacency(refined, 2).data
    r, a = run(v)
    assume(not _has_ties(v @ v.T) and not _has_ties(r @ r.T))
    rp, ap = run(v[perm])
    assert np.allclose(rp, r[perm], atol=1e-12)
    assert np.allclose(ap, a[np.ix_(perm, perm)], atol=1e-12)


def test_ttf_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    store = ParamStore()
    layer = TtfLayer.create(store, "ttf", 3, rng)
    v = Tensor(rng.standard_normal((4, 5, 3)), requires_grad=True, name="v")
    w = rng.standard_normal((4, 5, 3))
    adj = knn_topology(v.data, 2)

    def loss():
        refined = ttf_refine(v, adj, layer)
        return nc.tsum(refined * w) + nc.tsum(task_adjacency(refined, 2) * w[..., :1])
    report = nc.finite_difference_check(loss, list(store.values()) + [v])
    assert max(report.values()) <= 1e-4, report
