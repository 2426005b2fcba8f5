import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from graphfuse import numcore as nc
from graphfuse.errors import DimensionError, UsageError
from graphfuse.head_loss import (CCC_FLOOR, LOSS_OFFSET, ReadoutHead, ccc, ccc_loss, ccc_loss_grad,
                                 fuse_readout, mean_utterance_ccc, predict_sequence)
from graphfuse.numcore import ParamStore, Tape, Tensor


def textbook_ccc(x, y):
    """Lin's coefficient written out with explicit loops and population moments."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cxy = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return 2 * cxy / (vx + vy + (mx - my) ** 2)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# -- readout --------------------------------------------------------------------

def _head(A=5, K=3, seed=0, hidden=(4, 3)):
    return ReadoutHead.create(ParamStore(), "h", A, K, K, np.random.default_rng(seed), hidden)


def test_zero_vertices_give_zero_fused_vector():
    head = _head()
    assert np.array_equal(fuse_readout(np.zeros((4, 5, 3)), head.fusion_W, head.fusion_b).data,
                          np.zeros((4, 3)))


def test_block_averaging_map_gives_node_mean():
    A, K = 5, 3
    W = np.tile(np.eye(K), (A, 1)) / A
    v = np.random.default_rng(1).standard_normal((6, A, K))
    out = fuse_readout(v, Tensor(W)).data
    assert np.allclose(out, v.mean(axis=1), atol=1e-15)


@pytest.mark.parametrize("A", [1, 2, 5, 7])
def test_readout_width_is_k_for_any_node_count(A):
    head = _head(A=A, K=4)
    assert fuse_readout(np.ones((2, 3, A, 4)), head.fusion_W, head.fusion_b).shape == (2, 3, 4)


def test_zero_weight_head_predicts_zero():
    head = _head()
    for layer in head.regressor.layers:
        for t in (layer.W_x, layer.W_h, layer.b):
            t.data[...] = 0.0
    head.regressor.proj_W.data[...] = 0.0
    out = predict_sequence(np.random.default_rng(2).standard_normal((7, 3)), head).data
    assert out.shape == (7,) and np.array_equal(out, np.zeros(7))


def test_single_frame_matches_hand_step():
    head = _head(hidden=(2,))
    layer = head.regressor.layers[0]
    x = np.array([0.3, -0.8, 0.5])
    g = x @ layer.W_x.data + layer.b.data
    sig = lambda z: 1 / (1 + np.exp(-z))
    i, f, c_, o = sig(g[:2]), sig(g[2:4]), np.tanh(g[4:6]), sig(g[6:])
    h = o * np.tanh(i * c_)
    expected = h @ head.regressor.proj_W.data + head.regressor.proj_b.data
    assert predict_sequence(x[None], head).data == pytest.approx(expected, abs=1e-15)


def test_predictions_are_causal():
    head = _head()
    x = np.random.default_rng(3).standard_normal((2, 9, 3))
    full = predict_sequence(x, head).data
    for t in (1, 5):
        assert np.allclose(predict_sequence(x[:, :t], head).data, full[:, :t], rtol=0, atol=1e-15)
    with pytest.raises(UsageError):
        predict_sequence(np.zeros((1, 0, 3)), head)


# -- ccc ------------------------------------------------------------------------

def test_closed_forms():
    a = np.random.default_rng(4).standard_normal(50)
    a -= a.mean()
    assert abs(ccc(a, a).ccc - 1) <= 1e-9 and ccc(a, a).loss == pytest.approx(1, abs=1e-9)
    assert abs(ccc(np.full(50, 0.3), a).ccc) <= 1e-9
    assert ccc(np.full(50, 0.3), a).loss == pytest.approx(2, abs=1e-9)
    assert abs(ccc(-a, a).ccc + 1) <= 1e-9 and ccc(-a, a).loss == pytest.approx(3, abs=1e-9)


def test_doubly_constant_input_uses_the_floor():
    st_ = ccc(np.full(4, 2.0), np.full(4, 2.0))
    assert st_.ccc == 0.0 and math.isfinite(st_.ccc)


def test_matches_textbook_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        x, y = rng.standard_normal(100), rng.standard_normal(100) * 2 + 0.5
        assert ccc(x, y).ccc == pytest.approx(textbook_ccc(list(x), list(y)), abs=1e-12)


def test_stats_fields():
    x, y = np.array([1.0, 2.0, 4.0]), np.array([0.0, 1.0, 1.0])
    s = ccc(x, y)
    assert (s.mean_pred, s.mean_label, s.n_frames) == (7 / 3, 2 / 3, 3)
    assert s.var_pred == pytest.approx(np.var(x)) and s.var_label == pytest.approx(np.var(y))
    assert s.covariance == pytest.approx(np.mean((x - x.mean()) * (y - y.mean())))


def test_ccc_errors():
    with pytest.raises(UsageError):
        ccc([1.0], [1.0])
    with pytest.raises(DimensionError):
        ccc([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite))
def test_symmetry_bound_and_loss_range(x, y):
    a, b = ccc(x, y).ccc, ccc(y, x).ccc
    assert a == b
    assert -1 - 1e-12 <= a <= 1 + 1e-12
    assert 1 - 1e-12 <= LOSS_OFFSET - a <= 3 + 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 10, elements=st.floats(-5, 5)), st.floats(0.1, 5).filter(lambda c: abs(c) > 0.1))
def test_shift_and_scale_lower_agreement(x, c):
    if np.var(x) < 1e-3:
        return
    assert ccc(x + c, x).ccc < ccc(x, x).ccc
    assert ccc(x, (1 + c) * x).ccc < 1


# -- loss gradient --------------------------------------------------------------

def _fd(pred, label, h=1e-6):
    g = np.empty_like(pred)
    for i in range(pred.size):
        up, dn = pred.copy(), pred.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (ccc(up, label).loss - ccc(dn, label).loss) / (2 * h)
    return g


def test_gradient_vanishes_at_agreement():
    y = np.random.default_rng(6).standard_normal(20)
    assert np.max(np.abs(ccc_loss_grad(y, y))) <= 1e-8


@pytest.mark.parametrize("scale", [1.0, 2.0])
def test_gradient_matches_finite_differences(scale):
    rng = np.random.default_rng(7)
    p, y = rng.standard_normal(15), rng.standard_normal(15) * scale
    assert np.allclose(ccc_loss_grad(p, y), _fd(p, y), atol=1e-7, rtol=1e-5)


def test_two_frame_closed_form():
    # p = (a, -a), y = (b, -b): means 0, var_p a^2, var_y b^2, cov a*b
    a, b = 0.7, 1.3
    grad = ccc_loss_grad([a, -a], [b, -b])
    denom = a * a + b * b
    # d/da_1 of 2ab/(a^2+b^2) with p1 = a1, p2 = -a fixed
    d_cov = b / 2
    d_den = a
    dccc = 2 * d_cov / denom - 2 * a * b * d_den / denom ** 2
    assert grad[0] == pytest.approx(-dccc, abs=1e-14)
    assert grad[1] == pytest.approx(dccc, abs=1e-14)


def test_tensor_loss_agrees_with_metric_and_analytic_gradient():
    rng = np.random.default_rng(8)
    p, y = rng.standard_normal((3, 10)), rng.uniform(-1, 1, (3, 10))
    t = Tensor(p, requires_grad=True)
    with Tape() as tape:
        loss = ccc_loss(t, y)
    (g,) = tape.backward(loss, [t])
    assert loss.item() == pytest.approx(ccc(p, y).loss, abs=1e-14)
    assert np.allclose(g.reshape(-1), ccc_loss_grad(p, y), atol=1e-14)


def test_standardized_loss_matches_standardized_metric():
    rng = np.random.default_rng(9)
    p, y = rng.standard_normal(30) * 3 + 1, rng.standard_normal(30)
    assert ccc_loss(Tensor(p), y, True).item() == pytest.approx(ccc(p, y, True).loss, abs=1e-12)
    report = nc.finite_difference_check(lambda: ccc_loss(t, y, True), [t := Tensor(p, requires_grad=True)])
    assert max(report.values()) <= 1e-4


def test_mean_utterance_ccc_averages_per_utterance():
    rng = np.random.default_rng(10)
    preds = [rng.standard_normal(n) for n in (5, 8)]
    labels = [rng.standard_normal(n) for n in (5, 8)]
    expected = (ccc(preds[0], labels[0]).ccc + ccc(preds[1], labels[1]).ccc) / 2
    assert mean_utterance_ccc(preds, labels) == pytest.approx(expected, abs=1e-15)
    with pytest.raises(UsageError):
        mean_utterance_ccc([], [])


def test_readout_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    store = ParamStore()
    head = ReadoutHead.create(store, "h", 5, 3, 3, rng, (4, 3))
    v = Tensor(rng.standard_normal((2, 4, 5, 3)), requires_grad=True, name="v")
    y = rng.uniform(-1, 1, (2, 4))

    def loss():
        return ccc_loss(predict_sequence(fuse_readout(v, head.fusion_W, head.fusion_b), head), y)
    report = nc.finite_difference_check(loss, list(store.values()) + [v], max_entries=20)
    assert max(report.values()) <= 1e-4, report
