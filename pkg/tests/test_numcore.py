import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from graphfuse.errors import ConfigError, DimensionError, UsageError
from graphfuse import numcore as nc
from graphfuse.numcore import Tape, Tensor


def _triple_loop(a, b):
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def _fd_check(fn, *arrays_, seed=0):
    params = [Tensor(np.array(a, dtype=float), requires_grad=True, name=f"p{i}")
              for i, a in enumerate(arrays_)]
    report = nc.finite_difference_check(lambda: fn(*params), params)
    assert max(report.values()) <= 1e-4, report


# -- construction ---------------------------------------------------------

def test_tensor_rejects_non_finite():
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        Tensor([np.inf])


def test_debug_mode_flags_non_finite_op_output():
    nc.set_debug(True)
    try:
        with pytest.raises(FloatingPointError):
            nc.log(Tensor([0.0]))
    finally:
        nc.set_debug(False)


# -- matmul ---------------------------------------------------------------

def test_matmul_identity():
    out = nc.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3], [4]]))
    assert out.data.tolist() == [[3], [4]]


def test_matmul_row_col():
    assert nc.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(nc.matmul(Tensor(a), Tensor(b)).data, _triple_loop(a, b),
                               rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        nc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_batched_gradients():
    rng = np.random.default_rng(1)
    _fd_check(lambda a, b: (nc.matmul(a, b) ** 2).sum(),
              rng.uniform(-1, 1, (2, 3, 4)), rng.uniform(-1, 1, (4, 2)))


# -- softmax --------------------------------------------------------------

def test_softmax_uniform_row():
    np.testing.assert_allclose(nc.softmax_rows(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_softmax_single_element():
    assert nc.softmax_rows(Tensor([5.0])).data.tolist() == [1.0]


def test_softmax_matches_direct_oracle():
    x = [1.0, 2.0, 3.0]
    e = [math.exp(v) for v in x]
    oracle = [v / sum(e) for v in e]
    np.testing.assert_allclose(nc.softmax_rows(Tensor(x)).data, oracle, rtol=1e-14)


def test_softmax_empty_axis():
    with pytest.raises(DimensionError):
        nc.softmax_rows(Tensor(np.zeros((2, 0))))


def test_softmax_mask_zeroes_entries_and_empty_rows():
    x = Tensor([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    mask = np.array([[True, False, True], [False, False, False]])
    out = nc.softmax_rows(x, mask).data
    assert out[0, 1] == 0.0
    assert out[1].tolist() == [0.0, 0.0, 0.0]
    np.testing.assert_allclose(out[0, [0, 2]], np.exp([1, 3]) / np.exp([1, 3]).sum())


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = nc.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(out > 0) and np.all(out <= 1)


# -- layers ---------------------------------------------------------------

def test_relu():
    assert nc.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]


def test_dropout_eval_identity_bitwise():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 5)))
    out = nc.dropout(x, 0.1, training=False, rng=None)
    assert np.array_equal(out.data, x.data)


def test_dropout_inverted_scaling():
    x = Tensor(np.ones((200, 50)))
    out = nc.dropout(x, 0.1, training=True, rng=np.random.default_rng(0)).data
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 1 / 0.9)
    assert abs((out == 0).mean() - 0.1) < 0.01


@pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
def test_dropout_rate_out_of_range(rate):
    with pytest.raises(ConfigError):
        nc.dropout(Tensor([1.0]), rate, training=True, rng=np.random.default_rng(0))


def test_batch_norm_constant_column_is_zero():
    x = np.column_stack([np.full(6, 3.5), np.arange(6.0)])
    state = nc.BatchNormState(2)
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    out = nc.batch_norm(Tensor(x), 1, state, gamma, beta, training=True).data
    assert np.all(out[:, 0] == 0.0)
    # closed form for the second column
    col = x[:, 1]
    np.testing.assert_allclose(out[:, 1], (col - col.mean()) / np.sqrt(col.var() + 1e-8))


def test_batch_norm_eval_uses_running_stats():
    state = nc.BatchNormState(1, running_mean=np.array([2.0]), running_var=np.array([4.0]))
    out = nc.batch_norm(Tensor([[4.0]]), 1, state, Tensor([1.0]), Tensor([0.0]), training=False)
    np.testing.assert_allclose(out.data, [[2.0 / np.sqrt(4.0 + 1e-8)]])


def test_fully_connected_affine():
    out = nc.fully_connected(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([0.5]))
    assert out.data.tolist() == [[3.5]]


# -- backward -------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    with Tape() as tape:
        loss = x.sum()
    (g,) = tape.backward(loss, [x])
    assert np.array_equal(g, np.ones((2, 3)))


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = x * x
    (g,) = tape.backward(loss, [x])
    assert g == 6.0


def test_backward_rejects_non_scalar_and_reuse():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2
    with pytest.raises(UsageError):
        tape.backward(y)
    with Tape() as tape:
        loss = (x * 2).sum()
    tape.backward(loss)
    with pytest.raises(UsageError):
        tape.backward(loss)


def test_gradients_accumulate_at_shared_inputs():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        loss = x * x + x * 3.0 + x
    (g,) = tape.backward(loss, [x])
    assert g == 2 * 2.0 + 3.0 + 1.0


def test_tape_is_topologically_ordered():
    a = Tensor(1.0, requires_grad=True)
    with Tape() as tape:
        b = a * 2
        c = b + a
        _ = c * b
    pos = {id(t): i for i, t in enumerate(tape.records)}
    for node in tape.records:
        for p in node._parents:
            if id(p) in pos:
                assert pos[id(p)] < pos[id(node)]


def test_no_recording_outside_tape():
    a = Tensor(1.0, requires_grad=True)
    b = a * 2
    assert b._backward is None and not b.requires_grad


_UNARY = {
    "tanh": nc.tanh,
    "sigmoid": nc.sigmoid,
    "relu": nc.relu,
    "exp": nc.exp,
    "softmax": nc.softmax_rows,
    "square": lambda x: x ** 2,
    "neg": nc.neg,
    "transpose": lambda x: nc.transpose(x, (1, 0)),
    "getitem": lambda x: x[1:, ::2],
    "fancy_getitem": lambda x: x[np.array([0, 0, 2])],
    "mean_axis": lambda x: nc.mean(x, axis=0),
}


@pytest.mark.parametrize("name", sorted(_UNARY))
def test_unary_gradients_match_finite_differences(name):
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, (3, 4))
    w = rng.uniform(-1, 1, _UNARY[name](Tensor(x)).shape)
    _fd_check(lambda t: (_UNARY[name](t) * w).sum(), x)


def test_positive_domain_gradients():
    rng = np.random.default_rng(2)
    x = rng.uniform(0.5, 2.0, (3, 2))
    _fd_check(lambda t: (nc.log(t) + nc.sqrt(t) + 1.0 / t).sum(), x)


def test_binary_broadcast_gradients():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(-1, 1, (2, 3, 4)), rng.uniform(0.5, 1.5, (3, 1))
    _fd_check(lambda x, y: ((x + y) * (x - y) / y).sum(), a, b)


def test_concat_stack_where_gradients():
    rng = np.random.default_rng(6)
    a, b = rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, (2, 3))
    mask = rng.random((2, 6)) > 0.5
    w = rng.uniform(-1, 1, (2, 2, 3))

    def fn(x, y):
        c = nc.concat([x, y], axis=-1)
        s = nc.stack([x, y * y], axis=0)
        return (nc.where(mask, c, c * 3.0) ** 2).sum() + (s * w).sum()
    _fd_check(fn, a, b)


def test_batch_norm_and_dropout_gradients():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, (6, 3, 4))
    gamma, beta = rng.uniform(0.5, 1.5, 3), rng.uniform(-1, 1, 3)
    w = rng.uniform(-1, 1, (6, 3, 4))

    def fn(xt, g, b):
        state = nc.BatchNormState(3)
        out = nc.batch_norm(xt, 1, state, g, b, training=True)
        out = nc.dropout(out, 0.3, training=True, rng=np.random.default_rng(4))
        return (out * w).sum()
    _fd_check(fn, x, gamma, beta)


def test_fully_connected_gradients():
    rng = np.random.default_rng(9)
    _fd_check(lambda x, W, b: (nc.relu(nc.fully_connected(x, W, b)) ** 2).sum(),
              rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, (3, 2)), rng.uniform(-1, 1, 2))


def test_forward_backward_determinism():
    def run():
        rng = np.random.default_rng(42)
        W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(5, 4)))
        with Tape() as tape:
            h = nc.dropout(nc.tanh(x @ W), 0.2, True, rng)
            loss = (h * h).sum()
        (g,) = tape.backward(loss, [W])
        return loss.data.copy(), g
    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


# -- RMSprop --------------------------------------------------------------

def test_rmsprop_zero_gradient():
    state = nc.RmspropState(0.005, 0.9, 1e-8, {"w": np.array([4.0])})
    out = nc.rmsprop_step({"w": np.array([1.5])}, {"w": np.array([0.0])}, state)
    assert out["w"].tolist() == [1.5]
    np.testing.assert_allclose(state.mean_square["w"], [3.6])


def test_rmsprop_first_step_hand_value():
    state = nc.RmspropState(0.005, 0.9, 1e-8)
    out = nc.rmsprop_step({"w": np.array([0.0])}, {"w": np.array([1.0])}, state)
    np.testing.assert_allclose(out["w"], [-0.005 * 1 / (math.sqrt(0.1) + 1e-8)], rtol=1e-15)


def test_rmsprop_two_step_trace():
    # scripted scalar oracle
    p, s = 0.3, 0.0
    trace = []
    for g in (0.7, 0.7):
        s = 0.9 * s + 0.1 * g * g
        p = p - 0.005 * g / (math.sqrt(s) + 1e-8)
        trace.append(p)
    state = nc.RmspropState(0.005, 0.9, 1e-8)
    params = {"w": np.array([0.3])}
    got = []
    for _ in range(2):
        params = nc.rmsprop_step(params, {"w": np.array([0.7])}, state)
        got.append(params["w"][0])
    np.testing.assert_allclose(got, trace, rtol=1e-15)


def test_rmsprop_shape_mismatch_and_config():
    with pytest.raises(DimensionError):
        nc.rmsprop_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nc.RmspropState())
    with pytest.raises(ConfigError):
        nc.RmspropState(decay=1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-10, 10)))
def test_rmsprop_running_mean_nonnegative(g):
    state = nc.RmspropState()
    nc.rmsprop_step({"w": np.zeros(5)}, {"w": g}, state)
    assert np.all(state.mean_square["w"] >= 0)


def test_param_store_round_trip():
    store = nc.ParamStore()
    store.add("a", np.ones((2, 2)))
    snap = store.state_dict()
    store["a"].data = np.zeros((2, 2))
    store.load_state_dict(snap)
    assert np.array_equal(store["a"].data, np.ones((2, 2)))
    with pytest.raises(ConfigError):
        store.load_state_dict({})
