import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biden.numkit import (
    NEG_INF,
    Tape,
    Tensor,
    backward,
    default_dtype,
    get_default_dtype,
    layer_norm,
    masked_log_softmax,
    masked_softmax,
    matmul,
    ops,
)
from oracles import layer_norm_loops, matmul_loops, numeric_grad, rel_err, softmax_row


def param(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# -- matmul -------------------------------------------------------------------

def test_matmul_identity():
    A = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(matmul(np.eye(2), A).data, A)


def test_matmul_hand_product():
    out = matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_matches_loops():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(a, b).data, matmul_loops(a, b), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_matmul_batched_against_loops():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    out = matmul(a, b).data
    for i in range(2):
        np.testing.assert_allclose(out[i], matmul_loops(a[i], b), atol=1e-12)


# -- masked softmax -----------------------------------------------------------

def test_softmax_uniform():
    out = masked_softmax(np.zeros(4), np.zeros(4))
    assert out.data.tolist() == [0.25] * 4


def test_softmax_single_valid_entry():
    out = masked_softmax(np.array([5.0, 7.0]), np.array([0.0, NEG_INF]))
    assert out.data.tolist() == [1.0, 0.0]


def test_softmax_fully_masked_row_is_zero_and_flagged():
    out, invalid = masked_softmax(np.array([1.0, 2.0, 3.0]), np.full(3, NEG_INF), return_invalid=True)
    assert out.data.tolist() == [0.0, 0.0, 0.0]
    assert bool(invalid)


def test_neg_inf_is_finite():
    assert NEG_INF == -1e9 and np.isfinite(NEG_INF)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_softmax_rows_normalised(rows, cols, seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(scale=5.0, size=(rows, cols))
    mask = np.where(rng.random((rows, cols)) < 0.4, NEG_INF, 0.0)
    out = masked_softmax(logits, mask).data
    assert np.all(np.isfinite(out)) and np.all(out >= 0) and np.all(out <= 1)
    for r in range(rows):
        np.testing.assert_allclose(out[r], softmax_row(logits[r], mask[r]), atol=1e-12)
        if np.any(mask[r] == 0):
            assert abs(out[r].sum() - 1.0) < 1e-9
        else:
            assert np.all(out[r] == 0)


def test_log_softmax_invalid_rows_zero():
    out = masked_log_softmax(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0, 0.0], [NEG_INF, NEG_INF]]))
    assert out.data[1].tolist() == [0.0, 0.0]
    np.testing.assert_allclose(np.exp(out.data[0]).sum(), 1.0, atol=1e-12)


# -- layer norm ---------------------------------------------------------------

def test_layer_norm_constant_vector():
    out = layer_norm(np.full((1, 5), 3.0), np.ones(5), np.zeros(5))
    assert np.all(out.data == 0.0)


def test_layer_norm_two_values():
    out = layer_norm(np.array([[1.0, 3.0]]), np.ones(2), np.zeros(2), eps=1e-12)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-9)


def test_layer_norm_matches_loops():
    rng = np.random.default_rng(2)
    x, g, b = rng.normal(size=(2, 8)), rng.normal(size=8), rng.normal(size=8)
    np.testing.assert_allclose(layer_norm(x, g, b).data, layer_norm_loops(x, g, b), atol=1e-10)


# -- backward -----------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = param(np.arange(4.0).reshape(2, 2))
    with Tape() as tape:
        loss = x.sum()
    assert np.array_equal(backward(tape, loss)[x], np.ones((2, 2)))


def test_backward_square():
    x = param([1.0, 2.0])
    with Tape() as tape:
        loss = (x * x).sum()
    assert backward(tape, loss)[x].tolist() == [2.0, 4.0]


def test_backward_rejects_non_scalar():
    x = param([1.0, 2.0])
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        backward(tape, y)


def test_no_graph_outside_tape():
    x = param([1.0])
    y = x * 3.0
    assert y.is_leaf and not y.requires_grad


def test_tape_order_parents_first():
    x = param(np.ones(3))
    with Tape() as tape:
        y = ops.relu(x * 2.0)
        z = (y * y).sum()
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for node in tape.nodes:
        for p in node._parents:
            if id(p) in pos:
                assert pos[id(p)] < pos[id(node)]
    assert tape.nodes[-1] is z


def test_every_leaf_gets_same_shape_buffer():
    a, b = param(np.ones((2, 3))), param(np.ones(3))
    with Tape() as tape:
        loss = (a + b).sum()
    g = backward(tape, loss)
    assert g[a].shape == a.shape and g[b].shape == b.shape
    assert np.array_equal(g[b], np.full(3, 2.0))


def _check_op(fn, *arrays, tol=1e-6):
    leaves = [param(a) for a in arrays]
    with Tape() as tape:
        loss = fn(*leaves)
    grads = backward(tape, loss)
    for leaf in leaves:
        num = numeric_grad(lambda: float(fn(*leaves).data), leaf.data)
        assert rel_err(grads[leaf], num) < tol


_LS_MASK = np.array([[0, NEG_INF, 0], [0, 0, 0], [NEG_INF] * 3])

OPS = {
    "add": lambda a, b: (a + b).sum(),
    "sub": lambda a, b: (a - b * 2.0).sum(),
    "mul": lambda a, b: (a * b).sum(),
    "div": lambda a, b: (a / (b * b + 1.0)).sum(),
    "matmul": lambda a, b: (a @ b.T).sum(),
    "tanh": lambda a, b: (ops.tanh(a) * b).sum(),
    "sigmoid": lambda a, b: (ops.sigmoid(a) * b).sum(),
    "relu": lambda a, b: (ops.relu(a) * b).sum(),
    "exp_log": lambda a, b: ops.log(ops.exp(a) + ops.exp(b)).sum(),
    "max": lambda a, b: (ops.max(a, axis=1) * b.sum(axis=1)).sum(),
    "mean": lambda a, b: (a.mean(axis=0) * b.mean(axis=0)).sum(),
    "concat": lambda a, b: (ops.concat([a, b], axis=-1) * ops.concat([b, a], axis=-1)).sum(),
    "stack": lambda a, b: (ops.stack([a, b * a], axis=-1) * 1.5).sum(),
    "transpose": lambda a, b: (a.T @ b).sum(),
    "index": lambda a, b: (a[1:, ::2] * b[:2, :2]).sum(),
    "softmax": lambda a, b: (masked_softmax(a, np.array([[0, NEG_INF, 0], [0, 0, 0], [NEG_INF] * 3])) * b).sum(),
    # masked entries sit near NEG_INF where finite differences lose precision
    "log_softmax": lambda a, b: (masked_log_softmax(a, _LS_MASK) * (b * (_LS_MASK == 0))).sum(),
    "layer_norm": lambda a, b: (layer_norm(a, b[0], b[1]) * b).sum(),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a = rng.normal(size=(3, 3)) + 0.05
    b = rng.normal(size=(3, 3))
    _check_op(OPS[name], a, b, tol=1e-6)


def test_embedding_gradient_and_range_check():
    table = param(np.random.default_rng(3).normal(size=(5, 2)))
    with Tape() as tape:
        loss = ops.embedding(table, np.array([[1, 1, 4]])).sum()
    g = backward(tape, loss)[table]
    assert g[:, 0].tolist() == [0.0, 2.0, 0.0, 0.0, 1.0]
    with pytest.raises(IndexError):
        ops.embedding(table, np.array([5]))


def test_default_dtype_switch():
    assert get_default_dtype() is np.float64
    with default_dtype(np.float32):
        assert Tensor([1, 2]).dtype == np.float32
    assert Tensor([1, 2]).dtype == np.float64


def test_ops_deterministic():
    rng = np.random.default_rng(4)
    x, g, b = rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=6)
    run = lambda: masked_softmax(layer_norm(x, g, b).data @ x.T, np.zeros((4, 4))).data
    assert np.array_equal(run(), run())
