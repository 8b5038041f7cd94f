"""Autodiff engine: forward values against references, gradients against
finite differences, and the accumulation/ownership rules of the tape."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gridseq.diffcore import (
    GradCheckResult,
    Parameter,
    Value,
    additive_attention,
    concat,
    conv2d_same,
    cross_entropy,
    dropout,
    embedding_lookup,
    grad_check,
    linear,
    load_checkpoint,
    log_softmax,
    lstm_cell,
    lstm_sequence,
    relative_error,
    save_checkpoint,
    softmax,
    uniform_init,
)
from oracles import (
    additive_attention_ref,
    conv2d_same_ref,
    cross_entropy_ref,
    log_softmax_ref,
    lstm_cell_ref,
    softmax_ref,
)

RNG = np.random.default_rng(0)


def rand(*shape):
    return np.random.default_rng(hash(shape) % 2**32).normal(size=shape)


# ---- forward values ----


def test_add_mul_broadcast_forward():
    a = Value(rand(3, 4))
    b = Value(rand(4))
    assert np.allclose((a + b).data, a.data + b.data)
    assert np.allclose((a * b).data, a.data * b.data)
    assert np.allclose((a - b).data, a.data - b.data)
    assert np.allclose((-a).data, -a.data)


def test_matmul_transpose_reshape_forward():
    a = Value(rand(3, 4))
    m = Value(rand(4, 5))
    assert np.allclose((a @ m).data, a.data @ m.data)
    assert np.allclose(a.T.data, a.data.T)
    assert np.allclose(a.reshape(2, 6).data, a.data.reshape(2, 6))


def test_reductions_forward():
    a = Value(rand(3, 4))
    assert np.isclose(a.sum().item(), a.data.sum())
    assert np.allclose(a.sum(axis=0).data, a.data.sum(axis=0))
    assert np.allclose(a.sum(axis=1, keepdims=True).data, a.data.sum(1, keepdims=True))
    assert np.isclose(a.mean().item(), a.data.mean())
    assert np.allclose(a.mean(axis=0).data, a.data.mean(axis=0))


def test_elementwise_forward():
    a = Value(rand(3, 4))
    assert np.allclose(a.tanh().data, np.tanh(a.data))
    assert np.allclose(a.sigmoid().data, 1 / (1 + np.exp(-a.data)))
    assert np.allclose(a.relu().data, np.maximum(a.data, 0))
    assert np.allclose((a * a).pow(0.5).data, np.abs(a.data))
    pos = Value(np.abs(rand(3, 4)) + 0.1)
    assert np.allclose(pos.log().data, np.log(pos.data))


def test_sigmoid_is_overflow_safe():
    a = Value(np.array([[-1000.0, 1000.0]]))
    with np.errstate(over="raise"):
        out = a.sigmoid().data
    assert np.allclose(out, [[0.0, 1.0]])


def test_softmax_and_log_softmax_forward():
    x = Value(rand(4, 6) * 50)
    assert np.allclose(softmax(x, axis=1).data, softmax_ref(x.data, axis=1))
    assert np.allclose(log_softmax(x, axis=1).data, log_softmax_ref(x.data, axis=1))
    assert np.allclose(softmax(x, axis=0).data, softmax_ref(x.data, axis=0))


def test_getitem_forward():
    a = Value(rand(5, 4))
    assert np.allclose(a[1:3, :2].data, a.data[1:3, :2])
    assert np.allclose(a[[0, 2, 2]].data, a.data[[0, 2, 2]])


def test_concat_forward():
    parts = [Value(rand(2, 3)), Value(rand(2, 5)), Value(rand(2, 1))]
    out = concat(parts, axis=1)
    assert np.allclose(out.data, np.concatenate([p.data for p in parts], axis=1))


def test_linear_forward():
    x, w, b = Value(rand(3, 4)), Value(rand(4, 5)), Value(rand(5))
    assert np.allclose(linear(x, w, b).data, x.data @ w.data + b.data)


def test_embedding_lookup_forward():
    table = Value(rand(7, 3))
    out = embedding_lookup(table, [4, 0, 4])
    assert np.allclose(out.data, table.data[[4, 0, 4]])


def test_conv2d_same_forward_matches_direct_loop():
    for k in (1, 3, 5):
        img = Value(rand(6, 6, 3))
        kern = Value(rand(k, k, 3, 2))
        bias = Value(rand(2))
        got = conv2d_same(img, kern, bias).data
        want = conv2d_same_ref(img.data, kern.data, bias.data)
        assert np.allclose(got, want)


def test_lstm_cell_forward_matches_reference():
    hidden = 4
    x, h, c = Value(rand(1, 3)), Value(rand(1, 4)), Value(rand(1, 4))
    w, b = Value(rand(7, 16)), Value(rand(16))
    out = lstm_cell(x, h, c, w, b)
    h_ref, c_ref = lstm_cell_ref(x.data, h.data, c.data, w.data, b.data)
    assert out.shape == (1, 2 * hidden)
    assert np.allclose(out.data[:, :hidden], h_ref)
    assert np.allclose(out.data[:, hidden:], c_ref)


def test_lstm_sequence_matches_stepped_cell():
    hidden = 4
    seq = rand(5, 3)
    w, b = rand(7, 16), rand(16)
    h = np.zeros((1, hidden))
    c = np.zeros((1, hidden))
    want = []
    for t in range(5):
        h, c = lstm_cell_ref(seq[t : t + 1], h, c, w, b)
        want.append(h[0])
    out = lstm_sequence(Value(seq), Value(w), Value(b))
    assert out.shape == (5, hidden)
    assert np.allclose(out.data, np.array(want))


def test_lstm_sequence_reverse_is_flipped_forward_pass():
    seq, w, b = rand(5, 3), rand(7, 16), rand(16)
    rev = lstm_sequence(Value(seq), Value(w), Value(b), reverse=True)
    fwd_of_flipped = lstm_sequence(Value(seq[::-1].copy()), Value(w), Value(b))
    # Reverse mode stores state t at input position t.
    assert np.allclose(rev.data, fwd_of_flipped.data[::-1])


def test_additive_attention_forward_matches_reference():
    q, keys = rand(1, 4), rand(6, 5)
    proj, w_q, bias, v = rand(6, 7), rand(4, 7), rand(7), rand(7, 1)
    out = additive_attention(Value(q), Value(keys), Value(proj), Value(w_q), Value(bias), Value(v))
    weights, context = additive_attention_ref(q, keys, proj, w_q, bias, v)
    assert out.shape == (1, 6 + 5)
    assert np.allclose(out.data[0, :6], weights)
    assert np.allclose(out.data[0, 6:], context)


def test_cross_entropy_forward():
    logits = Value(rand(1, 5) * 10)
    for idx in range(5):
        assert np.isclose(cross_entropy(logits, idx).item(), cross_entropy_ref(logits.data, idx))


def test_dropout_semantics():
    x = Value(np.ones((50, 50)))
    assert dropout(x, 0.0, np.random.default_rng(0), True) is x
    assert dropout(x, 0.5, np.random.default_rng(0), False) is x
    out = dropout(x, 0.4, np.random.default_rng(0), True).data
    kept = out != 0.0
    assert np.allclose(out[kept], 1.0 / 0.6)
    assert 0.5 < kept.mean() < 0.7
    again = dropout(x, 0.4, np.random.default_rng(0), True).data
    assert np.array_equal(out, again)
    with pytest.raises(ValueError):
        dropout(x, 1.0, np.random.default_rng(0), True)


# ---- gradient rules ----


def backward_of(expr_fn, *arrays_in):
    values = [Value(a.copy()) for a in arrays_in]
    expr_fn(*values).backward()
    return values


def test_add_broadcast_gradients():
    a, b = backward_of(lambda a, b: ((a + b) * rand(3, 4)).sum(), rand(3, 4), rand(4))
    coeff = rand(3, 4)
    assert np.allclose(a.grad, coeff)
    assert np.allclose(b.grad, coeff.sum(axis=0))


def test_mul_gradients():
    a_arr, b_arr = rand(3, 4), rand(3, 4)
    a, b = backward_of(lambda a, b: (a * b).sum(), a_arr, b_arr)
    assert np.allclose(a.grad, b_arr)
    assert np.allclose(b.grad, a_arr)


def test_matmul_gradients():
    a_arr, m_arr = rand(3, 4), rand(4, 5)
    a, m = backward_of(lambda a, m: (a @ m).sum(), a_arr, m_arr)
    ones = np.ones((3, 5))
    assert np.allclose(a.grad, ones @ m_arr.T)
    assert np.allclose(m.grad, a_arr.T @ ones)


def test_unused_parameter_has_zero_grad():
    a = Value(rand(3, 3))
    unused = Value(rand(3, 3))
    (a * 2.0).sum().backward()
    assert unused.grad is None
    assert np.array_equal(unused.grad_or_zeros(), np.zeros((3, 3)))
    assert a.grad is not None


def test_two_backwards_accumulate_exactly_twice():
    a = Value(rand(3, 3))
    loss = (a.tanh() * rand(3, 3)).sum()
    loss.backward()
    once = a.grad.copy()
    loss.backward()
    assert np.allclose(a.grad, 2.0 * once)
    a.zero_grad()
    assert a.grad is None


def test_reused_node_accumulates_both_paths():
    a = Value(rand(2, 2))
    b = Value(rand(2, 2))
    z = a + b
    (z.sum() + a.sum()).backward()
    assert np.allclose(a.grad, 2.0)
    # b's contribution must not be polluted by a's second path even though
    # both parents initially receive the same upstream buffer.
    assert np.allclose(b.grad, 1.0)


def test_getitem_gradient_scatters_into_owned_buffer():
    a = Value(rand(4, 3))
    (a[1:2, :].sum() + a.sum()).backward()
    want = np.ones((4, 3))
    want[1] += 1.0
    assert np.allclose(a.grad, want)


def test_fancy_index_gradient_accumulates_repeats():
    a = Value(rand(5, 2))
    a[[1, 1, 3]].sum().backward()
    want = np.zeros((5, 2))
    want[1] = 2.0
    want[3] = 1.0
    assert np.allclose(a.grad, want)


def test_embedding_lookup_gradient_accumulates_repeats():
    table = Value(rand(6, 3))
    embedding_lookup(table, [2, 2, 0]).sum().backward()
    want = np.zeros((6, 3))
    want[2] = 2.0
    want[0] = 1.0
    assert np.allclose(table.grad, want)


def check(f, params, coords=40, seed=0):
    result = grad_check(f, params, eps=1e-5, coords=coords, rng=np.random.default_rng(seed))
    assert isinstance(result, GradCheckResult)
    assert result.max_rel_err < 1e-3, result.worst()
    return result


def test_grad_check_core_ops():
    a = Value(rand(3, 4), name="a")
    m = Value(rand(4, 5), name="m")
    r35 = rand(3, 5)
    check(lambda: ((a @ m).tanh() * r35).sum(), [a, m])
    check(lambda: softmax(a, axis=1).pow(2.0).sum(), [a])
    check(lambda: (log_softmax(a, axis=0) * rand(3, 4)).sum(), [a])
    check(lambda: (a.sigmoid().log() * rand(3, 4)).mean(), [a])


def test_grad_check_fused_ops():
    seq = Value(rand(5, 3), name="seq")
    w = Value(rand(7, 16) * 0.4, name="w")
    b = Value(rand(16) * 0.4, name="b")
    check(lambda: lstm_sequence(seq, w, b).tanh().sum(), [seq, w, b])
    check(lambda: lstm_sequence(seq, w, b, reverse=True).tanh().sum(), [seq, w, b])

    q = Value(rand(1, 4), name="q")
    keys = Value(rand(6, 5), name="keys")
    proj = Value(rand(6, 7), name="proj")
    w_q = Value(rand(4, 7), name="w_q")
    bias = Value(rand(7), name="bias")
    v = Value(rand(7, 1), name="v")
    check(
        lambda: additive_attention(q, keys, proj, w_q, bias, v).tanh().sum(),
        [q, keys, proj, w_q, bias, v],
        coords=60,
    )


def test_grad_check_flags_a_wrong_gradient():
    a = Value(rand(3, 3), name="a")

    def broken():
        out = Value(np.tanh(a.data) * 2.0, _parents=(a,))

        def _backward():
            a.grad = out.grad  # missing the tanh derivative factor
        out._backward = _backward
        return out.sum()

    result = grad_check(broken, [a], eps=1e-5, coords=9, rng=np.random.default_rng(0))
    assert result.max_rel_err > 1e-3


def test_grad_check_reports_coordinates():
    a = Value(rand(2, 2), name="a")
    result = check(lambda: a.tanh().sum(), [a], coords=4)
    assert len(result.records) == 4
    names = {rec.param for rec in result.records}
    assert names == {"a"}


# ---- parameters and checkpoints ----


def test_parameter_requires_name():
    Parameter(rand(2, 2), name="w")
    with pytest.raises(ValueError):
        Parameter(rand(2, 2), name="")


def test_uniform_init_scale():
    rng = np.random.default_rng(0)
    w = uniform_init(rng, (100, 50))
    bound = 1.0 / np.sqrt(100)
    assert w.shape == (100, 50)
    assert np.all(np.abs(w) <= bound)
    assert np.abs(w).max() > 0.8 * bound


def test_checkpoint_round_trip(tmp_path):
    params = {
        "w1": Parameter(rand(3, 4), name="w1"),
        "b1": Parameter(rand(4), name="b1"),
    }
    stem = tmp_path / "ckpt"
    save_checkpoint(stem, params, step=17)
    arrays_back, step = load_checkpoint(stem)
    assert step == 17
    assert set(arrays_back) == {"w1", "b1"}
    for name, param in params.items():
        assert np.array_equal(arrays_back[name], param.data)

    manifest = json.loads((tmp_path / "ckpt.json").read_text())
    assert manifest["dtype"] == "<f8"
    assert [p["name"] for p in manifest["params"]] == ["w1", "b1"]


def test_checkpoint_rejects_truncated_blob(tmp_path):
    params = {"w": Parameter(rand(3, 3), name="w")}
    stem = tmp_path / "ckpt"
    save_checkpoint(stem, params, step=0)
    blob = (tmp_path / "ckpt.bin").read_bytes()
    (tmp_path / "ckpt.bin").write_bytes(blob[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(stem)


def test_checkpoint_bytes_deterministic(tmp_path):
    params = {"w": Parameter(rand(4, 4), name="w")}
    save_checkpoint(tmp_path / "a", params, step=3)
    save_checkpoint(tmp_path / "b", params, step=3)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_relative_error_edge_cases():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, -1e-9) == 0.0  # both under the floor
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
    assert relative_error(1.0, 2.0) == pytest.approx(0.5)


# ---- invariants over random inputs ----


@settings(max_examples=50, deadline=None)
@given(
    arrays(
        np.float64,
        st.tuples(st.integers(1, 6), st.integers(1, 6)),
        elements=st.floats(-100, 100),
    )
)
def test_softmax_rows_sum_to_one(x):
    rows = softmax(Value(x), axis=1).data
    assert np.all(np.abs(rows.sum(axis=1) - 1.0) < 1e-6)
    assert np.all(rows >= 0.0)


@settings(max_examples=50, deadline=None)
@given(
    arrays(
        np.float64,
        st.tuples(st.integers(1, 6), st.integers(1, 6)),
        elements=st.floats(-100, 100),
    )
)
def test_log_softmax_is_nonpositive_and_normalized(x):
    lp = log_softmax(Value(x), axis=1).data
    assert np.all(lp <= 1e-12)
    assert np.all(np.abs(np.exp(lp).sum(axis=1) - 1.0) < 1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_double_backward_doubles_every_grad(seed):
    rng = np.random.default_rng(seed)
    a = Value(rng.normal(size=(3, 2)))
    b = Value(rng.normal(size=(2, 3)))
    loss = ((a @ b).sigmoid() * rng.normal(size=(3, 3))).sum()
    loss.backward()
    first = (a.grad.copy(), b.grad.copy())
    loss.backward()
    assert np.allclose(a.grad, 2 * first[0])
    assert np.allclose(b.grad, 2 * first[1])
