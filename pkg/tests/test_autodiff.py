import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import numeric_grad
from kinesig.autodiff import (
    Adam, AdamState, BatchNorm1d, Dropout, Linear, NonFiniteError, Parameter, TapeError, Tensor,
    adam_step, batch_norm, concat, cross_entropy, default_dtype, dropout, l2_normalize, layer_norm, log,
    no_grad, relu, softmax, trace_ops,
)
from kinesig.autodiff.flops import matmul_flops, op_cost, trace_cost


def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def check_grads(fn, *arrays, tol=1e-6):
    """Backward of ``sum(fn(*tensors) * R)`` against central differences for every input."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    r = np.random.default_rng(0).standard_normal(out.shape)
    (out * Tensor(r)).sum().backward()
    for t in tensors:
        f = lambda: float((fn(*[Tensor(u.data) for u in tensors]).data * r).sum())
        num = numeric_grad(f, t.data)
        np.testing.assert_allclose(t.grad, num, rtol=1e-5, atol=tol)


# -- forward values ---------------------------------------------------------
def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
    np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, loop_matmul(a, b), atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_cross_entropy_matches_log_sum_exp_loop(rng):
    logits = rng.normal(size=(6, 4)) * 3
    labels = np.array([0, 1, 2, 3, 1, 0])
    expected = 0.0
    for row, y in zip(logits, labels):
        expected += math.log(sum(math.exp(v) for v in row)) - row[y]
    assert cross_entropy(Tensor(logits), labels).item() == pytest.approx(expected / 6, abs=1e-12)


def test_cross_entropy_is_stable_for_huge_logits():
    loss = cross_entropy(Tensor(np.array([[1000.0, 0.0]])), [0])
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), [0])


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    y = softmax(Tensor(x)).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)


def test_softmax_shift_invariant(rng):
    x = rng.normal(size=(3, 7))
    np.testing.assert_allclose(softmax(Tensor(x)).data, softmax(Tensor(x + 123.0)).data, atol=1e-12)


def test_softmax_rejects_nan():
    with pytest.raises(NonFiniteError):
        softmax(Tensor(np.array([[0.0, np.nan]])))


def test_layer_norm_standardizes(rng):
    x = rng.normal(3.0, 2.0, size=(5, 8))
    y = layer_norm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-4)


def test_batch_norm_train_updates_running_stats(rng):
    x = rng.normal(2.0, 3.0, size=(16, 4))
    rm, rv = np.zeros(4), np.ones(4)
    y = batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), rm, rv, training=True).data
    np.testing.assert_allclose(y.mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(rm, 0.1 * x.mean(0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(0, ddof=1))


def test_batch_norm_eval_uses_running_stats():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    rm, rv = np.array([1.0, 1.0]), np.array([4.0, 1.0])
    y = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, training=False, eps=0.0).data
    np.testing.assert_allclose(y, [[0.0, 1.0], [1.0, 3.0]])


def test_batch_norm_needs_two_rows_in_training():
    with pytest.raises(ValueError):
        BatchNorm1d(3)(Tensor(np.ones((1, 3))))
    bn = BatchNorm1d(3).eval()
    assert bn(Tensor(np.ones((1, 3)))).shape == (1, 3)


def test_dropout_eval_is_identity_and_train_is_seeded(rng):
    x = Tensor(rng.normal(size=(50, 20)))
    assert dropout(x, 0.5, None, training=False) is x
    d1, d2 = Dropout(0.5), Dropout(0.5)
    d1.seed, d2.seed = 3, 3
    a, b = d1(x).data, d2(x).data
    np.testing.assert_array_equal(a, b)
    kept = a != 0
    assert 0.4 < kept.mean() < 0.6
    np.testing.assert_allclose(a[kept], 2 * x.data[kept])


def test_l2_normalize_unit_rows_and_zero_guard(rng):
    y = l2_normalize(Tensor(rng.normal(size=(4, 6)))).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)
    z = l2_normalize(Tensor(np.zeros((2, 3)))).data
    assert np.all(np.isfinite(z)) and np.all(z == 0)


# -- gradients against finite differences -----------------------------------------------
@pytest.mark.parametrize("fn, shapes", [
    (lambda a, b: a + b, [(3, 4), (4,)]),
    (lambda a, b: a - b, [(3, 4), (3, 1)]),
    (lambda a, b: a * b, [(2, 3), (2, 3)]),
    (lambda a, b: a / (b * b + 1.0), [(2, 3), (1, 3)]),
    (lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
    (lambda a, b: a @ b, [(2, 3, 4), (2, 4, 5)]),
    (lambda a, b: concat([a, b], axis=1), [(2, 3), (2, 2)]),
    (lambda a: a.reshape(6, 2).transpose(1, 0), [(3, 4)]),
    (lambda a: a[:, [0, 2, 2]], [(3, 4)]),
    (lambda a: a.mean(axis=1) + a.sum(axis=0, keepdims=True).sum(), [(3, 4)]),
    (lambda a: softmax(a), [(3, 5)]),
    (lambda a: l2_normalize(a), [(3, 5)]),
    (lambda a: log(a * a + 1.0), [(3, 2)]),
])
def test_op_gradients(fn, shapes, rng):
    check_grads(fn, *[rng.normal(size=s) for s in shapes])


def test_relu_gradient_away_from_kink(rng):
    x = rng.normal(size=(4, 5))
    x[np.abs(x) < 0.05] = 0.5
    check_grads(lambda a: relu(a), x)


def test_layer_norm_gradients(rng):
    check_grads(lambda x, g, b: layer_norm(x, g, b), rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6))


def test_batch_norm_train_gradients(rng):
    def fn(x, g, b):
        return batch_norm(x, g, b, np.zeros(4), np.ones(4), training=True)
    check_grads(fn, rng.normal(size=(5, 4)), rng.normal(size=4), rng.normal(size=4))


def test_cross_entropy_gradient(rng):
    labels = np.array([2, 0, 1])
    check_grads(lambda z: cross_entropy(z, labels), rng.normal(size=(3, 4)))


# -- tape semantics ---------------------------------------------------------
def test_gradients_accumulate_over_shared_use():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, [5.0, 7.0])


def test_second_backward_on_consumed_tape_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * 2.0).sum()
    loss.backward()
    with pytest.raises(TapeError):
        loss.backward()


def test_backward_needs_scalar_and_grad_path():
    with pytest.raises(TapeError):
        (Tensor(np.ones(3), requires_grad=True) * 2.0).backward()
    with pytest.raises(TapeError):
        Tensor(np.ones(1)).sum().backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._node is None


def test_nan_producing_op_raises():
    with pytest.raises(NonFiniteError):
        log(Tensor(np.array([-1.0])))


def test_float32_mode_keeps_dtype(rng):
    with default_dtype("float32"):
        lin = Linear(4, 3, rng=rng)
        x = Tensor(rng.normal(size=(2, 4)))
        loss = cross_entropy(lin(x), [0, 1])
        loss.backward()
    assert lin.weight.data.dtype == np.float32 and lin.weight.grad.dtype == np.float32
    with pytest.raises(ValueError):
        with default_dtype("int32"):
            pass


# -- Adam -------------------------------------------------------------------
def test_adam_matches_hand_computed_steps():
    p = Parameter(np.array([1.0, -2.0]))
    state = AdamState([p], lr=0.1)
    grads = [np.array([0.5, -1.0]), np.array([0.2, 0.3])]
    m = v = np.zeros(2)
    expected = p.data.copy()
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected = expected - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        adam_step([p], [g], state)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array([0.0, 0.0]))
    adam_step([p], [np.array([3.0, -0.01])], AdamState([p], lr=0.01))
    np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-5)


def test_adam_zero_lr_leaves_params_and_rejects_nan():
    p = Parameter(np.array([1.0]))
    opt = Adam([("w", p)], lr=0.0)
    p.grad = np.array([5.0])
    opt.step()
    assert p.data[0] == 1.0
    p.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="w"):
        opt.step()


# -- FLOP convention ---------------------------------------------------------
def test_matmul_flop_convention():
    assert matmul_flops((2, 2), (2, 2)) == 16
    assert matmul_flops((3, 2, 4), (4, 5)) == 2 * 3 * 2 * 4 * 5


def test_trace_additivity_of_two_matmuls(rng):
    a, b, c = (Tensor(rng.normal(size=s)) for s in [(2, 3), (3, 4), (4, 5)])
    records = []
    with trace_ops(records):
        (a @ b) @ c
    assert trace_cost(records) == 2 * 2 * 3 * 4 + 2 * 2 * 4 * 5


def test_unknown_op_has_no_cost_convention():
    with pytest.raises(KeyError):
        op_cost("mystery", ((1,),), (1,))
