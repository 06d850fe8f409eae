"""Tests for the autodiff core: op values, tape mechanics, gradients vs
central finite differences, and the masked-softmax sentinel contract."""
import math

import numpy as np
import pytest

import derain_ddsa.tensor as T
from fd_oracle import check_grads as _check_grads, weighted_sum as _weighted_sum


# ---------------------------------------------------------------------------
# values
# ---------------------------------------------------------------------------

def test_tensor_is_float64_contiguous():
    t = T.Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    assert t.data.flags.c_contiguous
    assert t.shape == (2, 2) and t.ndim == 2 and t.size == 4


def test_matmul_known_result():
    a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = T.Tensor([[5.0, 6.0], [7.0, 8.0]])
    out = T.matmul(a, b)
    assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_inner_dim_mismatch_names_both_shapes():
    a = T.Tensor(np.zeros((2, 3)))
    b = T.Tensor(np.zeros((4, 2)))
    with pytest.raises(T.ShapeError) as exc:
        T.matmul(a, b)
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_elementwise_shape_mismatch_names_both_shapes():
    with pytest.raises(T.ShapeError) as exc:
        T.add(T.Tensor(np.zeros(3)), T.Tensor(np.zeros(4)))
    assert "(3,)" in str(exc.value) and "(4,)" in str(exc.value)


def test_operator_sugar_matches_ops():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 5))
    ta, tb = T.Tensor(a), T.Tensor(b)
    assert np.array_equal((ta + tb).data, a + b)
    assert np.array_equal((ta - tb).data, a - b)
    assert np.array_equal((ta * tb).data, a * b)
    assert np.array_equal((ta * 2.5).data, a * 2.5)
    assert np.array_equal((ta + 1.5).data, a + 1.5)
    assert np.array_equal((-ta).data, -a)
    assert np.array_equal((ta ** 2).data, a ** 2)


# ---------------------------------------------------------------------------
# masked softmax
# ---------------------------------------------------------------------------

def test_softmax_masked_row_example():
    x = T.Tensor([[1.0, T.MASKED, 0.0]])
    p = T.softmax_rows(x).data[0]
    e = math.e
    assert abs(p[0] - e / (e + 1.0)) < 1e-12
    assert p[1] == 0.0
    assert abs(p[2] - 1.0 / (e + 1.0)) < 1e-12


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 6, 9)) * 5.0
    # mask a few entries per row, never a whole row
    mask = rng.random(x.shape) < 0.3
    mask[..., 0] = False
    x[mask] = T.MASKED
    p = T.softmax_rows(T.Tensor(x)).data
    assert np.all(np.abs(p.sum(axis=-1) - 1.0) < 1e-12)
    assert np.all(p[mask] == 0.0)
    assert np.all(p >= 0.0)


def test_softmax_fully_masked_row_raises():
    x = np.zeros((2, 3))
    x[1, :] = T.MASKED
    with pytest.raises(ValueError):
        T.softmax_rows(T.Tensor(x))


def test_softmax_shift_invariance():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 8))
    a = T.softmax_rows(T.Tensor(x)).data
    b = T.softmax_rows(T.Tensor(x + 3.7)).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_softmax_stable_for_large_logits():
    x = T.Tensor([[1000.0, 999.0, T.MASKED], [-1000.0, -1001.0, -999.0]])
    p = T.softmax_rows(x).data
    assert np.all(np.isfinite(p))
    assert np.all(np.abs(p.sum(axis=-1) - 1.0) < 1e-12)


def test_softmax_gradient_ignores_masked_entries():
    x = np.array([[0.3, T.MASKED, -0.7, 1.1]])
    leaf = T.Tensor(x, requires_grad=True)
    with T.Tape():
        loss = _weighted_sum(T.softmax_rows(leaf))
        T.backward(loss)
    assert leaf.grad[0, 1] == 0.0

    def build(t):
        return _weighted_sum(T.softmax_rows(t))

    _check_grads(build, [x])


# ---------------------------------------------------------------------------
# tape mechanics
# ---------------------------------------------------------------------------

def test_sum_of_squares_gradient():
    x = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with T.Tape():
        loss = T.reduce_sum(T.power(x, 2.0))
        T.backward(loss)
    assert np.allclose(x.grad, [2.0, 4.0, 6.0], rtol=0, atol=1e-12)


def test_backward_requires_scalar():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape():
        y = T.scale(x, 2.0)
        with pytest.raises(T.ShapeError):
            T.backward(y)


def test_backward_twice_raises_until_reset():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    tape = T.Tape()
    with tape:
        loss = T.reduce_sum(x)
        T.backward(loss)
        with pytest.raises(T.TapeError):
            T.backward(loss)
    tape.reset()
    x.grad = None
    with tape:
        loss = T.reduce_sum(T.scale(x, 3.0))
        T.backward(loss)
    assert np.allclose(x.grad, [3.0, 3.0])


def test_backward_on_unrecorded_value_raises():
    x = T.Tensor([1.0], requires_grad=True)
    y = T.reduce_sum(x)  # no tape active -> not recorded
    with pytest.raises(T.TapeError):
        T.backward(y)


def test_no_grad_blocks_recording():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape() as tape:
        with T.no_grad():
            y = T.reduce_sum(T.power(x, 2.0))
        assert not y.requires_grad
        assert tape.nodes == []


def test_gradients_accumulate_across_reuse():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape():
        loss = T.reduce_sum(T.add(x, x))
        T.backward(loss)
    assert np.allclose(x.grad, [2.0, 2.0])


def test_op_outputs_are_read_only():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    y = T.scale(x, 2.0)
    with pytest.raises(ValueError):
        y.data[0] = 99.0
    # leaves stay writable for in-place optimizer updates
    x.data[0] = 5.0
    assert x.data[0] == 5.0


def test_grad_shapes_match_values_everywhere():
    rng = np.random.default_rng(3)
    a = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = T.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    with T.Tape() as tape:
        h = T.matmul(a, b)
        loss = T.reduce_sum(T.power(h, 2.0))
        T.backward(loss, free_memory=False)   # keep the graph to inspect it
    assert tape.nodes                          # retained for inspection
    for node in tape.nodes:
        if node.out.grad is not None:
            assert node.out.grad.shape == node.out.data.shape
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_backward_tears_down_the_graph_by_default():
    x = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with T.Tape() as tape:
        h = T.exp(x)
        loss = T.reduce_sum(h)
        T.backward(loss)
    assert tape.nodes == []                    # node links released
    assert h.grad is None                      # intermediate grads dropped
    assert np.allclose(x.grad, np.exp(x.data))  # leaf grads kept


def test_backward_release_breaks_reference_cycles():
    # without the teardown, tape -> node -> tensor -> tape cycles keep every
    # activation alive until the cyclic collector happens to run
    import weakref

    x = T.Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape():
        h = T.exp(x)
        T.backward(T.reduce_sum(h))
    ref = weakref.ref(h)
    del h
    assert ref() is None                       # refcount alone freed it


def test_consumed_flag_survives_the_teardown():
    x = T.Tensor([1.0], requires_grad=True)
    with T.Tape():
        loss = T.reduce_sum(T.exp(x))
        T.backward(loss)
        with pytest.raises(T.TapeError):
            T.backward(loss)


def test_debug_checks_catch_nonfinite_forward():
    with np.errstate(over="ignore"):
        x = T.Tensor([1000.0])
        with T.debug_checks(True):
            with pytest.raises(FloatingPointError):
                T.exp(x)
        # same computation passes with checks off
        out = T.exp(x)
        assert np.isinf(out.data[0])


def test_masked_sentinel_is_finite():
    assert np.isfinite(T.MASKED)
    with T.debug_checks(True):
        T.Tensor([T.MASKED])  # must not trip finiteness assertions
        p = T.softmax_rows(T.Tensor([[0.0, T.MASKED]]))
    assert p.data[0, 1] == 0.0


# ---------------------------------------------------------------------------
# gradients of every op vs finite differences
# ---------------------------------------------------------------------------

def test_fd_add_sub_mul():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    _check_grads(lambda x, y: _weighted_sum(T.add(x, y)), [a, b])
    _check_grads(lambda x, y: _weighted_sum(T.sub(x, y)), [a, b])
    _check_grads(lambda x, y: _weighted_sum(T.mul(x, y)), [a, b])


def test_fd_scalar_ops():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((2, 5))
    s = np.array(0.8)
    _check_grads(lambda x: _weighted_sum(T.scale(x, -1.3)), [a])
    _check_grads(lambda x: _weighted_sum(T.add_scalar(x, 2.0)), [a])
    _check_grads(lambda x, g: _weighted_sum(T.scale_by(x, g)), [a, s])


def test_fd_matmul_batched():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((2, 4, 5))
    _check_grads(lambda x, y: _weighted_sum(T.matmul(x, y)), [a, b])
    # broadcast over the leading batch axis
    c = rng.standard_normal((4, 5))
    _check_grads(lambda x, y: _weighted_sum(T.matmul(x, y)), [a, c])


def test_fd_shape_ops():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((2, 3, 4))
    _check_grads(lambda x: _weighted_sum(T.transpose(x, (2, 0, 1))), [a])
    _check_grads(lambda x: _weighted_sum(T.reshape(x, (6, 4))), [a])


def test_fd_concat_split():
    rng = np.random.default_rng(14)
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 5))

    def build_cat(x, y):
        return _weighted_sum(T.concat([x, y], axis=1))

    _check_grads(build_cat, [a, b])

    c = rng.standard_normal((4, 6))

    def build_split(x):
        p0, p1, p2 = T.split(x, 3, axis=1)
        return T.add(_weighted_sum(p0, 1), T.add(_weighted_sum(p1, 2), _weighted_sum(p2, 3)))

    _check_grads(build_split, [c])


def test_split_concat_roundtrip_values():
    rng = np.random.default_rng(15)
    a = rng.standard_normal((2, 6, 3))
    parts = T.split(T.Tensor(a), 3, axis=1)
    assert [p.shape for p in parts] == [(2, 2, 3)] * 3
    back = T.concat(parts, axis=1)
    assert np.array_equal(back.data, a)


def test_fd_reductions():
    rng = np.random.default_rng(16)
    a = rng.standard_normal((3, 4, 5))
    _check_grads(lambda x: _weighted_sum(T.reduce_sum(x, axis=1)), [a])
    _check_grads(lambda x: _weighted_sum(T.reduce_mean(x, axis=(0, 2))), [a])
    _check_grads(lambda x: T.reduce_sum(x), [a])
    _check_grads(lambda x: T.reduce_mean(x), [a])
    _check_grads(lambda x: _weighted_sum(T.reduce_sum(x, axis=2, keepdims=True)), [a])


def test_fd_reduce_max_away_from_ties():
    rng = np.random.default_rng(17)
    a = rng.permutation(60).astype(np.float64).reshape(3, 4, 5) * 0.1
    _check_grads(lambda x: _weighted_sum(T.reduce_max(x, axis=-1)), [a])
    _check_grads(lambda x: T.reduce_max(x), [a])


def test_fd_pointwise_nonlinear():
    rng = np.random.default_rng(18)
    a = rng.uniform(0.5, 2.0, (3, 4))       # positive, away from kinks
    b = rng.standard_normal((3, 4)) + 0.1 * np.sign(rng.standard_normal((3, 4)))
    b[np.abs(b) < 0.05] = 0.5               # keep |.| away from zero
    _check_grads(lambda x: _weighted_sum(T.exp(x)), [a])
    _check_grads(lambda x: _weighted_sum(T.log(x)), [a])
    _check_grads(lambda x: _weighted_sum(T.power(x, 3.0)), [a])
    _check_grads(lambda x: _weighted_sum(T.absolute(x)), [b])


def test_fd_softmax_dense():
    rng = np.random.default_rng(19)
    a = rng.standard_normal((2, 3, 6)) * 2.0
    _check_grads(lambda x: _weighted_sum(T.softmax_rows(x)), [a])


def test_fd_composite_chain():
    rng = np.random.default_rng(20)
    a = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 4))

    def build(x, wm):
        h = T.matmul(x, wm)
        h = T.softmax_rows(h)
        h = T.mul(h, h)
        return T.reduce_sum(T.log(T.add_scalar(h, 1.0)))

    _check_grads(build, [a, w])
