"""Autodiff primitives checked against central finite differences and
closed-form values."""

import numpy as np
import pytest

from asvkit.nn import tensor as T
from asvkit.nn.gradcheck import gradient_check
from asvkit.nn.tensor import Tensor


def fd_check(loss_fn, params, tol=1e-4):
    result = gradient_check(loss_fn, params, tol=tol)
    assert result.passed, (
        f"max rel error {result.max_rel_error:.3e} at {result.worst_param}"
    )


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# ----- backward mechanics ---------------------------------------------------


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_sum_gradient_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_quadratic_gradient_is_parameter():
    rng = np.random.default_rng(1)
    x = param(rng, 5)
    T.sum_(T.mul(x, x) * 0.5).backward()
    np.testing.assert_allclose(x.grad, x.data, rtol=0, atol=0)


def test_reused_tensor_accumulates_gradient():
    x = Tensor([2.0, 3.0], requires_grad=True)
    T.sum_(x + x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_constant_input_gets_no_gradient():
    x = Tensor([1.0, 2.0])
    y = Tensor([1.0, 2.0], requires_grad=True)
    T.sum_(x * y).backward()
    assert x.grad is None
    np.testing.assert_array_equal(y.grad, [1.0, 2.0])


def test_grad_accumulates_across_backward_calls():
    x = Tensor([1.0, 1.0], requires_grad=True)
    T.sum_(x * 3.0).backward()
    T.sum_(x * 3.0).backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


# ----- elementwise ops ------------------------------------------------------


def test_add_mul_sub_broadcast_gradients():
    rng = np.random.default_rng(2)
    a = param(rng, 3, 4)
    b = param(rng, 4)
    c = param(rng, 1)
    fd_check(lambda: T.sum_(T.mul(T.add(a, b), T.sub(a, c))), {"a": a, "b": b, "c": c})


def test_scalar_operand_broadcast():
    rng = np.random.default_rng(3)
    a = param(rng, 2, 3)
    T.sum_(a * 2.5).backward()
    np.testing.assert_allclose(a.grad, np.full((2, 3), 2.5))


@pytest.mark.parametrize("op", [T.tanh, T.sigmoid, T.exp])
def test_smooth_unary_gradients(op):
    rng = np.random.default_rng(4)
    x = param(rng, 3, 3)
    fd_check(lambda: T.sum_(T.mul(op(x), op(x))), {"x": x})


def test_log_gradient():
    rng = np.random.default_rng(5)
    x = Tensor(np.abs(rng.standard_normal((3, 3))) + 0.5, requires_grad=True)
    fd_check(lambda: T.sum_(T.log(x)), {"x": x})


def test_relu_gradient_away_from_kink():
    # keep inputs off zero so finite differences stay two-sided
    x = Tensor(np.array([-2.0, -0.5, 0.5, 3.0]), requires_grad=True)
    fd_check(lambda: T.sum_(T.mul(T.relu(x), T.relu(x))), {"x": x})
    assert x.grad is not None


def test_relu_forward_values():
    y = T.relu(Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])


# ----- matmul ---------------------------------------------------------------


def test_matmul_2d_gradients():
    rng = np.random.default_rng(6)
    a = param(rng, 3, 4)
    b = param(rng, 4, 2)
    fd_check(lambda: T.sum_(T.mul(T.matmul(a, b), T.matmul(a, b))), {"a": a, "b": b})


def test_matmul_batched_against_2d_weight():
    rng = np.random.default_rng(7)
    a = param(rng, 2, 3, 4)
    w = param(rng, 4, 2)
    fd_check(lambda: T.sum_(T.matmul(a, w)), {"a": a, "w": w})


def test_matmul_2d_weight_against_batched():
    rng = np.random.default_rng(8)
    w = param(rng, 2, 3)
    x = param(rng, 4, 3, 5)
    fd_check(lambda: T.sum_(T.matmul(w, x)), {"w": w, "x": x})


def test_matmul_rejects_vectors():
    with pytest.raises(ValueError):
        T.matmul(Tensor([1.0, 2.0]), Tensor([[1.0], [2.0]]))


# ----- reductions and shape ops ---------------------------------------------


def test_sum_axis_keepdims_gradients():
    rng = np.random.default_rng(9)
    x = param(rng, 2, 3, 4)
    fd_check(lambda: T.sum_(T.mul(T.sum_(x, axis=1, keepdims=True), 2.0)), {"x": x})
    fd_check(lambda: T.sum_(T.mul(T.sum_(x, axis=(0, 2)), T.sum_(x, axis=(0, 2)))),
             {"x": x})


def test_mean_gradient_uniform():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    T.mean(x).backward()
    np.testing.assert_allclose(x.grad, np.full((3, 4), 1.0 / 12.0))


def test_mean_axis_gradients():
    rng = np.random.default_rng(10)
    x = param(rng, 2, 3, 4)
    fd_check(lambda: T.sum_(T.mul(T.mean(x, axis=(1, 2)), T.mean(x, axis=(1, 2)))),
             {"x": x})


def test_reshape_transpose_swapaxes_gradients():
    rng = np.random.default_rng(11)
    x = param(rng, 2, 3, 4)

    def loss():
        y = T.reshape(x, (6, 4))
        z = T.transpose(y)
        return T.sum_(T.mul(T.swapaxes(x, 0, 2), T.swapaxes(x, 0, 2))) + T.sum_(z)

    fd_check(loss, {"x": x})


def test_getitem_slice_gradients():
    rng = np.random.default_rng(12)
    x = param(rng, 4, 6)
    fd_check(lambda: T.sum_(T.mul(x[1:3, ::2], x[1:3, ::2])), {"x": x})


def test_getitem_scatter_zero_elsewhere():
    x = Tensor(np.zeros((3, 3)), requires_grad=True)
    T.sum_(x[0]).backward()
    expected = np.zeros((3, 3))
    expected[0] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


def test_flip_time_roundtrip_and_gradient():
    rng = np.random.default_rng(13)
    x = param(rng, 2, 5, 3)
    y = T.flip_time(T.flip_time(x))
    np.testing.assert_array_equal(y.data, x.data)
    fd_check(lambda: T.sum_(T.mul(T.flip_time(x), x)), {"x": x})


def test_concat_and_stack_gradients():
    rng = np.random.default_rng(14)
    a = param(rng, 2, 3)
    b = param(rng, 2, 2)

    def loss_concat():
        y = T.concat([a, b], axis=1)
        return T.sum_(T.mul(y, y))

    fd_check(loss_concat, {"a": a, "b": b})

    c = param(rng, 2, 3)

    def loss_stack():
        y = T.stack([a, c], axis=0)
        return T.sum_(T.mul(y, y))

    fd_check(loss_stack, {"a": a, "c": c})


# ----- softmax and cross entropy --------------------------------------------


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(15)
    y = T.softmax(Tensor(rng.standard_normal((8, 5)) * 10.0))
    np.testing.assert_allclose(y.data.sum(axis=1), np.ones(8), atol=1e-12, rtol=0)


def test_softmax_stable_for_huge_logits():
    y = T.softmax(Tensor([[1000.0, 1000.5, 999.0]]))
    assert np.all(np.isfinite(y.data))
    np.testing.assert_allclose(y.data.sum(), 1.0, atol=1e-12, rtol=0)


def test_softmax_gradient():
    rng = np.random.default_rng(16)
    x = param(rng, 3, 4)
    w = Tensor(rng.standard_normal((3, 4)))
    fd_check(lambda: T.sum_(T.mul(T.softmax(x), w)), {"x": x})


def test_cross_entropy_equal_logits_is_log_k():
    for k in (2, 5, 7):
        loss = T.cross_entropy(Tensor(np.zeros((3, k))), np.array([0, 1, k - 1]))
        np.testing.assert_allclose(loss.data, np.log(k), atol=1e-12, rtol=0)


def test_cross_entropy_saturated_target_is_tiny():
    logits = np.zeros((1, 3))
    logits[0, 1] = 50.0
    loss = T.cross_entropy(Tensor(logits), [1])
    assert 0.0 <= float(loss.data) < 1e-20


def test_cross_entropy_gradient():
    rng = np.random.default_rng(17)
    x = param(rng, 4, 3)
    targets = np.array([0, 2, 1, 2])
    fd_check(lambda: T.cross_entropy(x, targets), {"x": x})


def test_cross_entropy_input_validation():
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 1, 2])
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [-1, 0])
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(np.zeros(3)), [0])


# ----- dropout ---------------------------------------------------------------


def test_dropout_rate_zero_is_identity():
    x = Tensor(np.ones((4, 4)), requires_grad=True)
    y = T.dropout(x, 0.0, np.random.default_rng(0), training=True)
    assert y is x


def test_dropout_eval_is_identity():
    x = Tensor(np.ones((4, 4)))
    y = T.dropout(x, 0.5, np.random.default_rng(0), training=False)
    assert y is x


def test_dropout_survivors_are_rescaled():
    x = Tensor(np.full((100, 100), 3.0))
    y = T.dropout(x, 0.25, np.random.default_rng(1), training=True)
    values = np.unique(y.data)
    np.testing.assert_allclose(values, [0.0, 3.0 / 0.75])
    kept = np.count_nonzero(y.data) / y.data.size
    assert 0.70 < kept < 0.80


def test_dropout_rejects_bad_rate():
    x = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        T.dropout(x, 1.0, np.random.default_rng(0), training=True)
    with pytest.raises(ValueError):
        T.dropout(x, -0.1, np.random.default_rng(0), training=True)


def test_dropout_gradient_through_frozen_mask():
    rng = np.random.default_rng(18)
    x = param(rng, 4, 4)
    # rebuilding the generator each call keeps the mask constant for FD
    fd_check(lambda: T.sum_(T.mul(
        T.dropout(x, 0.4, np.random.default_rng(99), training=True), x)), {"x": x})


# ----- convolution and pooling ----------------------------------------------


def test_conv2d_gradients_stride_one_no_bias():
    rng = np.random.default_rng(19)
    x = param(rng, 2, 2, 5, 5)
    w = param(rng, 3, 2, 3, 3)
    fd_check(lambda: T.sum_(T.mul(T.conv2d(x, w), T.conv2d(x, w))), {"x": x, "w": w})


def test_conv2d_gradients_with_bias():
    rng = np.random.default_rng(20)
    x = param(rng, 1, 2, 4, 4)
    w = param(rng, 2, 2, 1, 1)
    b = param(rng, 2)
    fd_check(lambda: T.sum_(T.conv2d(x, w, b, stride=2)), {"x": x, "w": w, "b": b})


def test_conv2d_validation():
    rng = np.random.default_rng(21)
    x = Tensor(rng.standard_normal((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(rng.standard_normal((2, 2, 2, 2))))  # even kernel
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(rng.standard_normal((2, 3, 3, 3))))  # channel mismatch
    with pytest.raises(ValueError):
        T.conv2d(Tensor(rng.standard_normal((2, 4, 4))), Tensor(rng.standard_normal((1, 2, 3, 3))))
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(rng.standard_normal((2, 2, 3, 3))), stride=0)


def test_maxpool_overlapping_stride_gradient():
    rng = np.random.default_rng(22)
    x = param(rng, 1, 2, 5, 5)
    fd_check(lambda: T.sum_(T.mul(T.maxpool2d(x, 2, stride=1),
                                  T.maxpool2d(x, 2, stride=1))), {"x": x})


def test_maxpool_forward_known_values():
    x = Tensor(np.array([[[[1.0, 2.0, 3.0, 4.0],
                           [5.0, 6.0, 7.0, 8.0],
                           [9.0, 10.0, 11.0, 12.0],
                           [13.0, 14.0, 15.0, 16.0]]]]))
    y = T.maxpool2d(x, 2)
    np.testing.assert_array_equal(y.data, [[[[6.0, 8.0], [14.0, 16.0]]]])


def test_maxpool_validation():
    with pytest.raises(ValueError):
        T.maxpool2d(Tensor(np.zeros((1, 1, 1, 1))), 2)
    with pytest.raises(ValueError):
        T.maxpool2d(Tensor(np.zeros((2, 2))), 2)


def test_maxpool_routes_gradient_to_argmax():
    x = Tensor(np.array([[[[1.0, 5.0], [2.0, 3.0]]]]), requires_grad=True)
    T.sum_(T.maxpool2d(x, 2)).backward()
    np.testing.assert_array_equal(x.grad, [[[[0.0, 1.0], [0.0, 0.0]]]])


# ----- fused LSTM input gradient --------------------------------------------


def test_lstm_sequence_input_gradient():
    rng = np.random.default_rng(23)
    hidden, inp = 3, 2
    weights = [param(rng, hidden, hidden + inp) for _ in range(4)]
    biases = [param(rng, hidden) for _ in range(4)]
    x = param(rng, 2, 4, inp)

    def loss():
        y = T.lstm_sequence(x, *weights, *biases)
        return T.sum_(T.mul(y, y))

    fd_check(loss, {"x": x})


def test_lstm_sequence_shape_validation():
    rng = np.random.default_rng(24)
    w = [Tensor(rng.standard_normal((3, 5))) for _ in range(4)]
    b = [Tensor(rng.standard_normal(3)) for _ in range(4)]
    with pytest.raises(ValueError):
        T.lstm_sequence(Tensor(rng.standard_normal((4, 2))), *w, *b)
    bad_w = list(w)
    bad_w[1] = Tensor(rng.standard_normal((3, 4)))
    with pytest.raises(ValueError):
        T.lstm_sequence(Tensor(rng.standard_normal((1, 4, 2))), *bad_w, *b)
