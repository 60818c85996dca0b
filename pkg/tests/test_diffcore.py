from __future__ import annotations

import numpy as np
import pytest

from src.diffcore import ops
from src.diffcore.gradcheck import finite_difference_check
from src.diffcore.graph import Graph, backward
from src.diffcore.ops import BatchNormState
from src.errors import ContractError, DimensionError, ParameterError, ReceptiveFieldError


def weighted_sum(node, weights):
    """Scalar probe with non-uniform weights so no gradient is trivially zero."""
    return ops.sum(node * weights)


# ---------- forward values ----------

def test_matmul_hand_values():
    g = Graph()
    out = ops.matmul_batched(g.constant([[1.0, 2.0], [3.0, 4.0]]), g.constant([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.value, [[17.0], [39.0]])


def test_matmul_identity_and_batch_shapes(rng):
    g = Graph()
    m = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(ops.matmul_batched(g.constant(np.eye(3)), g.constant(m)).value, m)
    out = ops.matmul_batched(g.constant(rng.normal(size=(2, 3, 4))), g.constant(rng.normal(size=(2, 4, 5))))
    assert out.shape == (2, 3, 5)


def test_matmul_mismatch_names_shapes():
    g = Graph()
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ops.matmul_batched(g.constant(np.zeros((2, 3))), g.constant(np.zeros((2, 3))))


@pytest.mark.parametrize("length,k,d", [(12, 2, 2), (12, 2, 1), (9, 3, 4), (5, 1, 7), (13, 2, 6)])
def test_conv_output_length(length, k, d):
    g = Graph()
    out = ops.conv1d_dilated(g.constant(np.ones((1, 2, 3, length))), g.constant(np.ones((4, 2, 1, k))), d)
    assert out.shape == (1, 4, 3, length - d * (k - 1))


def test_conv_shift_kernel_returns_last_entries(rng):
    g = Graph()
    x = rng.normal(size=(2, 1, 3, 12))
    w = np.array([0.0, 1.0]).reshape(1, 1, 1, 2)
    out = ops.conv1d_dilated(g.constant(x), g.constant(w), 2)
    assert out.shape[-1] == 10
    np.testing.assert_array_equal(out.value, x[..., 2:])


def test_conv_too_short_reports_minimum():
    g = Graph()
    with pytest.raises(ReceptiveFieldError) as err:
        ops.conv1d_dilated(g.constant(np.ones((1, 1, 1, 3))), g.constant(np.ones((1, 1, 1, 2))), 4)
    assert err.value.required == 5


def test_softmax_values_and_invariants(rng):
    g = Graph()
    out = ops.softmax_temperature(g.constant([np.log(2.0), 0.0]), 1.0)
    np.testing.assert_allclose(out.value, [2 / 3, 1 / 3], atol=1e-15)

    flat = ops.softmax_temperature(g.constant(np.full(5, 3.3)), 0.7)
    np.testing.assert_allclose(flat.value, np.full(5, 0.2), atol=1e-15)

    x = rng.normal(size=(4, 6)) * 10
    a = ops.softmax_temperature(g.constant(x), 0.5, axis=-1).value
    b = ops.softmax_temperature(g.constant(x + 123.4), 0.5, axis=-1).value
    assert (a >= 0).all()
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_nonpositive_tau(tau):
    g = Graph()
    with pytest.raises(ParameterError):
        ops.softmax_temperature(g.constant([1.0, 2.0]), tau)


def test_activation_points():
    g = Graph()
    x = g.leaf(np.array([0.0]), name="x")
    assert ops.mish(x).value[0] == 0.0
    s = ops.sigmoid(x)
    assert s.value[0] == 0.5
    grads = backward(g, ops.sum(s))
    assert grads["x"][0] == pytest.approx(0.25)
    assert ops.mish(g.constant([1.0])).value[0] == pytest.approx(0.86509839, abs=1e-8)


def test_activation_large_inputs_stay_finite():
    g = Graph()
    out = ops.mish(g.constant([1e3, -1e3, 40.0]))
    assert np.all(np.isfinite(out.value))
    assert out.value[0] == 1e3


def test_activation_unknown_kind():
    g = Graph()
    with pytest.raises(ParameterError):
        ops.activation(g.constant([1.0]), "gelu")


# ---------- batch norm ----------

def test_batch_norm_constant_input_is_zero():
    g = Graph()
    state = BatchNormState.fresh(2)
    out = ops.batch_norm(g.constant(np.full((2, 2, 3, 4), 7.0)), np.ones(2), np.zeros(2), state)
    np.testing.assert_array_equal(out.value, 0.0)


def test_batch_norm_train_statistics(rng):
    g = Graph()
    x = rng.normal(3.0, 2.0, size=(4, 3, 5, 6))
    gamma, beta = np.array([1.0, 2.0, 0.5]), np.array([0.0, -1.0, 4.0])
    out = ops.batch_norm(g.constant(x), gamma, beta, BatchNormState.fresh(3), mode="train").value
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), beta, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), gamma, rtol=1e-4)


def test_batch_norm_running_update_two_steps(rng):
    state = BatchNormState.fresh(1, momentum=0.1)
    x1 = rng.normal(size=(2, 1, 2, 3))
    x2 = rng.normal(size=(2, 1, 2, 3))
    for x in (x1, x2):
        g = Graph()
        ops.batch_norm(g.constant(x), np.ones(1), np.zeros(1), state, mode="train")
    m1, m2 = x1.mean(), x2.mean()
    expected_mean = 0.9 * (0.9 * 0.0 + 0.1 * m1) + 0.1 * m2
    v1, v2 = x1.var(ddof=1), x2.var(ddof=1)
    expected_var = 0.9 * (0.9 * 1.0 + 0.1 * v1) + 0.1 * v2
    assert state.running_mean[0] == pytest.approx(expected_mean, abs=1e-14)
    assert state.running_var[0] == pytest.approx(expected_var, abs=1e-14)


def test_batch_norm_eval_leaves_state_alone(rng):
    state = BatchNormState.fresh(2)
    g = Graph()
    ops.batch_norm(g.constant(rng.normal(size=(2, 2, 2, 2))), np.ones(2), np.zeros(2), state, mode="eval")
    np.testing.assert_array_equal(state.running_mean, 0.0)
    np.testing.assert_array_equal(state.running_var, 1.0)


# ---------- backward ----------

def test_backward_sum_and_sigmoid():
    g = Graph()
    x = g.leaf(np.zeros((2, 3)), name="x")
    np.testing.assert_array_equal(backward(g, ops.sum(x))["x"], np.ones((2, 3)))
    g = Graph()
    x = g.leaf(np.zeros((2, 3)), name="x")
    np.testing.assert_allclose(backward(g, ops.sum(ops.sigmoid(x)))["x"], 0.25)


def test_backward_requires_scalar():
    g = Graph()
    x = g.leaf(np.ones(3), name="x")
    with pytest.raises(ContractError):
        backward(g, x * 2.0)


def test_fan_out_accumulates(rng):
    x0 = rng.normal(size=(3,))
    g = Graph()
    x = g.leaf(x0, name="x")
    loss = ops.sum(x * x) + ops.sum(x * 3.0)
    grad = backward(g, loss)["x"]
    np.testing.assert_allclose(grad, 2 * x0 + 3.0, atol=1e-14)


def test_backward_is_deterministic(rng):
    x0 = rng.normal(size=(3, 3))
    w = rng.normal(size=(3, 3))

    def run():
        g = Graph()
        x = g.leaf(x0, name="x")
        out = ops.sum(ops.mish(ops.matmul_batched(x, w)))
        return out.value.copy(), backward(g, out)["x"]

    (v1, g1), (v2, g2) = run(), run()
    assert v1.tobytes() == v2.tobytes()
    assert g1.tobytes() == g2.tobytes()


# ---------- finite-difference oracle ----------

def test_quadratic_and_constant(rng):
    x0 = rng.normal(size=(4,))
    assert finite_difference_check(lambda g, x: ops.sum(x * x), x0) < 1e-6
    assert finite_difference_check(lambda g, x: ops.sum(x * 0.0) + 5.0, x0) == 0.0


GRAD_CASES = {
    "matmul_mish": lambda w: (lambda g, x: weighted_sum(ops.mish(ops.matmul_batched(x, w[0])), w[1])),
    "tanh": lambda w: (lambda g, x: weighted_sum(ops.tanh(x), w[1])),
    "sigmoid": lambda w: (lambda g, x: weighted_sum(ops.sigmoid(x), w[1])),
    "softmax": lambda w: (lambda g, x: weighted_sum(ops.softmax_temperature(x, 0.7, axis=-1), w[1])),
    "div": lambda w: (lambda g, x: weighted_sum(x / (w[0] * w[0] + 1.0), w[1])),
    "transpose_reshape": lambda w: (lambda g, x: weighted_sum(ops.reshape(ops.transpose(x, (1, 0)), (3, 3)), w[1])),
    "mean_abs": lambda w: (lambda g, x: ops.mean_abs_error(x, w[0] + 10.0)),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_op_gradients(name, rng):
    weights = (rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    f = GRAD_CASES[name](weights)
    assert finite_difference_check(f, rng.normal(size=(3, 3))) < 1e-4


def test_relu_gradient_away_from_kink(rng):
    x0 = rng.uniform(0.5, 2.0, size=(3, 3)) * rng.choice([-1.0, 1.0], size=(3, 3))
    w = rng.normal(size=(3, 3))
    assert finite_difference_check(lambda g, x: weighted_sum(ops.relu(x), w), x0) < 1e-4


def test_conv_gradients(rng):
    w0 = rng.normal(size=(2, 3, 1, 2))
    x0 = rng.normal(size=(2, 3, 2, 7))
    probe = rng.normal(size=(2, 2, 2, 5))
    assert finite_difference_check(lambda g, x: weighted_sum(ops.conv1d_dilated(x, w0, 2), probe), x0) < 1e-4
    assert finite_difference_check(lambda g, w: weighted_sum(ops.conv1d_dilated(x0, w, 2), probe), w0) < 1e-4


def test_linear_channels_gradients(rng):
    w0 = rng.normal(size=(5, 3))
    b0 = rng.normal(size=(5,))
    x0 = rng.normal(size=(2, 3, 4, 2))
    probe = rng.normal(size=(2, 5, 4, 2))
    assert finite_difference_check(lambda g, x: weighted_sum(ops.linear_channels(x, w0, b0), probe), x0) < 1e-4
    assert finite_difference_check(lambda g, w: weighted_sum(ops.linear_channels(x0, w, b0), probe), w0) < 1e-4
    assert finite_difference_check(lambda g, b: weighted_sum(ops.linear_channels(x0, w0, b), probe), b0) < 1e-4


def test_batch_norm_train_gradient(rng):
    x0 = rng.normal(size=(2, 2, 3, 2))
    probe = rng.normal(size=x0.shape)
    gamma, beta = np.array([1.3, 0.7]), np.array([0.1, -0.2])

    def f(g, x):
        return weighted_sum(ops.batch_norm(x, gamma, beta, BatchNormState.fresh(2), mode="train"), probe)

    assert finite_difference_check(f, x0) < 1e-4


def test_concat_slice_pad_gradients(rng):
    x0 = rng.normal(size=(1, 2, 2, 3))
    probe = rng.normal(size=(1, 4, 2, 4))

    def f(g, x):
        padded = ops.pad_left(x, 2)
        both = ops.concat([padded, ops.pad_left(ops.slice_axis(x, 3, 1), 3)], axis=1)
        return weighted_sum(ops.slice_axis(both, 3, 1), probe)

    assert finite_difference_check(f, x0) < 1e-4
