import numpy as np
import pytest

from floodnet.autodiff import ContractError, Graph, ShapeError
from floodnet.layers import batch_norm, layer_norm, register_bn
from floodnet.params import ParamStore

from oracles import (
    conv2d_loops,
    dft2_magnitude_quadratic,
    matmul_loops,
    maxpool2_scan,
    softmax_rows,
)


def rel_close(a, b, tol):
    denom = max(np.abs(b).max(), 1.0)
    return np.abs(a - b).max() / denom <= tol


# ---- matmul ----------------------------------------------------------


def test_matmul_identity():
    g = Graph()
    out = g.matmul(g.constant(np.eye(2)), g.constant([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.value, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_hand_arithmetic():
    g = Graph()
    out = g.matmul(g.constant([[1.0, 2.0], [3.0, 4.0]]), g.constant([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.value, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    g = Graph()
    out = g.matmul(g.constant(a), g.constant(b))
    assert rel_close(out.value, matmul_loops(a, b), 1e-12)


def test_matmul_rejects_bad_shapes():
    g = Graph()
    with pytest.raises(ShapeError):
        g.matmul(g.constant(np.ones((2, 3))), g.constant(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        g.matmul(g.constant(np.ones(3)), g.constant(np.ones((3, 2))))


# ---- conv2d ----------------------------------------------------------


def test_conv2d_zero_kernel():
    g = Graph()
    rng = np.random.default_rng(1)
    out = g.conv2d(g.constant(rng.standard_normal((5, 5, 3))), g.constant(np.zeros((3, 3, 3, 2))))
    np.testing.assert_array_equal(out.value, np.zeros((5, 5, 2)))


def test_conv2d_identity_mixing():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 4, 3))
    kernel = np.eye(3).reshape(1, 1, 3, 3)
    g = Graph()
    out = g.conv2d(g.constant(x), g.constant(kernel))
    np.testing.assert_allclose(out.value, x, atol=1e-15)


def test_conv2d_matches_nested_loop_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 6, 4))
    kernel = rng.standard_normal((3, 3, 2, 4))
    g = Graph()
    out = g.conv2d(g.constant(x), g.constant(kernel), groups=2)
    assert rel_close(out.value, conv2d_loops(x, kernel, groups=2), 1e-12)


# ---- fft magnitude ---------------------------------------------------


def test_fft_magnitude_constant_image():
    c = 0.7
    g = Graph()
    out = g.fft2d_magnitude(g.constant(np.full((4, 4, 1), c)))
    expected = np.zeros((4, 4, 1))
    expected[0, 0, 0] = 16 * c
    np.testing.assert_allclose(out.value, expected, atol=1e-12)


def test_fft_magnitude_unit_impulse():
    x = np.zeros((4, 4, 1))
    x[0, 0, 0] = 1.0
    g = Graph()
    out = g.fft2d_magnitude(g.constant(x))
    np.testing.assert_allclose(out.value, np.ones((4, 4, 1)), atol=1e-12)


def test_fft_magnitude_matches_quadratic_dft_oracle():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 7, 2))
    g = Graph()
    out = g.fft2d_magnitude(g.constant(x))
    assert np.abs(out.value - dft2_magnitude_quadratic(x)).max() < 1e-9


# ---- softmax / sigmoid ----------------------------------------------


def test_softmax_symmetry():
    g = Graph()
    out = g.softmax_last(g.constant([0.0, 0.0]))
    np.testing.assert_allclose(out.value, [0.5, 0.5], atol=1e-15)


def test_sigmoid_midpoint():
    g = Graph()
    assert g.sigmoid(g.constant([0.0])).value[0] == 0.5


def test_softmax_shift_invariance():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 6))
    g = Graph()
    a = g.softmax_last(g.constant(x)).value
    b = g.softmax_last(g.constant(x + 100.0)).value
    assert np.abs(a - b).max() < 1e-12
    np.testing.assert_allclose(a, softmax_rows(x), atol=1e-12)


# ---- layer norm ------------------------------------------------------


def test_layer_norm_zero_and_constant_inputs():
    g = Graph()
    np.testing.assert_array_equal(layer_norm(g, g.constant(np.zeros(4))).value, np.zeros(4))
    np.testing.assert_allclose(layer_norm(g, g.constant(np.ones(4))).value, np.zeros(4), atol=1e-12)


def test_layer_norm_standardizes():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(32) * 3.0 + 1.5
    g = Graph()
    out = layer_norm(g, g.constant(x)).value
    assert abs(out.mean()) < 1e-10
    assert abs(out.var() - 1.0) < 1e-3


# ---- batch norm ------------------------------------------------------


def test_batch_norm_constant_channel_is_zero_pre_affine():
    store = ParamStore(0)
    g = Graph()
    out = batch_norm(g, g.constant(np.full((3, 3, 2), 5.0)), store, "bn", train=True)
    np.testing.assert_allclose(out.value, np.zeros((3, 3, 2)), atol=1e-12)


def test_batch_norm_fixed_point():
    # variance exactly 1 - eps makes sqrt(var + eps) == 1, so a zero-mean
    # input passes through untouched
    eps = 1e-5
    base = np.array([-1.0, 1.0])
    x = (base * np.sqrt(1.0 - eps))[:, None, None] * np.ones((2, 2, 3))
    store = ParamStore(0)
    g = Graph()
    out = batch_norm(g, g.constant(x), store, "bn", train=True)
    assert np.abs(out.value - x).max() < 1e-6


def test_batch_norm_matches_statistics_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 5, 3)) * 2.0 + 0.3
    store = ParamStore(0)
    g = Graph()
    out = batch_norm(g, g.constant(x), store, "bn", train=True).value
    mu = x.mean(axis=(0, 1))
    var = x.var(axis=(0, 1))
    expected = (x - mu) / np.sqrt(var + 1e-5)
    assert np.abs(out - expected).max() < 1e-6
    # running buffers fold the batch statistics at momentum 0.9
    np.testing.assert_allclose(store.buffers["bn.running_mean"], 0.1 * mu, atol=1e-12)
    np.testing.assert_allclose(store.buffers["bn.running_var"], 0.9 + 0.1 * var, atol=1e-12)


def test_batch_norm_eval_uses_buffers():
    store = ParamStore(0)
    register_bn(store, "bn", 2)
    store.buffers["bn.running_mean"] = np.array([1.0, -1.0])
    store.buffers["bn.running_var"] = np.array([4.0, 9.0])
    x = np.ones((2, 2, 2))
    g = Graph()
    out = batch_norm(g, g.constant(x), store, "bn", train=False).value
    expected = (x - np.array([1.0, -1.0])) / np.sqrt(np.array([4.0, 9.0]) + 1e-5)
    np.testing.assert_allclose(out, expected, atol=1e-12)


# ---- pooling / resampling -------------------------------------------


def test_global_avg_pool_constant():
    from floodnet.layers import global_avg_pool

    g = Graph()
    out = global_avg_pool(g, g.constant(np.full((5, 4, 3), 2.5)))
    np.testing.assert_allclose(out.value, np.full((1, 1, 3), 2.5), atol=1e-15)


def test_maxpool_hand_case():
    g = Graph()
    out = g.maxpool2(g.constant(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)))
    assert out.value.reshape(()) == 4.0


def test_maxpool_matches_window_scan():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((8, 8, 3))
    g = Graph()
    np.testing.assert_array_equal(g.maxpool2(g.constant(x)).value, maxpool2_scan(x))


def test_maxpool_odd_extent_edge_replication():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((5, 7, 2))
    g = Graph()
    np.testing.assert_array_equal(g.maxpool2(g.constant(x)).value, maxpool2_scan(x))


def test_upsample_replicates_single_value():
    g = Graph()
    out = g.upsample2(g.constant(np.full((1, 1, 1), 3.0)))
    np.testing.assert_array_equal(out.value, np.full((2, 2, 1), 3.0))


def test_upsample_gradient_counts_replicas():
    g = Graph()
    x = g.constant(np.zeros((2, 2, 1)))
    loss = g.reduce_sum(g.upsample2(x))
    g.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full((2, 2, 1), 4.0))


def test_upsample_avgpool_round_trip():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((3, 4, 2))
    g = Graph()
    up = g.upsample2(g.constant(x)).value
    back = up.reshape(3, 2, 4, 2, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(back, x, atol=1e-15)


# ---- backward --------------------------------------------------------


def test_backward_linear_loss():
    store = ParamStore(0)
    store.add("w", (3, 4))
    g = Graph()
    loss = g.reduce_sum(g.param(store, "w"))
    g.backward(loss)
    np.testing.assert_array_equal(store.entries["w"].grad, np.ones((3, 4)))


def test_backward_quadratic_loss():
    store = ParamStore(0)
    store.add("w", (3, 4))
    g = Graph()
    w = g.param(store, "w")
    loss = g.scale(g.reduce_sum(g.mul(w, w)), 0.5)
    g.backward(loss)
    np.testing.assert_allclose(store.entries["w"].grad, store.entries["w"].value, atol=1e-15)


def test_backward_rejects_non_scalar():
    g = Graph()
    with pytest.raises(ContractError):
        g.backward(g.constant(np.ones(3)))


def test_composite_forward_matches_finite_differences():
    from floodnet.gradcheck import check_gradients

    store = ParamStore(11)
    store.add("a", (3, 3))
    store.add("b", (3, 2))

    def build(g):
        h = g.tanh(g.matmul(g.param(store, "a"), g.param(store, "b")))
        s = g.sigmoid(g.reduce_sum(g.mul(h, h)))
        return g.log(g.shift(s, 0.5))

    _, max_err = check_gradients(build, store, n_coords=25, seed=1)
    assert max_err <= 1e-4


def test_gradcheck_negative_control():
    # a param used through a value-only detour hides part of the gradient,
    # so the finite-difference check must fail
    from floodnet.gradcheck import check_gradients

    store = ParamStore(12)
    store.add("w", (4,))

    def build(g):
        w = g.param(store, "w")
        # wrong on purpose: constant copy breaks the w^2 gradient path
        frozen = g.constant(store.entries["w"].value)
        return g.reduce_sum(g.add(w, g.mul(frozen, frozen)))

    with pytest.raises(AssertionError):
        check_gradients(build, store, n_coords=20, seed=2)
