import numpy as np
import pytest
from scipy import ndimage

from tomopr.nn._kernels import conv3d_batch, conv3d_input_grad, conv3d_weight_grad
from tomopr.nn.layers import (
    BatchNormParams,
    batch_norm,
    batch_norm_backward,
    batch_norm_inference,
    batch_norm_train,
    conv3d,
    relu,
    relu_grad,
    sigmoid,
    sigmoid_grad,
)
from tomopr.runtime import set_threads


def conv_oracle(x, kernel):
    # literal quintuple-sum definition, channels-last
    nx, ny, nz, qi = x.shape
    qo = kernel.shape[4]
    xp = np.pad(x, ((1, 1), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((nx, ny, nz, qo))
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                for o in range(qo):
                    s = 0.0
                    for dx in range(3):
                        for dy in range(3):
                            for dz in range(3):
                                for i in range(qi):
                                    s += kernel[dx, dy, dz, i, o] * xp[ix + dx, iy + dy, iz + dz, i]
                    out[ix, iy, iz, o] = s
    return out


def test_conv3d_matches_quintuple_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 5, 5, 2))
    k = rng.normal(size=(3, 3, 3, 2, 3))
    np.testing.assert_allclose(conv3d(x, k), conv_oracle(x, k), rtol=1e-13, atol=1e-13)


def test_conv3d_matches_scipy_correlate():
    # independent route: per channel pair, 3D correlation with constant
    # zero boundary
    rng = np.random.default_rng(1)
    x = rng.normal(size=(9, 7, 6, 3))
    k = rng.normal(size=(3, 3, 3, 3, 2))
    expected = np.zeros((9, 7, 6, 2))
    for o in range(2):
        for i in range(3):
            expected[..., o] += ndimage.correlate(x[..., i], k[..., i, o], mode="constant")
    np.testing.assert_allclose(conv3d(x, k), expected, rtol=0, atol=1e-12)


def test_conv3d_delta_kernel_is_identity():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 5, 4, 1))
    k = np.zeros((3, 3, 3, 1, 1))
    k[1, 1, 1, 0, 0] = 1.0
    assert np.array_equal(conv3d(x, k), x)


def test_conv3d_shift_kernel():
    # kernel weight at offset 0 shifts content forward by one voxel
    x = np.zeros((5, 3, 3, 1))
    x[2, 1, 1, 0] = 1.0
    k = np.zeros((3, 3, 3, 1, 1))
    k[0, 1, 1, 0, 0] = 1.0
    out = conv3d(x, k)
    assert out[3, 1, 1, 0] == 1.0
    assert out.sum() == 1.0


def test_conv3d_bias_and_validation():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 4, 4, 2))
    k = rng.normal(size=(3, 3, 3, 2, 2))
    b = np.array([1.0, -2.0])
    np.testing.assert_allclose(conv3d(x, k, b), conv3d(x, k) + b, rtol=0, atol=0)
    with pytest.raises(ValueError, match="channels"):
        conv3d(x, rng.normal(size=(3, 3, 3, 3, 2)))
    with pytest.raises(ValueError, match="kernel"):
        conv3d(x, rng.normal(size=(5, 5, 5, 2, 2)))
    with pytest.raises(ValueError, match="X, Y, Z"):
        conv3d(x[..., 0], k)


def test_conv_weight_grad_matches_einsum_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 5, 4, 6))  # (B, Qi, X, Y, Z)
    g = rng.normal(size=(2, 2, 5, 4, 6))  # (B, Qo, X, Y, Z)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    expected = np.zeros((2, 3, 3, 3, 3))
    for dx in range(3):
        for dy in range(3):
            for dz in range(3):
                window = xp[:, :, dx : dx + 5, dy : dy + 4, dz : dz + 6]
                expected[:, :, dx, dy, dz] = np.einsum("boxyz,bixyz->oi", g, window)
    got = conv3d_weight_grad(x, g)
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)


def test_conv_input_grad_is_adjoint():
    # <conv(x), g> must equal <x, conv_input_grad(g)> for any x, g
    rng = np.random.default_rng(5)
    k = rng.normal(size=(4, 3, 3, 3, 3))  # (Qo, Qi, 3, 3, 3)
    x = rng.normal(size=(2, 3, 6, 5, 7))
    g = rng.normal(size=(2, 4, 6, 5, 7))
    lhs = float((conv3d_batch(x, k) * g).sum())
    rhs = float((x * conv3d_input_grad(g, k)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conv_kernels_thread_count_invariant():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 2, 8, 8, 8))
    k = rng.normal(size=(3, 2, 3, 3, 3))
    g = rng.normal(size=(2, 3, 8, 8, 8))
    try:
        set_threads(1)
        f1 = conv3d_batch(x, k)
        w1 = conv3d_weight_grad(x, g)
        set_threads(64)  # clamped to the process limit
        f2 = conv3d_batch(x, k)
        w2 = conv3d_weight_grad(x, g)
    finally:
        set_threads(1)
    assert np.array_equal(f1, f2)
    assert np.array_equal(w1, w2)


def test_conv_single_precision_path():
    rng = np.random.default_rng(7)
    x64 = rng.normal(size=(1, 2, 6, 6, 6))
    k64 = rng.normal(size=(2, 2, 3, 3, 3))
    out32 = conv3d_batch(x64.astype(np.float32), k64.astype(np.float32))
    assert out32.dtype == np.float32
    np.testing.assert_allclose(out32, conv3d_batch(x64, k64), rtol=1e-4, atol=1e-4)
    with pytest.raises(ValueError, match="dtype"):
        conv3d_batch(x64.astype(np.float32), k64)


def fresh_bn(channels, rng):
    p = BatchNormParams.identity(channels)
    p.gamma = rng.uniform(0.5, 1.5, channels)
    p.beta = rng.normal(size=channels)
    return p


def test_batch_norm_train_standardizes_per_channel():
    rng = np.random.default_rng(8)
    x = rng.normal(3.0, 2.5, size=(4, 3, 5, 5, 4))
    params = fresh_bn(3, rng)
    y, _ = batch_norm_train(x, params)
    xhat = (y - params.beta[:, None, None, None]) / params.gamma[:, None, None, None]
    assert np.abs(xhat.mean(axis=(0, 2, 3, 4))).max() < 1e-6
    np.testing.assert_allclose(xhat.var(axis=(0, 2, 3, 4)), 1.0, atol=1e-4)


def test_batch_norm_running_stats_update():
    rng = np.random.default_rng(9)
    x = rng.normal(1.0, 2.0, size=(4, 2, 4, 4, 4))
    params = BatchNormParams.identity(2)
    mean, var = x.mean(axis=(0, 2, 3, 4)), x.var(axis=(0, 2, 3, 4))
    batch_norm_train(x, params)
    np.testing.assert_allclose(params.running_mean, 0.1 * mean, rtol=1e-12)
    np.testing.assert_allclose(params.running_var, 0.9 * 1.0 + 0.1 * var, rtol=1e-12)


def test_batch_norm_inference_uses_running_stats():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(2, 2, 3, 3, 3))
    params = BatchNormParams.identity(2)
    params.running_mean = np.array([1.0, -1.0])
    params.running_var = np.array([4.0, 0.25])
    y = batch_norm_inference(x, params)
    bc = (slice(None), None, None, None)
    expected = (x - params.running_mean[bc]) / np.sqrt(params.running_var[bc] + params.eps)
    np.testing.assert_allclose(y, expected, rtol=0, atol=1e-12)


def test_batch_norm_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 2, 3, 3, 2))
    w = rng.normal(size=x.shape)  # fixed projection makes a scalar loss
    params = fresh_bn(2, rng)

    def value(x_):
        p = BatchNormParams(
            params.gamma.copy(), params.beta.copy(),
            params.running_mean.copy(), params.running_var.copy(),
        )
        y, _ = batch_norm_train(x_, p)
        return float((w * y).sum())

    y, cache = batch_norm_train(x, BatchNormParams(
        params.gamma.copy(), params.beta.copy(),
        params.running_mean.copy(), params.running_var.copy(),
    ))
    grad_x, grad_gamma, grad_beta = batch_norm_backward(w, cache, params)

    h = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        num[idx] = (value(xp) - value(xm)) / (2 * h)
    np.testing.assert_allclose(grad_x, num, rtol=0, atol=1e-6)

    xhat = (x - cache[1][:, None, None, None]) * cache[2][:, None, None, None]
    np.testing.assert_allclose(grad_gamma, (w * xhat).sum(axis=(0, 2, 3, 4)), rtol=1e-12)
    np.testing.assert_allclose(grad_beta, w.sum(axis=(0, 2, 3, 4)), rtol=1e-12)


def test_batch_norm_validation():
    params = BatchNormParams.identity(2)
    with pytest.raises(ValueError, match="at least one sample"):
        batch_norm_train(np.empty((0, 2, 3, 3, 3)), params)
    with pytest.raises(ValueError, match="channel"):
        batch_norm_train(np.zeros((1, 3, 2, 2, 2)), params)
    with pytest.raises(ValueError, match="mode"):
        batch_norm(np.zeros((1, 2, 2, 2, 2)), params, mode="test")


def test_batch_norm_public_wrapper_is_channels_last():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 3, 3, 3, 2))  # (B, X, Y, Z, Q)
    params = BatchNormParams.identity(2)
    y = batch_norm(x, params, mode="train")
    assert y.shape == x.shape
    assert np.abs(y.mean(axis=(0, 1, 2, 3))).max() < 1e-6


def test_relu_and_grad():
    x = np.array([-2.0, 0.0, 3.0])
    assert np.array_equal(relu(x), [0.0, 0.0, 3.0])
    g = relu_grad(relu(x), np.ones(3))
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_sigmoid_stable_and_monotone():
    x = np.array([-500.0, 0.0, 500.0])
    y = sigmoid(x)
    assert np.all(np.isfinite(y))
    assert y[0] == pytest.approx(0.0, abs=1e-12)
    assert y[1] == 0.5
    assert y[2] == pytest.approx(1.0, abs=1e-12)
    r = np.sort(np.random.default_rng(13).normal(size=50))
    assert np.all(np.diff(sigmoid(r)) > 0)


def test_sigmoid_grad_matches_finite_differences():
    x = np.linspace(-3, 3, 13)
    y = sigmoid(x)
    h = 1e-6
    num = (sigmoid(x + h) - sigmoid(x - h)) / (2 * h)
    np.testing.assert_allclose(sigmoid_grad(y, np.ones_like(x)), num, atol=1e-9)
