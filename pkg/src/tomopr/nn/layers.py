"""Network building blocks: convolution, batch normalization, activations.

Public functions use the channels-last conventions of the container types:
single tensors are (X, Y, Z, Q), kernels are (3, 3, 3, Q_in, Q_out), and
batched tensors carry a leading batch axis. The training path works on
channels-first batches internally (see ``_kernels``); these wrappers
transpose at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tomopr.nn._kernels import conv3d_batch

#: Variance floor inside the batch-norm square root.
BN_EPS = 1e-5

#: Running-statistics update rate: running = (1 - m) * running + m * batch.
BN_MOMENTUM = 0.1


def conv3d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-size stride-1 convolution of one channels-last tensor.

    x: (X, Y, Z, Q_in); kernel: (3, 3, 3, Q_in, Q_out); optional bias
    (Q_out,). Output is (X, Y, Z, Q_out) with zero padding of one voxel.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if x.ndim != 4:
        raise ValueError(f"input must be (X, Y, Z, Q), got shape {x.shape}")
    if kernel.ndim != 5 or kernel.shape[:3] != (3, 3, 3):
        raise ValueError(f"kernel must be (3, 3, 3, Q_in, Q_out), got {kernel.shape}")
    if kernel.shape[3] != x.shape[3]:
        raise ValueError(
            f"kernel expects {kernel.shape[3]} input channels, tensor has {x.shape[3]}"
        )
    kcf = np.ascontiguousarray(kernel.transpose(4, 3, 0, 1, 2), dtype=x.dtype)
    xcf = np.ascontiguousarray(x.transpose(3, 0, 1, 2))[None]
    out = conv3d_batch(xcf, kcf)[0]
    if bias is not None:
        out = out + np.asarray(bias, dtype=out.dtype)[:, None, None, None]
    return np.ascontiguousarray(out.transpose(1, 2, 3, 0))


@dataclass
class BatchNormParams:
    """Per-channel affine and running statistics of one batch-norm stage."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def identity(cls, channels: int, dtype=np.float64) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batch_norm_train(x: np.ndarray, params: BatchNormParams):
    """Training-mode batch norm on a channels-first batch (B, Q, X, Y, Z).

    Normalizes each channel by the biased batch statistics, applies the
    affine (gamma, beta), and updates the running statistics in place.
    Returns (y, cache) where the cache feeds :func:`batch_norm_backward`.
    """
    if x.ndim != 5:
        raise ValueError(f"expected (B, Q, X, Y, Z), got shape {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("batch norm needs at least one sample in train mode")
    if x.shape[1] != params.channels:
        raise ValueError(f"{params.channels}-channel params, {x.shape[1]}-channel input")
    axes = (0, 2, 3, 4)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)  # biased, matching the normalization below
    inv_std = 1.0 / np.sqrt(var + params.eps)
    bc = (slice(None), None, None, None)
    xhat = (x - mean[bc]) * inv_std[bc]
    y = params.gamma[bc] * xhat + params.beta[bc]
    m = params.momentum
    params.running_mean += (m * (mean - params.running_mean)).astype(params.running_mean.dtype)
    params.running_var += (m * (var - params.running_var)).astype(params.running_var.dtype)
    return y, (x, mean, inv_std)


def batch_norm_inference(x: np.ndarray, params: BatchNormParams) -> np.ndarray:
    """Inference-mode batch norm using the stored running statistics."""
    if x.ndim != 5:
        raise ValueError(f"expected (B, Q, X, Y, Z), got shape {x.shape}")
    if x.shape[1] != params.channels:
        raise ValueError(f"{params.channels}-channel params, {x.shape[1]}-channel input")
    bc = (slice(None), None, None, None)
    inv_std = 1.0 / np.sqrt(params.running_var + params.eps)
    return params.gamma[bc] * (x - params.running_mean[bc]) * inv_std[bc] + params.beta[bc]


def batch_norm_backward(grad_y: np.ndarray, cache, params: BatchNormParams):
    """Exact reverse-mode gradients through training-mode batch norm.

    Returns (grad_x, grad_gamma, grad_beta). The batch statistics are
    functions of x, so grad_x includes the mean and variance paths; the
    sum-of-deviations term is kept even though it is analytically zero,
    which makes the gradient exact for the floating-point forward as run.
    """
    x, mean, inv_std = cache
    axes = (0, 2, 3, 4)
    n = x.shape[0] * x.shape[2] * x.shape[3] * x.shape[4]
    bc = (slice(None), None, None, None)
    xc = x - mean[bc]
    xhat = xc * inv_std[bc]

    grad_beta = grad_y.sum(axis=axes)
    grad_gamma = (grad_y * xhat).sum(axis=axes)

    grad_xhat = grad_y * params.gamma[bc]
    grad_var = (grad_xhat * xc).sum(axis=axes) * (-0.5) * inv_std**3
    grad_mean = -(grad_xhat.sum(axis=axes)) * inv_std + grad_var * (
        -2.0 / n
    ) * xc.sum(axis=axes)
    grad_x = (
        grad_xhat * inv_std[bc]
        + grad_var[bc] * (2.0 / n) * xc
        + grad_mean[bc] / n
    )
    return grad_x, grad_gamma, grad_beta


def batch_norm(x: np.ndarray, params: BatchNormParams, mode: str = "inference") -> np.ndarray:
    """Channels-last batch norm: x is (B, X, Y, Z, Q), mode train|inference."""
    x = np.asarray(x)
    if x.ndim != 5:
        raise ValueError(f"expected (B, X, Y, Z, Q), got shape {x.shape}")
    xcf = np.ascontiguousarray(x.transpose(0, 4, 1, 2, 3))
    if mode == "train":
        y, _ = batch_norm_train(xcf, params)
    elif mode == "inference":
        y = batch_norm_inference(xcf, params)
    else:
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    return np.ascontiguousarray(y.transpose(0, 2, 3, 4, 1))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(y: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    # mask from the output: y > 0 iff the pre-activation was > 0, and the
    # subgradient at exactly 0 is taken as 0
    return np.where(y > 0, grad_y, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form stays finite for any input magnitude
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    # y is the sigmoid output
    return grad_y * y * (1.0 - y)
