"""Compiled 3x3x3 convolution kernels (forward, weight grad, input grad).

Internal tensor layout is channels-first, (B, Q, X, Y, Z), with the kernel
as (Q_out, Q_in, 3, 3, 3); the public channels-last API lives in
:mod:`tomopr.nn.layers`. Zero padding of one voxel per face keeps spatial
dims unchanged (stride is always 1).

Parallelism assigns each (batch, x-slab) to exactly one worker and the
weight gradient accumulates into per-slab partials that the host sums in
fixed order, so every result is bit-identical for any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def _conv3d_core(xp, k, out):  # pragma: no cover - compiled
    # xp: (B, Qi, X+2, Y+2, Z+2) zero-padded input
    # k:  (Qo, Qi, 3, 3, 3)
    # out: (B, Qo, X, Y, Z)
    B, Qo, X, Y, Z = out.shape
    Qi = xp.shape[1]
    for bx in prange(B * X):
        b = bx // X
        ix = bx % X
        acc = np.empty(Z, dtype=out.dtype)
        for qo in range(Qo):
            for iy in range(Y):
                for z in range(Z):
                    acc[z] = 0.0
                for qi in range(Qi):
                    for dx in range(3):
                        for dy in range(3):
                            row = xp[b, qi, ix + dx, iy + dy]
                            k0 = k[qo, qi, dx, dy, 0]
                            k1 = k[qo, qi, dx, dy, 1]
                            k2 = k[qo, qi, dx, dy, 2]
                            # fused 3-tap stencil along z; acc[z] chains are
                            # independent, so this vectorizes without any
                            # floating-point reassociation
                            for z in range(Z):
                                acc[z] += k0 * row[z] + k1 * row[z + 1] + k2 * row[z + 2]
                for z in range(Z):
                    out[b, qo, ix, iy, z] = acc[z]


@njit(parallel=True, cache=True)
def _conv3d_wgrad_core(xp, g, partial):  # pragma: no cover - compiled
    # xp: (B, Qi, X+2, Y+2, Z+2); g: (B, Qo, X, Y, Z)
    # partial: (B*X, Qo, Qi, 3, 3, 3) per-slab sums, host-merged in order
    B, Qo, X, Y, Z = g.shape
    Qi = xp.shape[1]
    for bx in prange(B * X):
        b = bx // X
        ix = bx % X
        a0 = np.empty(Z, dtype=partial.dtype)
        a1 = np.empty(Z, dtype=partial.dtype)
        a2 = np.empty(Z, dtype=partial.dtype)
        for qo in range(Qo):
            for qi in range(Qi):
                for dx in range(3):
                    for dy in range(3):
                        for z in range(Z):
                            a0[z] = 0.0
                            a1[z] = 0.0
                            a2[z] = 0.0
                        for iy in range(Y):
                            grow = g[b, qo, ix, iy]
                            row = xp[b, qi, ix + dx, iy + dy]
                            for z in range(Z):
                                gv = grow[z]
                                a0[z] += gv * row[z]
                                a1[z] += gv * row[z + 1]
                                a2[z] += gv * row[z + 2]
                        s0 = 0.0
                        s1 = 0.0
                        s2 = 0.0
                        for z in range(Z):
                            s0 += a0[z]
                            s1 += a1[z]
                            s2 += a2[z]
                        partial[bx, qo, qi, dx, dy, 0] = s0
                        partial[bx, qo, qi, dx, dy, 1] = s1
                        partial[bx, qo, qi, dx, dy, 2] = s2


def _pad_spatial(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))


def conv3d_batch(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size 3D convolution, channels-first batch.

    x: (B, Qi, X, Y, Z); kernel: (Qo, Qi, 3, 3, 3) -> (B, Qo, X, Y, Z).
    """
    b, qi, nx, ny, nz = x.shape
    qo = kernel.shape[0]
    if kernel.shape != (qo, qi, 3, 3, 3):
        raise ValueError(
            f"kernel shape {kernel.shape} does not match input channels {qi}"
        )
    if kernel.dtype != x.dtype:
        raise ValueError(f"dtype mismatch: input {x.dtype}, kernel {kernel.dtype}")
    out = np.empty((b, qo, nx, ny, nz), dtype=x.dtype)
    _conv3d_core(_pad_spatial(x), kernel, out)
    return out


def conv3d_input_grad(grad_out: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the convolution input.

    The adjoint of a padded stride-1 correlation is the same correlation
    with the kernel spatially flipped and its channel axes swapped.
    """
    flipped = np.ascontiguousarray(
        kernel.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1]
    )
    return conv3d_batch(grad_out, flipped)


def conv3d_weight_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the kernel: (Qo, Qi, 3, 3, 3).

    Per-slab partial sums are merged with a single host-side pairwise sum,
    keeping the result independent of worker count.
    """
    b, qi, nx, ny, nz = x.shape
    qo = grad_out.shape[1]
    if grad_out.shape != (b, qo, nx, ny, nz):
        raise ValueError(
            f"grad shape {grad_out.shape} does not match input {x.shape}"
        )
    partial = np.empty((b * nx, qo, qi, 3, 3, 3), dtype=x.dtype)
    _conv3d_wgrad_core(_pad_spatial(x), grad_out, partial)
    return partial.sum(axis=0)
