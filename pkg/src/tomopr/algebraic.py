"""Algebraic volume reconstruction: MLOS, MART, and SF-MART.

All three consume per-camera images plus the camera geometry and return a
non-negative volume. MART runs camera-sequentially: within one iteration
each camera's reprojection is computed for all pixels first, then every
voxel applies its multiplicative correction. That two-phase order is part
of the algorithm; reorderings change the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy.ndimage import correlate1d

from tomopr.containers import ProjectionImage, VoxelVolume
from tomopr.geometry import CameraModel, WeightMatrix


@dataclass
class MartConfig:
    """MART iteration controls.

    smoothing enables the per-iteration 3x3x3 Gaussian pass (SF-MART).
    """

    iterations: int = 5
    mu: float = 1.0
    smoothing: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError(f"iterations must be non-negative, got {self.iterations}")
        if not 0 < self.mu <= 2:
            raise ValueError(f"relaxation mu must be in (0, 2], got {self.mu}")


def _validate_images(images: list[ProjectionImage], cameras: list[CameraModel]) -> None:
    if len(images) != len(cameras):
        raise ValueError(f"{len(cameras)} cameras but {len(images)} images")
    if not images:
        raise ValueError("at least one camera image is required")
    for j, (img, cam) in enumerate(zip(images, cameras)):
        if tuple(img.dims) != tuple(cam.image_dims):
            raise ValueError(
                f"image {j} dims {img.dims} do not match camera raster {cam.image_dims}"
            )
        if not np.all(np.isfinite(img.values)):
            raise ValueError(f"image {j} contains non-finite values")
        if np.any(img.values < 0):
            raise ValueError(f"image {j} contains negative intensities")


def mlos(
    images: list[ProjectionImage],
    cameras: list[CameraModel],
    volume_dims: tuple[int, int, int],
    _chunk_voxels: int = 1 << 20,
) -> VoxelVolume:
    """Multiplied line-of-sight estimate of a particle volume.

    Each voxel takes the product over cameras of the bilinearly
    interpolated image intensity at its projected position. Any voxel
    projecting off any raster is zero, and any all-dark camera ray zeroes
    the voxels it crosses; MLOS can only overestimate support, never
    invent intensity outside it. No weight matrix is needed.
    """
    _validate_images(images, cameras)
    nx, ny, nz = volume_dims
    n_vox = nx * ny * nz
    out = np.ones(n_vox, dtype=np.float64)

    for start in range(0, n_vox, _chunk_voxels):
        stop = min(start + _chunk_voxels, n_vox)
        ix, iy, iz = np.unravel_index(np.arange(start, stop), volume_dims)
        for img, cam in zip(images, cameras):
            w, h = cam.image_dims
            proj = cam.scale * cam.projection
            off = cam.origin_offset
            px = proj[0, 0] * ix + proj[0, 1] * iy + proj[0, 2] * iz + off[0]
            py = proj[1, 0] * ix + proj[1, 1] * iy + proj[1, 2] * iz + off[1]
            valid = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)

            x0 = np.clip(np.floor(px).astype(np.int64), 0, w - 1)
            y0 = np.clip(np.floor(py).astype(np.int64), 0, h - 1)
            fx = np.clip(px - x0, 0.0, 1.0)
            fy = np.clip(py - y0, 0.0, 1.0)
            x1 = np.minimum(x0 + 1, w - 1)
            y1 = np.minimum(y0 + 1, h - 1)
            vals = img.values
            sample = (
                (1 - fx) * (1 - fy) * vals[x0, y0]
                + fx * (1 - fy) * vals[x1, y0]
                + (1 - fx) * fy * vals[x0, y1]
                + fx * fy * vals[x1, y1]
            )
            out[start:stop] *= np.where(valid, sample, 0.0)
    return VoxelVolume(out.reshape(volume_dims))


@njit(parallel=True, cache=True)
def _mart_update(values, indptr, indices, data, ratio, mu):  # pragma: no cover
    # E(v) *= prod_p ratio(p) ** (mu * w(v, p)); zero voxels are exact
    # fixed points and are skipped. Each voxel is owned by one worker, so
    # results are identical for any thread count.
    for v in prange(values.size):
        e = values[v]
        if e == 0.0:
            continue
        f = 1.0
        for k in range(indptr[v], indptr[v + 1]):
            r = ratio[indices[k]]
            if r != 1.0:
                f *= r ** (mu * data[k])
        values[v] = e * f


def _gaussian3(volume: np.ndarray) -> np.ndarray:
    """Separable 3x3x3 Gaussian (sigma = 0.5), zero-padded at the faces."""
    t = np.exp(-np.array([1.0, 0.0, 1.0]) / 0.5)
    t /= t.sum()
    out = volume
    for axis in range(3):
        out = correlate1d(out, t, axis=axis, mode="constant", cval=0.0)
    return out


def _residual_l1(images, weights, flat) -> float:
    total = 0.0
    for img, wm in zip(images, weights):
        reproj = wm.matrix.T @ flat
        total += float(np.abs(img.values.reshape(-1) - reproj).sum())
    return total


def mart(
    images: list[ProjectionImage],
    cameras: list[CameraModel],
    weights: list[WeightMatrix],
    init: VoxelVolume,
    config: MartConfig | None = None,
    residual_trace: list[float] | None = None,
) -> VoxelVolume:
    """Multiplicative algebraic reconstruction from an initial field.

    Per iteration and per camera j, with reprojection P = W_j E computed
    first over all pixels:

        E(v) <- E(v) * prod_p (I_j(p) / P(p)) ** (mu * w(v, p))

    Pixels with P(p) = 0 are skipped (ratio treated as 1): a dark
    reprojection cannot be rescued multiplicatively. Pixels with
    I_j(p) = 0 but P(p) > 0 zero out every voxel weighted into them, which
    is the ghost-removal mechanism. Non-negativity and exact zeros of the
    initial field are preserved.

    When ``residual_trace`` is a list it receives the summed L1 image
    residual of the initial field and of each completed iteration.
    """
    if config is None:
        config = MartConfig()
    _validate_images(images, cameras)
    if len(weights) != len(cameras):
        raise ValueError(f"{len(cameras)} cameras but {len(weights)} weight matrices")
    for j, wm in enumerate(weights):
        if tuple(wm.volume_dims) != tuple(init.dims):
            raise ValueError(
                f"weight matrix {j} is for dims {wm.volume_dims}, init volume has {init.dims}"
            )
        if tuple(wm.image_dims) != tuple(images[j].dims):
            raise ValueError(
                f"weight matrix {j} is for raster {wm.image_dims}, image {j} has {images[j].dims}"
            )
    if np.any(init.values < 0) or not np.all(np.isfinite(init.values)):
        raise ValueError("initial volume must be finite and non-negative")

    flat = init.values.reshape(-1).astype(np.float64)
    if residual_trace is not None:
        residual_trace.append(_residual_l1(images, weights, flat))

    for _ in range(config.iterations):
        for img, wm in zip(images, weights):
            reproj = wm.matrix.T @ flat
            img_flat = img.values.reshape(-1).astype(np.float64, copy=False)
            ratio = np.divide(
                img_flat, reproj, out=np.ones_like(reproj), where=reproj > 0
            )
            _mart_update(
                flat,
                wm.matrix.indptr,
                wm.matrix.indices,
                wm.matrix.data,
                ratio,
                config.mu,
            )
        if config.smoothing:
            flat = _gaussian3(flat.reshape(init.dims)).reshape(-1)
        if residual_trace is not None:
            residual_trace.append(_residual_l1(images, weights, flat))
    return VoxelVolume(flat.reshape(init.dims))


def sf_mart(
    images: list[ProjectionImage],
    cameras: list[CameraModel],
    weights: list[WeightMatrix],
    init: VoxelVolume,
    config: MartConfig | None = None,
    residual_trace: list[float] | None = None,
) -> VoxelVolume:
    """MART with a 3x3x3 Gaussian pass after every iteration.

    The smoothing spreads intensity into neighboring voxels between
    multiplicative corrections, which recovers particles that plain MART
    locks at zero and suppresses isolated ghost spikes.
    """
    if config is None:
        config = MartConfig(smoothing=True)
    cfg = MartConfig(iterations=config.iterations, mu=config.mu, smoothing=True)
    return mart(images, cameras, weights, init, cfg, residual_trace)
