"""Camera geometry: rotations, parallel projection, and voxel-pixel weights.

COORDINATE CONVENTIONS
----------------------
* World coordinates are voxel-grid coordinates: voxel centers sit at integer
  (x, y, z) with x in [0, Nx), y in [0, Ny), z in [0, Nz).
* A camera is an orthonormal rotation ``R`` followed by a parallel
  projection: camera coordinates are ``r' = R r``; the line of sight is the
  camera z' axis, i.e. row 3 of ``R``; the image plane carries x'/y'.
* Pixel coordinates of a world point: ``p = scale * (R[:2] @ r) + offset``.
  Pixel centers are at integer coordinates; pixel (ix, iy) of an image of
  dims (W, H) is addressed ``values[ix, iy]``, flat index ``ix * H + iy``.
* Rotations compose Z-X-Z: ``R = Rz(alpha) @ Rx(beta) @ Rz(gamma)`` with
  right-handed elementary rotations. Row 3 works out to
  ``(sin(beta) sin(gamma), sin(beta) cos(gamma), cos(beta))``: ``beta`` tilts
  the line of sight away from the volume z axis, ``gamma`` sets its azimuth,
  and ``alpha`` only rolls the image plane about the line of sight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from tomopr.containers import ProjectionImage, VoxelVolume
from tomopr.errors import ResourceLimitError

#: Euler angle triplets (alpha, beta, gamma) in degrees for the default
#: four-camera rig: two cameras tilted +-30 deg in the y-z plane and two
#: tilted +-30 deg in the x-z plane. The azimuth of the second pair comes
#: from gamma, not alpha, because alpha cannot change the line of sight
#: (see module docstring); four cameras sharing two lines of sight would
#: reconstruct like a two-camera system.
DEFAULT_RIG_ANGLES_DEG: tuple[tuple[float, float, float], ...] = (
    (0.0, 30.0, 0.0),
    (0.0, -30.0, 0.0),
    (0.0, 30.0, 90.0),
    (0.0, -30.0, 90.0),
)

#: Radius in pixels of the voxel-to-pixel weighting kernel.
DEFAULT_KERNEL_RADIUS = 1.5

#: Default ceiling for one camera's weight-matrix storage.
DEFAULT_WEIGHT_BUDGET_BYTES = 8 << 30


def rotation_from_euler(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Orthonormal Z-X-Z rotation matrix for Euler angles in radians.

    Returns the 3x3 matrix ``Rz(alpha) @ Rx(beta) @ Rz(gamma)``. The result
    satisfies ``R.T @ R = I`` and ``det(R) = +1`` for any inputs.
    """
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    cg, sg = math.cos(gamma), math.sin(gamma)
    return np.array(
        [
            [ca * cg - sa * cb * sg, -ca * sg - sa * cb * cg, sa * sb],
            [sa * cg + ca * cb * sg, -sa * sg + ca * cb * cg, -ca * sb],
            [sb * sg, sb * cg, cb],
        ]
    )


@dataclass
class CameraModel:
    """One camera of a parallel-projection rig.

    Parameters
    ----------
    euler : tuple of float
        (alpha, beta, gamma) in radians, Z-X-Z convention.
    scale : float
        Pixels per voxel pitch. 1.0 means one voxel maps to one pixel.
    origin_offset : tuple of float
        Pixel coordinates given to the projection of the world origin.
    image_dims : tuple of int
        Raster dims (W, H) this camera records.
    """

    euler: tuple[float, float, float]
    scale: float = 1.0
    origin_offset: tuple[float, float] = (0.0, 0.0)
    image_dims: tuple[int, int] = (0, 0)
    rotation: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not all(math.isfinite(a) for a in self.euler):
            raise ValueError(f"Euler angles must be finite, got {self.euler}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        self.rotation = rotation_from_euler(*self.euler)

    @property
    def projection(self) -> np.ndarray:
        """First two rotation rows: world point -> unscaled image plane."""
        return self.rotation[:2]

    @property
    def line_of_sight(self) -> np.ndarray:
        """Unit vector (row 3 of the rotation) the camera integrates along."""
        return self.rotation[2]


def project_point(camera: CameraModel, point: np.ndarray) -> np.ndarray:
    """Project world point(s) to continuous pixel coordinates.

    Parameters
    ----------
    camera : CameraModel
    point : array_like, shape (..., 3)

    Returns
    -------
    ndarray, shape (..., 2)
        ``scale * (R[:2] @ point) + origin_offset`` broadcast over leading
        dimensions.
    """
    pts = np.asarray(point, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise ValueError(f"points must have a trailing dimension of 3, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return camera.scale * (pts @ camera.projection.T) + np.asarray(camera.origin_offset)


def make_rig(
    volume_dims: tuple[int, int, int],
    angles_deg: tuple[tuple[float, float, float], ...] = DEFAULT_RIG_ANGLES_DEG,
    scale: float = 1.0,
    image_dims: tuple[int, int] | None = None,
) -> list[CameraModel]:
    """Build a camera rig centered on a volume.

    Every camera gets the same raster. When ``image_dims`` is omitted the
    raster is sized so the projected volume, plus the weighting-kernel
    reach, fits on it for every camera: no voxel is ever clipped, which
    keeps per-voxel weight sums exactly 1. Offsets map the volume center to
    the raster center.
    """
    nx, ny, nz = volume_dims
    if min(volume_dims) < 1:
        raise ValueError(f"volume dims must be positive, got {volume_dims}")
    center = np.array([(nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0])
    corners = np.array(
        [(x, y, z) for x in (0, nx - 1) for y in (0, ny - 1) for z in (0, nz - 1)],
        dtype=np.float64,
    )
    eulers = [tuple(math.radians(a) for a in angles) for angles in angles_deg]

    if image_dims is None:
        half_w = half_h = 0.0
        for euler in eulers:
            proj = rotation_from_euler(*euler)[:2]
            rel = scale * (corners - center) @ proj.T
            half_w = max(half_w, np.abs(rel[:, 0]).max())
            half_h = max(half_h, np.abs(rel[:, 1]).max())
        # kernel reach + one guard pixel on each side, rounded up to even
        pad = DEFAULT_KERNEL_RADIUS + 1.0
        width = 2 * math.ceil(half_w + pad)
        height = 2 * math.ceil(half_h + pad)
        image_dims = (width, height)

    img_center = np.array([(image_dims[0] - 1) / 2.0, (image_dims[1] - 1) / 2.0])
    cameras = []
    for idx, euler in enumerate(eulers):
        proj = rotation_from_euler(*euler)[:2]
        offset = img_center - scale * (proj @ center)
        cameras.append(
            CameraModel(
                euler=euler,
                scale=scale,
                origin_offset=(float(offset[0]), float(offset[1])),
                image_dims=image_dims,
            )
        )
    return cameras


@dataclass
class WeightMatrix:
    """Sparse voxel-to-pixel weights for one camera.

    ``matrix`` is CSR of shape (n_voxels, n_pixels): row v holds the
    normalized footprint of voxel v on the raster. Voxel flat index follows
    C order of (Nx, Ny, Nz); pixel flat index is ``ix * H + iy``. Rows sum
    to exactly 1 for voxels whose footprint is fully on the raster and to 0
    for voxels projecting entirely off it.
    """

    volume_dims: tuple[int, int, int]
    image_dims: tuple[int, int]
    radius: float
    matrix: sparse.csr_matrix

    @property
    def n_voxels(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[1]


def estimate_weight_bytes(volume_dims: tuple[int, int, int], radius: float) -> int:
    """Upper-bound storage estimate for one camera's weight matrix."""
    n_vox = int(np.prod(volume_dims))
    entries_per_voxel = math.pi * (radius + 0.5) ** 2
    # 8-byte values + 4-byte column indices + 8-byte row pointers
    return int(n_vox * (entries_per_voxel * 12 + 8))


def build_weight_matrix(
    camera: CameraModel,
    volume_dims: tuple[int, int, int],
    radius: float = DEFAULT_KERNEL_RADIUS,
    memory_budget_bytes: int = DEFAULT_WEIGHT_BUDGET_BYTES,
    _chunk_voxels: int = 1 << 19,
) -> WeightMatrix:
    """Compute the normalized voxel-to-pixel weight matrix for one camera.

    Each voxel center is projected onto the raster; every pixel center
    within ``radius`` of the projected point receives weight
    ``1 - d / radius`` (linear decay with distance d), and the weights of
    each voxel are normalized to sum to 1. Off-raster pixels never receive
    weight; a voxel whose footprint lies entirely off the raster gets an
    empty row.

    Raises
    ------
    ResourceLimitError
        If the storage estimate exceeds ``memory_budget_bytes``.
    """
    nx, ny, nz = volume_dims
    if min(volume_dims) < 1:
        raise ValueError(f"volume dims must be positive, got {volume_dims}")
    w, h = camera.image_dims
    if w < 1 or h < 1:
        raise ValueError(f"camera image dims must be positive, got {camera.image_dims}")
    if not (radius > 0):
        raise ValueError(f"kernel radius must be positive, got {radius}")
    estimate = estimate_weight_bytes(volume_dims, radius)
    if estimate > memory_budget_bytes:
        raise ResourceLimitError(
            f"weight matrix for dims {volume_dims} needs an estimated "
            f"{estimate} bytes, over the budget of {memory_budget_bytes}"
        )

    n_vox = nx * ny * nz
    # pixel-center candidates around floor(p): enough to cover any radius
    reach = math.ceil(radius + 0.5)
    rel = np.arange(1 - reach, reach + 1)
    n_cand = len(rel) ** 2
    du = np.repeat(rel, len(rel))
    dv = np.tile(rel, len(rel))

    proj = camera.scale * camera.projection
    off = np.asarray(camera.origin_offset)

    counts = np.empty(n_vox, dtype=np.int64)
    data_parts = []
    index_parts = []
    for start in range(0, n_vox, _chunk_voxels):
        stop = min(start + _chunk_voxels, n_vox)
        ix, iy, iz = np.unravel_index(np.arange(start, stop), volume_dims)
        px = proj[0, 0] * ix + proj[0, 1] * iy + proj[0, 2] * iz + off[0]
        py = proj[1, 0] * ix + proj[1, 1] * iy + proj[1, 2] * iz + off[1]

        u = np.floor(px)[:, None] + du[None, :]
        v = np.floor(py)[:, None] + dv[None, :]
        dist = np.hypot(u - px[:, None], v - py[:, None])
        weight = 1.0 - dist / radius
        on_raster = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
        weight = np.where(on_raster & (weight > 0), weight, 0.0)

        row_sum = weight.sum(axis=1)
        nonzero = weight > 0
        # normalize rows with any support; empty rows stay empty
        safe = np.where(row_sum > 0, row_sum, 1.0)
        weight /= safe[:, None]

        counts[start:stop] = nonzero.sum(axis=1)
        data_parts.append(weight[nonzero])
        flat_pix = (u * h + v).astype(np.int64)
        index_parts.append(flat_pix[nonzero])

    indptr = np.zeros(n_vox + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    matrix = sparse.csr_matrix(
        (
            np.concatenate(data_parts) if data_parts else np.empty(0),
            np.concatenate(index_parts) if index_parts else np.empty(0, dtype=np.int64),
            indptr,
        ),
        shape=(n_vox, w * h),
    )
    return WeightMatrix(
        volume_dims=tuple(volume_dims),
        image_dims=(w, h),
        radius=radius,
        matrix=matrix,
    )


def forward_project(volume: VoxelVolume, weights: WeightMatrix) -> ProjectionImage:
    """Project a volume through one camera's weights.

    Pixel p receives ``sum_v E(v) * w(v, p)``; the result is linear in the
    volume and preserves total intensity when every voxel footprint is
    fully on the raster.
    """
    if tuple(volume.dims) != tuple(weights.volume_dims):
        raise ValueError(
            f"volume dims {volume.dims} do not match weight matrix dims {weights.volume_dims}"
        )
    flat = volume.values.reshape(-1).astype(np.float64, copy=False)
    image = weights.matrix.T @ flat
    return ProjectionImage(values=image.reshape(weights.image_dims))
