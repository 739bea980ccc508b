"""Volume and image value containers.

Array conventions used throughout the package:

  * volumes are numpy arrays of shape (Nx, Ny, Nz), C-ordered, indexed
    ``values[ix, iy, iz]``;
  * images are numpy arrays of shape (W, H), indexed ``values[ix, iy]``
    with pixel centers at integer coordinates;
  * both are kept non-negative by every producer in this package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class VoxelVolume:
    """A 3D intensity field on a regular voxel grid.

    ``pitch`` is the physical edge length of one voxel; reconstruction and
    evaluation are pitch-agnostic, the field is carried as metadata for
    downstream consumers.
    """

    values: np.ndarray
    pitch: float = 1.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError(f"volume must be 3-D, got shape {self.values.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass
class ProjectionImage:
    """A single camera's 2D intensity raster, shape (W, H)."""

    values: np.ndarray
    camera_index: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"image must be 2-D, got shape {self.values.shape}")

    @property
    def dims(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass
class ParticleField:
    """Seeded tracer particles inside a voxel volume.

    positions: (N, 3) float voxel coordinates, x/y/z columns.
    intensities: (N,) peak intensities.
    diameters: (N,) blob diameters (e^-2 width) in voxels.
    """

    volume_dims: tuple[int, int, int]
    positions: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    intensities: np.ndarray = field(default_factory=lambda: np.empty(0))
    diameters: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self) -> None:
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        if self.positions.size == 0:
            self.positions = self.positions.reshape(0, 3)
        self.intensities = np.asarray(self.intensities, dtype=np.float64).ravel()
        self.diameters = np.asarray(self.diameters, dtype=np.float64).ravel()
        n = len(self.positions)
        if self.positions.shape != (n, 3):
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if len(self.intensities) != n or len(self.diameters) != n:
            raise ValueError("positions, intensities and diameters must have equal length")

    def __len__(self) -> int:
        return len(self.positions)
