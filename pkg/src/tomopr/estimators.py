"""Estimator-style front end for the reconstruction routines.

Each reconstructor follows the usual fit/transform protocol: construction
stores hyperparameters untouched, ``fit`` resolves the camera rig and any
precomputed state (weight matrices, the refiner network), and
``transform`` maps one set of camera images to a volume. ``predict`` is an
alias for ``transform`` and ``score`` returns the normalized correlation
against a ground-truth volume, so the classes drop into standard
model-selection tooling.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from tomopr.algebraic import MartConfig, mart, mlos
from tomopr.containers import ProjectionImage, VoxelVolume
from tomopr.errors import ConfigError
from tomopr.evaluation import quality_factor
from tomopr.geometry import build_weight_matrix, make_rig


def as_projection_images(X) -> list[ProjectionImage]:
    """Coerce transform input into a list of projection images.

    Accepts a list of ProjectionImage, a list of 2-D arrays, or one
    stacked (n_cameras, W, H) array.
    """
    if isinstance(X, np.ndarray):
        if X.ndim != 3:
            raise ValueError(f"stacked images must be (n_cameras, W, H), got {X.shape}")
        return [ProjectionImage(np.asarray(X[i], dtype=np.float64), i) for i in range(X.shape[0])]
    images = []
    for i, item in enumerate(X):
        if isinstance(item, ProjectionImage):
            images.append(item)
        else:
            images.append(ProjectionImage(np.asarray(item, dtype=np.float64), i))
    return images


class _ReconstructorMixin:
    """Shared fit plumbing and the transform-derived conveniences."""

    def _fit_geometry(self) -> tuple[int, int, int]:
        if self.volume_dims is None:
            raise ConfigError("volume_dims must be set before fitting")
        dims = tuple(int(d) for d in self.volume_dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"volume_dims must be three positive ints, got {self.volume_dims}")
        self.volume_dims_ = dims
        self.cameras_ = list(self.cameras) if self.cameras is not None else make_rig(dims)
        if not self.cameras_:
            raise ConfigError("the camera rig is empty")
        return dims

    def predict(self, X) -> VoxelVolume:
        """Alias for :meth:`transform`."""
        return self.transform(X)

    def fit_transform(self, X, y=None) -> VoxelVolume:
        return self.fit(X, y).transform(X)

    def score(self, X, y) -> float:
        """Quality factor of the reconstruction of X against the truth y."""
        truth = y if isinstance(y, VoxelVolume) else VoxelVolume(np.asarray(y, dtype=np.float64))
        return quality_factor(self.transform(X), truth)


class MLOSReconstructor(_ReconstructorMixin, BaseEstimator):
    """Multiplied line-of-sight reconstruction.

    Parameters
    ----------
    volume_dims : (Nx, Ny, Nz) of the output volume.
    cameras : camera rig; the standard four-camera rig for these dims when
        omitted.
    """

    def __init__(self, volume_dims=None, cameras=None):
        self.volume_dims = volume_dims
        self.cameras = cameras

    def fit(self, X=None, y=None) -> "MLOSReconstructor":
        self._fit_geometry()
        return self

    def transform(self, X) -> VoxelVolume:
        check_is_fitted(self, "cameras_")
        return mlos(as_projection_images(X), self.cameras_, self.volume_dims_)


class MARTReconstructor(_ReconstructorMixin, BaseEstimator):
    """Multiplicative algebraic reconstruction seeded by the line-of-sight
    estimate.

    Parameters
    ----------
    volume_dims, cameras : as in :class:`MLOSReconstructor`.
    iterations : full MART sweeps over all cameras.
    mu : relaxation exponent in (0, 2].
    smoothing : apply the 3x3x3 Gaussian pass after every iteration.
    """

    def __init__(self, volume_dims=None, cameras=None, iterations=5, mu=1.0, smoothing=False):
        self.volume_dims = volume_dims
        self.cameras = cameras
        self.iterations = iterations
        self.mu = mu
        self.smoothing = smoothing

    def fit(self, X=None, y=None) -> "MARTReconstructor":
        dims = self._fit_geometry()
        try:
            self.config_ = MartConfig(
                iterations=self.iterations, mu=self.mu, smoothing=self.smoothing
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.weights_ = [build_weight_matrix(cam, dims) for cam in self.cameras_]
        return self

    def transform(self, X) -> VoxelVolume:
        check_is_fitted(self, "weights_")
        images = as_projection_images(X)
        init = mlos(images, self.cameras_, self.volume_dims_)
        return mart(images, self.cameras_, self.weights_, init, self.config_)


class AIPRReconstructor(_ReconstructorMixin, BaseEstimator):
    """Line-of-sight estimate refined by the trained network.

    Parameters
    ----------
    volume_dims, cameras : as in :class:`MLOSReconstructor`.
    network : a Network instance or a path to a saved model container.
    overlap : tile overlap in voxels used when the volume exceeds the
        network's tile dims.
    """

    def __init__(self, volume_dims=None, cameras=None, network=None, overlap=16):
        self.volume_dims = volume_dims
        self.cameras = cameras
        self.network = network
        self.overlap = overlap

    def fit(self, X=None, y=None) -> "AIPRReconstructor":
        from tomopr.nn.network import Network, read_network

        self._fit_geometry()
        if self.network is None:
            raise ConfigError("a trained network (instance or file path) is required")
        if isinstance(self.network, (str, Path)):
            self.network_ = read_network(self.network)
        elif isinstance(self.network, Network):
            self.network_ = self.network
        else:
            raise ConfigError(f"network must be a Network or a path, got {type(self.network)!r}")
        return self

    def transform(self, X) -> VoxelVolume:
        check_is_fitted(self, "network_")
        from tomopr.nn.inference import infer_tiled

        init = mlos(as_projection_images(X), self.cameras_, self.volume_dims_)
        return infer_tiled(self.network_, init, overlap=self.overlap)
