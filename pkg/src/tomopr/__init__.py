"""Tomographic particle reconstruction toolkit.

Synthetic particle fields and camera projections, algebraic reconstruction
(MLOS, MART, SF-MART), a from-scratch 3D convolutional volume refiner, and
quality-factor evaluation sweeps.
"""

from tomopr.algebraic import MartConfig, mart, mlos, sf_mart
from tomopr.containers import ParticleField, ProjectionImage, VoxelVolume
from tomopr.errors import ConfigError, ResourceLimitError, TrainingDivergedError
from tomopr.estimators import AIPRReconstructor, MARTReconstructor, MLOSReconstructor
from tomopr.evaluation import SweepConfig, quality_factor, run_sweep, summarize
from tomopr.geometry import CameraModel, build_weight_matrix, forward_project, make_rig
from tomopr.nn import TrainConfig, build_network, infer_tiled, read_network, train, write_network
from tomopr.runtime import child_rng, set_threads
from tomopr.synthesis import (
    TrainingSample,
    add_image_noise,
    build_dataset,
    load_dataset,
    render_images,
    render_volume,
    seed_particles,
)

__version__ = "0.1.0"

__all__ = [
    "AIPRReconstructor",
    "CameraModel",
    "ConfigError",
    "MARTReconstructor",
    "MLOSReconstructor",
    "MartConfig",
    "ParticleField",
    "ProjectionImage",
    "ResourceLimitError",
    "SweepConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainingSample",
    "VoxelVolume",
    "__version__",
    "add_image_noise",
    "build_dataset",
    "build_network",
    "build_weight_matrix",
    "child_rng",
    "forward_project",
    "infer_tiled",
    "load_dataset",
    "make_rig",
    "mart",
    "mlos",
    "quality_factor",
    "read_network",
    "render_images",
    "render_volume",
    "run_sweep",
    "seed_particles",
    "set_threads",
    "sf_mart",
    "summarize",
    "train",
    "write_network",
]
