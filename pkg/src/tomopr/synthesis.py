"""Synthetic particle fields, their camera images, and training datasets.

The generation pipeline is deterministic from a single master seed: sample i
of a dataset uses the generator ``child_rng(master_seed, i)`` and consumes
draws in a fixed order (ppp, particle positions, peak intensities, noise
decision, noise level, per-image noise), so any sample can be rebuilt in
isolation and the full dataset is byte-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tomopr.containers import ParticleField, ProjectionImage, VoxelVolume
from tomopr.geometry import (
    CameraModel,
    WeightMatrix,
    build_weight_matrix,
    forward_project,
    make_rig,
)
from tomopr.runtime import child_rng

#: Particle blob diameter (e^-2 width) in voxels.
PARTICLE_DIAMETER = 3.0

#: Peak-intensity range for seeded particles.
INTENSITY_RANGE = (0.5, 1.0)

#: Noise levels sampled for the noisy share of training datasets.
TRAINING_NOISE_LEVELS = (0.05, 0.10, 0.15, 0.20)


def seed_particles(
    volume_dims: tuple[int, int, int],
    ppp: float,
    image_dims: tuple[int, int],
    seed: int | np.random.Generator,
) -> ParticleField:
    """Seed ``round(ppp * W * H)`` particles uniformly inside a volume.

    ``ppp`` is particle density per image pixel, so the count follows the
    camera raster, not the voxel count. Positions keep a margin of one blob
    diameter from every volume face; peak intensities are uniform in
    [0.5, 1.0]; the diameter is fixed at 3 voxels.
    """
    if ppp < 0:
        raise ValueError(f"ppp must be non-negative, got {ppp}")
    w, h = image_dims
    n = int(round(ppp * w * h))
    rng = np.random.default_rng(seed)
    margin = PARTICLE_DIAMETER
    lo = np.full(3, margin)
    hi = np.array(volume_dims, dtype=np.float64) - 1.0 - margin
    if n > 0 and np.any(hi < lo):
        raise ValueError(
            f"volume dims {volume_dims} leave no interior after a margin of {margin} voxels"
        )
    positions = rng.uniform(lo, hi, size=(n, 3))
    intensities = rng.uniform(*INTENSITY_RANGE, size=n)
    return ParticleField(
        volume_dims=tuple(volume_dims),
        positions=positions,
        intensities=intensities,
        diameters=np.full(n, PARTICLE_DIAMETER),
    )


def render_volume(fieldp: ParticleField) -> VoxelVolume:
    """Rasterize particles as Gaussian blobs onto the voxel grid.

    Each particle deposits ``I * exp(-8 r^2 / d^2)`` (an e^-2 diameter of
    d), truncated at radius d. Overlapping blobs add; the final field is
    clipped to 1.0.
    """
    nx, ny, nz = fieldp.volume_dims
    vol = np.zeros((nx, ny, nz), dtype=np.float64)
    for (px, py, pz), peak, d in zip(fieldp.positions, fieldp.intensities, fieldp.diameters):
        x0, x1 = max(0, int(np.ceil(px - d))), min(nx - 1, int(np.floor(px + d)))
        y0, y1 = max(0, int(np.ceil(py - d))), min(ny - 1, int(np.floor(py + d)))
        z0, z1 = max(0, int(np.ceil(pz - d))), min(nz - 1, int(np.floor(pz + d)))
        if x0 > x1 or y0 > y1 or z0 > z1:
            continue
        gx = (np.arange(x0, x1 + 1, dtype=np.float64) - px)[:, None, None]
        gy = (np.arange(y0, y1 + 1, dtype=np.float64) - py)[None, :, None]
        gz = (np.arange(z0, z1 + 1, dtype=np.float64) - pz)[None, None, :]
        r2 = gx * gx + gy * gy + gz * gz
        blob = peak * np.exp(-8.0 * r2 / (d * d))
        blob[r2 > d * d] = 0.0
        vol[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1] += blob
    np.minimum(vol, 1.0, out=vol)
    return VoxelVolume(vol)


def render_images(
    volume: VoxelVolume,
    cameras: list[CameraModel],
    weights: list[WeightMatrix] | None = None,
) -> list[ProjectionImage]:
    """Noise-free camera images of a volume, one per camera.

    Pass precomputed ``weights`` when projecting many volumes through the
    same rig; otherwise they are built on the fly.
    """
    if weights is None:
        weights = [build_weight_matrix(cam, volume.dims) for cam in cameras]
    if len(weights) != len(cameras):
        raise ValueError(f"{len(cameras)} cameras but {len(weights)} weight matrices")
    images = []
    for j, wm in enumerate(weights):
        img = forward_project(volume, wm)
        img.camera_index = j
        images.append(img)
    return images


def add_image_noise(
    image: ProjectionImage,
    level: float,
    seed: int | np.random.Generator,
) -> ProjectionImage:
    """Add white Gaussian noise scaled to the image's own contrast.

    The noise standard deviation is ``level`` times the standard deviation
    of the clean image; negative results are clipped to zero. ``level = 0``
    returns the image unchanged.
    """
    if level < 0:
        raise ValueError(f"noise level must be non-negative, got {level}")
    if level == 0:
        return ProjectionImage(image.values.copy(), camera_index=image.camera_index)
    rng = np.random.default_rng(seed)
    sigma = float(image.values.std())
    noisy = image.values + rng.normal(0.0, level * sigma, size=image.values.shape)
    np.maximum(noisy, 0.0, out=noisy)
    return ProjectionImage(noisy, camera_index=image.camera_index)


@dataclass
class TrainingSample:
    """One (input, target) volume pair for refiner training.

    ``inputs`` holds the multiplied line-of-sight field reconstructed from
    the (possibly noisy) images; ``target`` is the clean rasterized truth,
    always in [0, 1].
    """

    inputs: VoxelVolume
    target: VoxelVolume
    meta: dict = field(default_factory=dict)


def build_dataset(
    count: int,
    dims: tuple[int, int, int] = (64, 64, 32),
    ppp_range: tuple[float, float] = (0.05, 0.25),
    noise_fraction: float = 0.2,
    seed: int = 0,
    out_dir: str | Path | None = None,
    cameras: list[CameraModel] | None = None,
    noise_levels: tuple[float, ...] = TRAINING_NOISE_LEVELS,
) -> list[TrainingSample]:
    """Generate (and optionally persist) a training dataset.

    Each sample draws its ppp uniformly from ``ppp_range``; a
    ``noise_fraction`` share of samples gets Gaussian image noise at a
    level drawn from ``noise_levels`` before the input field is computed.
    Targets are always noise-free. With ``out_dir`` set, sample volumes are
    written as .tprv pairs next to a manifest.json.
    """
    from tomopr.algebraic import mlos
    from tomopr.io import write_volume

    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if not 0 <= noise_fraction <= 1:
        raise ValueError(f"noise fraction must be in [0, 1], got {noise_fraction}")
    if not (0 <= ppp_range[0] <= ppp_range[1]):
        raise ValueError(f"invalid ppp range {ppp_range}")

    if cameras is None:
        cameras = make_rig(dims)
    weights = [build_weight_matrix(cam, dims) for cam in cameras]

    samples = []
    records = []
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    for i in range(count):
        rng = child_rng(seed, i)
        ppp = float(rng.uniform(*ppp_range))
        fieldp = seed_particles(dims, ppp, cameras[0].image_dims, rng)
        truth = render_volume(fieldp)
        images = render_images(truth, cameras, weights)
        level = 0.0
        if rng.uniform() < noise_fraction:
            level = float(noise_levels[rng.integers(len(noise_levels))])
            images = [add_image_noise(img, level, rng) for img in images]
        inputs = mlos(images, cameras, dims)
        meta = {"index": i, "seed": seed, "ppp": ppp, "noise": level}
        sample = TrainingSample(inputs=inputs, target=truth, meta=meta)
        samples.append(sample)

        if out_path is not None:
            in_name = f"sample_{i:05d}_input.tprv"
            tg_name = f"sample_{i:05d}_target.tprv"
            write_volume(out_path / in_name, inputs)
            write_volume(out_path / tg_name, truth)
            records.append({**meta, "input": in_name, "target": tg_name})

    if out_path is not None:
        manifest = {
            "format": "tomopr-dataset",
            "version": 1,
            "count": count,
            "dims": list(dims),
            "ppp_range": list(ppp_range),
            "noise_fraction": noise_fraction,
            "noise_levels": list(noise_levels),
            "seed": seed,
            "image_dims": list(cameras[0].image_dims),
            "angles_deg": [[np.degrees(a) for a in cam.euler] for cam in cameras],
            "samples": records,
        }
        from tomopr.io import atomic_write_text

        atomic_write_text(out_path / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return samples


def load_dataset(path: str | Path) -> list[TrainingSample]:
    """Load a dataset written by :func:`build_dataset`."""
    from tomopr.io import read_volume

    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    samples = []
    for rec in manifest["samples"]:
        samples.append(
            TrainingSample(
                inputs=read_volume(root / rec["input"]),
                target=read_volume(root / rec["target"]),
                meta={k: rec[k] for k in ("index", "seed", "ppp", "noise")},
            )
        )
    return samples
