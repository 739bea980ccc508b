"""Reconstruction quality and benchmark sweeps.

A sweep runs a method grid over (ppp, noise, seed) cells. Within one cell
every method sees the same synthetic field and the same noisy images, so
Q differences between methods are never seeding artifacts. Rows land in a
CSV with schema ``method,ppp,n,seed,Q,seconds``; ``summarize`` reduces it
to per-cell means plus two pivot tables (Q versus ppp at fixed noise, Q
versus noise at fixed ppp).

Timing measures the wall time of the reconstruction call alone: dataset
synthesis, weight building, and shared MLOS inputs are excluded, and the
``seconds`` of the CNN-refined method (``aipr``) cover the network
inference stage, its MLOS input being accounted on the ``mlos`` row of the
same cell. Timings never participate in determinism comparisons.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tomopr.containers import VoxelVolume
from tomopr.errors import ConfigError
from tomopr.geometry import CameraModel, build_weight_matrix, make_rig
from tomopr.runtime import child_rng


def quality_factor(recon: VoxelVolume, truth: VoxelVolume) -> float:
    """Normalized (non-centered) correlation of two volumes.

        Q = sum(E_r * E_t) / sqrt(sum(E_r^2) * sum(E_t^2))

    Q is 1.0 exactly when the volumes are positive multiples of each other
    and lies in [0, 1] for non-negative fields. An all-zero reconstruction
    scores 0 against any non-zero truth; an all-zero truth is rejected
    because no reconstruction of it is rankable.
    """
    if tuple(recon.dims) != tuple(truth.dims):
        raise ValueError(f"volume dims differ: {recon.dims} vs {truth.dims}")
    r = recon.values.reshape(-1).astype(np.float64, copy=False)
    t = truth.values.reshape(-1).astype(np.float64, copy=False)
    tt = float(t @ t)
    if tt == 0.0:
        raise ValueError("truth volume is identically zero; Q is undefined")
    rr = float(r @ r)
    if rr == 0.0:
        return 0.0
    return float(r @ t) / float(np.sqrt(rr * tt))


_METHOD_RE = re.compile(r"^(mlos|aipr|mart-(\d+)|sfmart-(\d+))$")


def parse_method(name: str) -> tuple[str, int]:
    """Split a method id into (kind, iterations); e.g. 'mart-5' -> ('mart', 5)."""
    m = _METHOD_RE.match(name.strip().lower())
    if not m:
        raise ConfigError(
            f"unknown method {name!r}; expected mlos, mart-<k>, sfmart-<k> or aipr"
        )
    token = m.group(1)
    if token.startswith("mart"):
        return "mart", int(m.group(2))
    if token.startswith("sfmart"):
        return "sfmart", int(m.group(3))
    return token, 0


@dataclass
class SweepConfig:
    """Grid definition for :func:`run_sweep`."""

    volume_dims: tuple[int, int, int]
    ppp_values: tuple[float, ...]
    noise_values: tuple[float, ...] = (0.0,)
    methods: tuple[str, ...] = ("mlos",)
    seeds: tuple[int, ...] = (0,)
    network_path: str | None = None
    cameras: list[CameraModel] | None = None
    mu: float = 1.0
    save_slices: bool = False

    def __post_init__(self) -> None:
        if not self.ppp_values:
            raise ConfigError("sweep needs at least one ppp value")
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")
        if not self.methods:
            raise ConfigError("sweep needs at least one method")
        for m in self.methods:
            parse_method(m)
        for n in self.noise_values:
            if n < 0:
                raise ConfigError(f"noise level must be non-negative, got {n}")


@dataclass
class SweepResult:
    """One reconstruction outcome inside a sweep grid."""

    method: str
    ppp: float
    noise: float
    seed: int
    q: float
    seconds: float
    peak_bytes: int = 0


CSV_HEADER = ["method", "ppp", "n", "seed", "Q", "seconds"]


def run_sweep(config: SweepConfig, out_dir: str | Path | None = None) -> list[SweepResult]:
    """Run the method grid; optionally write results.csv (and slice PGMs).

    Rows are produced in deterministic order (ppp, noise, seed, method) and
    all Q values are a pure function of the config and seeds.
    """
    from tomopr.algebraic import MartConfig, mart, mlos, sf_mart
    from tomopr.synthesis import add_image_noise, render_images, render_volume, seed_particles

    needs_network = any(parse_method(m)[0] == "aipr" for m in config.methods)
    network = None
    if needs_network:
        if config.network_path is None:
            raise ConfigError("methods include aipr but no network path is configured")
        from tomopr.nn.network import read_network

        network = read_network(config.network_path)

    dims = tuple(config.volume_dims)
    cameras = config.cameras if config.cameras is not None else make_rig(dims)
    weights = [build_weight_matrix(cam, dims) for cam in cameras]
    weight_bytes = sum(
        wm.matrix.data.nbytes + wm.matrix.indices.nbytes + wm.matrix.indptr.nbytes
        for wm in weights
    )
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    results: list[SweepResult] = []
    for ppp in config.ppp_values:
        for noise in config.noise_values:
            for seed in config.seeds:
                fieldp = seed_particles(dims, ppp, cameras[0].image_dims, child_rng(seed, 1))
                truth = render_volume(fieldp)
                images = render_images(truth, cameras, weights)
                if noise > 0:
                    images = [
                        add_image_noise(img, noise, child_rng(seed, 2, round(noise * 1000), j))
                        for j, img in enumerate(images)
                    ]
                mlos_vol: VoxelVolume | None = None
                mlos_seconds = 0.0

                def shared_mlos() -> VoxelVolume:
                    nonlocal mlos_vol, mlos_seconds
                    if mlos_vol is None:
                        t0 = time.perf_counter()
                        mlos_vol = mlos(images, cameras, dims)
                        mlos_seconds = time.perf_counter() - t0
                    return mlos_vol

                for name in config.methods:
                    kind, iterations = parse_method(name)
                    if kind == "mlos":
                        recon = shared_mlos()
                        seconds = mlos_seconds
                    elif kind in ("mart", "sfmart"):
                        init = shared_mlos()
                        runner = mart if kind == "mart" else sf_mart
                        cfg = MartConfig(
                            iterations=iterations, mu=config.mu, smoothing=kind == "sfmart"
                        )
                        t0 = time.perf_counter()
                        recon = runner(images, cameras, weights, init, cfg)
                        seconds = time.perf_counter() - t0
                    else:  # aipr: refine the shared MLOS field
                        from tomopr.nn.inference import infer_tiled

                        init = shared_mlos()
                        t0 = time.perf_counter()
                        recon = infer_tiled(network, init)
                        seconds = time.perf_counter() - t0
                    q = quality_factor(recon, truth)
                    results.append(
                        SweepResult(
                            method=name,
                            ppp=float(ppp),
                            noise=float(noise),
                            seed=int(seed),
                            q=q,
                            seconds=seconds,
                            peak_bytes=weight_bytes + recon.values.nbytes,
                        )
                    )
                    if out_path is not None and config.save_slices:
                        from tomopr.io import write_image
                        from tomopr.containers import ProjectionImage

                        tag = f"{name}_ppp{ppp:g}_n{noise:g}_s{seed}"
                        planes = (
                            recon.values[dims[0] // 2, :, :],
                            recon.values[:, dims[1] // 2, :],
                            recon.values[:, :, dims[2] // 2],
                        )
                        for axis, plane in enumerate(planes):
                            write_image(
                                out_path / f"slice_{tag}_axis{axis}.pgm",
                                ProjectionImage(np.ascontiguousarray(plane)),
                            )

    if out_path is not None:
        from tomopr.io import write_csv

        write_csv(
            out_path / "results.csv",
            CSV_HEADER,
            [[r.method, r.ppp, r.noise, r.seed, r.q, r.seconds] for r in results],
        )
    return results


SUMMARY_HEADER = ["method", "ppp", "n", "mean_Q", "std_Q", "mean_seconds"]


def summarize(
    results: list[SweepResult],
    out_dir: str | Path | None = None,
    fixed_noise: float | None = None,
    fixed_ppp: float | None = None,
) -> list[list]:
    """Aggregate sweep rows per (method, ppp, noise) cell.

    Returns summary rows (see SUMMARY_HEADER) and, with ``out_dir``,
    writes summary.csv plus two pivot tables: ``q_vs_ppp.csv`` at
    ``fixed_noise`` (default: the smallest noise level present) and
    ``q_vs_n.csv`` at ``fixed_ppp`` (default: 0.15 when present, else the
    smallest ppp). Standard deviations are population deviations, so a
    single-seed cell reports 0.
    """
    if not results:
        raise ValueError("no sweep results to summarize")
    methods = list(dict.fromkeys(r.method for r in results))
    cells: dict[tuple[str, float, float], list[SweepResult]] = {}
    for r in results:
        cells.setdefault((r.method, r.ppp, r.noise), []).append(r)

    rows = []
    for method in methods:
        for (m, ppp, noise), group in sorted(
            ((k, v) for k, v in cells.items() if k[0] == method),
            key=lambda kv: (kv[0][1], kv[0][2]),
        ):
            qs = np.array([g.q for g in group])
            secs = np.array([g.seconds for g in group])
            rows.append(
                [m, ppp, noise, float(qs.mean()), float(qs.std()), float(secs.mean())]
            )

    if out_dir is not None:
        from tomopr.io import write_csv

        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        write_csv(out_path / "summary.csv", SUMMARY_HEADER, rows)

        noises = sorted({r.noise for r in results})
        ppps = sorted({r.ppp for r in results})
        n0 = fixed_noise if fixed_noise is not None else noises[0]
        p0 = fixed_ppp if fixed_ppp is not None else (0.15 if 0.15 in ppps else ppps[0])

        mean_q = {
            (row[0], row[1], row[2]): row[3] for row in rows
        }  # (method, ppp, n) -> mean_Q
        pivot_ppp = [
            [p] + [mean_q.get((m, p, n0), "") for m in methods] for p in ppps
        ]
        write_csv(out_path / "q_vs_ppp.csv", ["ppp"] + methods, pivot_ppp)
        pivot_n = [
            [n] + [mean_q.get((m, p0, n), "") for m in methods] for n in noises
        ]
        write_csv(out_path / "q_vs_n.csv", ["n"] + methods, pivot_n)
    return rows
