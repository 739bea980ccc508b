"""File formats: binary volume container, 16-bit PGM images, rig files.

All writers go through a write-to-temp-then-rename step, so a failed write
never leaves a partial artifact at the destination path.

Volume container (.tprv)
    magic ``TPRV`` | u32 version (1) | u32 Nx | u32 Ny | u32 Nz | payload.
    Payload is little-endian float32, x varying fastest, then y, then z.
    Images reuse the container with dims (W, H, 1).

Images (.pgm)
    Binary 16-bit PGM (``P5``, maxval 65535, big-endian samples). Floats
    are quantized as ``round(value * scale)`` with the scale recorded in a
    ``# scale <value>`` header comment so readers can undo it; the scale
    is chosen to put the image maximum at 65535.

Camera rig (.rig, plain text)
    ``key = value`` lines; one ``[camera]`` section per camera with keys
    alpha_deg, beta_deg, gamma_deg, scale, offset_x, offset_y,
    image_width, image_height. Angles are degrees in the file and radians
    in memory.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from tomopr.containers import ProjectionImage, VoxelVolume
from tomopr.errors import ConfigError
from tomopr.geometry import CameraModel

_TPRV_MAGIC = b"TPRV"
_TPRV_VERSION = 1


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` atomically (temp file + rename)."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_volume(path: str | Path, volume: VoxelVolume) -> None:
    """Write a volume to the binary container (float32 payload)."""
    nx, ny, nz = volume.dims
    header = _TPRV_MAGIC + struct.pack("<IIII", _TPRV_VERSION, nx, ny, nz)
    payload = volume.values.astype("<f4").transpose(2, 1, 0).tobytes()
    atomic_write_bytes(path, header + payload)


def read_volume(path: str | Path) -> VoxelVolume:
    raw = Path(path).read_bytes()
    if raw[:4] != _TPRV_MAGIC:
        raise ConfigError(f"{path}: not a volume container (bad magic {raw[:4]!r})")
    version, nx, ny, nz = struct.unpack("<IIII", raw[4:20])
    if version != _TPRV_VERSION:
        raise ConfigError(f"{path}: unsupported container version {version}")
    expected = 20 + 4 * nx * ny * nz
    if len(raw) != expected:
        raise ConfigError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    values = np.frombuffer(raw, dtype="<f4", offset=20).reshape(nz, ny, nx)
    return VoxelVolume(np.ascontiguousarray(values.transpose(2, 1, 0), dtype=np.float64))


def write_image(path: str | Path, image: ProjectionImage) -> None:
    """Write an image as 16-bit PGM (.pgm) or as a (W, H, 1) container."""
    path = Path(path)
    if path.suffix == ".tprv":
        write_volume(path, VoxelVolume(image.values[:, :, None]))
        return
    values = np.asarray(image.values, dtype=np.float64)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("image must be finite and non-negative for PGM export")
    peak = float(values.max()) if values.size else 0.0
    scale = 65535.0 / peak if peak > 0 else 1.0
    quantized = np.round(values * scale).astype(">u2")
    w, h = image.dims
    header = f"P5\n# scale {scale!r}\n{w} {h}\n65535\n".encode()
    # PGM raster is row-major top-to-bottom: transpose (W, H) -> rows of y
    atomic_write_bytes(path, header + quantized.T.tobytes())


def read_image(path: str | Path) -> ProjectionImage:
    path = Path(path)
    if path.suffix == ".tprv":
        vol = read_volume(path)
        if vol.dims[2] != 1:
            raise ConfigError(f"{path}: container holds a volume, not an image")
        return ProjectionImage(vol.values[:, :, 0])
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise ConfigError(f"{path}: not a binary PGM file")
    tokens: list[bytes] = []
    scale = 1.0
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            end = raw.index(b"\n", pos)
            comment = raw[pos + 1 : end].split()
            if len(comment) == 2 and comment[0] == b"scale":
                scale = float(comment[1])
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h = int(tokens[0]), int(tokens[1])
    maxval = int(tokens[2])
    if maxval != 65535:
        raise ConfigError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    data = np.frombuffer(raw, dtype=">u2", offset=pos, count=w * h).reshape(h, w)
    return ProjectionImage(data.T.astype(np.float64) / scale)


def write_rig(path: str | Path, cameras: list[CameraModel]) -> None:
    lines = ["# tomopr camera rig", "version = 1", ""]
    for cam in cameras:
        a, b, g = (math.degrees(v) for v in cam.euler)
        lines += [
            "[camera]",
            f"alpha_deg = {a!r}",
            f"beta_deg = {b!r}",
            f"gamma_deg = {g!r}",
            f"scale = {cam.scale!r}",
            f"offset_x = {cam.origin_offset[0]!r}",
            f"offset_y = {cam.origin_offset[1]!r}",
            f"image_width = {cam.image_dims[0]}",
            f"image_height = {cam.image_dims[1]}",
            "",
        ]
    atomic_write_text(path, "\n".join(lines))


def read_rig(path: str | Path) -> list[CameraModel]:
    """Parse a rig file; raises ConfigError on malformed content."""
    sections: list[dict[str, str]] = []
    current: dict[str, str] | None = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[camera]":
            current = {}
            sections.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if current is None:
            if key != "version":
                raise ConfigError(f"{path}:{lineno}: key {key!r} outside a [camera] section")
            if value != "1":
                raise ConfigError(f"{path}: unsupported rig version {value}")
            continue
        current[key] = value

    if not sections:
        raise ConfigError(f"{path}: no [camera] sections found")
    cameras = []
    required = {
        "alpha_deg",
        "beta_deg",
        "gamma_deg",
        "scale",
        "offset_x",
        "offset_y",
        "image_width",
        "image_height",
    }
    for i, sec in enumerate(sections):
        missing = required - set(sec)
        if missing:
            raise ConfigError(f"{path}: camera {i} is missing keys {sorted(missing)}")
        try:
            cameras.append(
                CameraModel(
                    euler=tuple(
                        math.radians(float(sec[k]))
                        for k in ("alpha_deg", "beta_deg", "gamma_deg")
                    ),
                    scale=float(sec["scale"]),
                    origin_offset=(float(sec["offset_x"]), float(sec["offset_y"])),
                    image_dims=(int(sec["image_width"]), int(sec["image_height"])),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: camera {i}: {exc}") from exc
    return cameras


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Write a small CSV with repr-exact floats (deterministic bytes)."""

    def cell(v) -> str:
        if isinstance(v, float):
            return repr(float(v))  # plain repr even for numpy scalars
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(cell(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")
