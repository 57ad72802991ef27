"""Binary containers for volumes and projection stacks, plus PGM export.

Layouts (all little-endian, payload float32):

* volume: ``b"CBVL"``, u32 version, u32 nx, u32 ny, u32 nz, f64 voxel_size,
  then ``nz * ny * nx`` values with x varying fastest;
* projections: ``b"CBPR"``, u32 version, u32 n_views, u32 det_rows,
  u32 det_cols, f64 pixel_pitch, then values indexed ``[view, row, col]``.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .data import ProjectionStack, Volume3D
from .errors import FormatError, TruncationError

VERSION = 1
_VOLUME = (b"CBVL", struct.Struct("<4sIIIId"))
_PROJ = (b"CBPR", struct.Struct("<4sIIIId"))


def _write(path, magic, fmt, dims, spacing, data):
    payload = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(fmt.pack(magic, VERSION, *dims, spacing))
        fh.write(payload.tobytes())


def _read(path, magic, fmt):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < fmt.size:
        raise TruncationError(path, fmt.size, len(raw))
    got_magic, version, a, b, c, spacing = fmt.unpack_from(raw)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 4 * a * b * c
    actual = len(raw) - fmt.size
    if actual != expected:
        if actual < expected:
            raise TruncationError(path, expected, actual)
        raise FormatError(f"{path}: {actual - expected} trailing bytes after payload")
    return (a, b, c), spacing, np.frombuffer(raw, dtype="<f4", offset=fmt.size).astype(np.float32)


def write_volume(path, vol: Volume3D) -> None:
    nx, ny, nz = vol.dims
    _write(path, *_VOLUME, (nx, ny, nz), vol.voxel_size, vol.data)


def read_volume(path) -> Volume3D:
    (nx, ny, nz), voxel, data = _read(path, *_VOLUME)
    return Volume3D(data.reshape(nz, ny, nx), voxel)


def write_projections(path, proj: ProjectionStack) -> None:
    _write(path, *_PROJ, proj.data.shape, proj.pixel_pitch, proj.data)


def read_projections(path) -> ProjectionStack:
    shape, pitch, data = _read(path, *_PROJ)
    return ProjectionStack(data.reshape(shape), pitch)


def read_raw_stack(path, shape, dtype="<f4", pixel_pitch: float = 1.0) -> ProjectionStack:
    """Import a headerless row-major projection stack ``(views, rows, cols)``.

    Geometry has to be supplied separately; calibration files are not parsed.
    """
    path = Path(path)
    shape = tuple(int(s) for s in shape)
    dtype = np.dtype(dtype)
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = path.stat().st_size
    if actual < expected:
        raise TruncationError(path, expected, actual)
    data = np.fromfile(path, dtype=dtype, count=int(np.prod(shape))).reshape(shape)
    return ProjectionStack(data.astype(np.float32), pixel_pitch)


def write_pgm(path, image: np.ndarray, window: tuple[float, float]) -> None:
    """8-bit binary PGM of a 2D slice with linear window ``(low, high)``."""
    lo, hi = float(window[0]), float(window[1])
    span = hi - lo if hi > lo else 1.0
    img = np.clip((np.asarray(image, dtype=np.float64) - lo) / span, 0.0, 1.0)
    pix = np.round(img * 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)
