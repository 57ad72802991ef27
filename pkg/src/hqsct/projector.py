"""Matched ray-driven cone-beam projector ``A`` and its adjoint ``A^T``.

Each detector pixel is served by one ray from the source through the pixel
centre. The ray is clipped to the support of the trilinear interpolant and
sampled at midpoints of voxel-size steps; each sample contributes
``step * trilinear_weight`` to the eight surrounding voxels. The adjoint
replays exactly the same samples, so it is the transpose of the forward
operator up to floating-point accumulation order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import _kernels
from ._validation import check_projections, check_volume
from .data import ProjectionStack, Volume3D
from .geometry import ConeBeamGeometry

__all__ = [
    "Volume3D",
    "ProjectionStack",
    "forward_project",
    "back_project",
    "adjoint_gap",
    "materialize_matrix",
    "write_matrix",
]


def _geom_args(geom: ConeBeamGeometry):
    a = geom.angles_array
    u0, v0 = geom.det_offset
    return (
        np.cos(a),
        np.sin(a),
        geom.source_to_origin,
        geom.source_to_detector,
        geom.det_pixel_pitch,
        u0,
        v0,
        geom.voxel_size,
    )


def _forward(x: np.ndarray, geom: ConeBeamGeometry) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(geom.projection_shape, dtype=np.float64)
    _kernels.forward_kernel(x, *_geom_args(geom), out)
    return out


def _adjoint(y: np.ndarray, geom: ConeBeamGeometry) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.float64)
    nch = min(_kernels.ADJOINT_CHUNKS, geom.n_views)
    bufs = np.zeros((nch,) + geom.volume_shape, dtype=np.float64)
    _kernels.adjoint_kernel(y, *_geom_args(geom), bufs)
    return _kernels.sum_buffers(bufs)


def forward_project(vol, geom: ConeBeamGeometry) -> ProjectionStack:
    """Line integrals of ``vol`` along every source-to-pixel ray.

    Parameters
    ----------
    vol : Volume3D or ndarray
        Attenuation volume (mm^-1) shaped ``geom.volume_shape``.
    geom : ConeBeamGeometry

    Returns
    -------
    ProjectionStack
        Dimensionless line integrals, float64.
    """
    x = check_volume(vol, geom)
    return ProjectionStack(_forward(x, geom), geom.det_pixel_pitch)


def back_project(proj, geom: ConeBeamGeometry) -> Volume3D:
    """Apply the exact transpose of :func:`forward_project`."""
    y = check_projections(proj, geom)
    return Volume3D(_adjoint(y, geom), geom.voxel_size)


def adjoint_gap(geom: ConeBeamGeometry, seed: int = 0, y_first: bool = False) -> float:
    """Relative mismatch ``|<Ax, y> - <x, A^T y>| / (||Ax|| ||y||)``.

    ``x`` and ``y`` are standard normal draws from ``seed``; ``y_first``
    swaps the draw order.
    """
    rng = np.random.default_rng(seed)
    if y_first:
        y = rng.standard_normal(geom.projection_shape)
        x = rng.standard_normal(geom.volume_shape)
    else:
        x = rng.standard_normal(geom.volume_shape)
        y = rng.standard_normal(geom.projection_shape)
    ax = _forward(x, geom)
    aty = _adjoint(y, geom)
    lhs = float(np.dot(ax.ravel(), y.ravel()))
    rhs = float(np.dot(x.ravel(), aty.ravel()))
    denom = float(np.linalg.norm(ax) * np.linalg.norm(y))
    if denom == 0.0:
        return abs(lhs - rhs)
    return abs(lhs - rhs) / denom


def materialize_matrix(geom: ConeBeamGeometry, adjoint: bool = False) -> np.ndarray:
    """Dense system matrix built column by column from unit inputs.

    With ``adjoint=True`` the matrix of :func:`back_project` is built instead
    (shape N x M). Meant for tiny test geometries only.
    """
    n = int(np.prod(geom.volume_shape))
    m = int(np.prod(geom.projection_shape))
    if adjoint:
        mat = np.empty((n, m))
        e = np.zeros(m)
        for j in range(m):
            e[j] = 1.0
            mat[:, j] = _adjoint(e.reshape(geom.projection_shape), geom).ravel()
            e[j] = 0.0
    else:
        mat = np.empty((m, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            mat[:, j] = _forward(e.reshape(geom.volume_shape), geom).ravel()
            e[j] = 0.0
    return mat


def write_matrix(mat: np.ndarray, path) -> None:
    """Row-major float64 dump preceded by an int64 ``(rows, cols, 0)`` header."""
    mat = np.ascontiguousarray(mat, dtype="<f8")
    with open(Path(path), "wb") as fh:
        np.array([mat.shape[0], mat.shape[1], 0], dtype="<i8").tofile(fh)
        mat.tofile(fh)


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    rows, cols, _ = np.frombuffer(raw[:24], dtype="<i8")
    return np.frombuffer(raw[24:], dtype="<f8").reshape(int(rows), int(cols)).copy()
