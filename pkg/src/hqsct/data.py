"""In-memory containers for volumes and projection stacks.

Linearization
-------------
Volumes are stored as C-ordered arrays indexed ``data[z, y, x]`` (x varies
fastest), so ``data[k]`` is the k-th axial slice. Projection stacks are
indexed ``data[view, row, col]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError


@dataclass
class Volume3D:
    """Attenuation image on a regular voxel grid (mm^-1)."""

    data: np.ndarray
    voxel_size: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DimensionError(f"volume data must be 3D, got shape {self.data.shape}")
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.voxel_size = float(self.voxel_size)

    @property
    def dims(self) -> tuple[int, int, int]:
        """Voxel counts as ``(nx, ny, nz)``."""
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    def check_finite(self) -> "Volume3D":
        if not np.all(np.isfinite(self.data)):
            raise NumericError("volume contains non-finite values")
        return self

    def copy(self) -> "Volume3D":
        return Volume3D(self.data.copy(), self.voxel_size)


@dataclass
class ProjectionStack:
    """Log-normalized line integrals, shaped ``(n_views, det_rows, det_cols)``."""

    data: np.ndarray
    pixel_pitch: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DimensionError(f"projection data must be 3D, got shape {self.data.shape}")
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.pixel_pitch = float(self.pixel_pitch)

    @property
    def n_views(self) -> int:
        return self.data.shape[0]

    @property
    def det_rows(self) -> int:
        return self.data.shape[1]

    @property
    def det_cols(self) -> int:
        return self.data.shape[2]

    def check_finite(self) -> "ProjectionStack":
        if not np.all(np.isfinite(self.data)):
            raise NumericError("projections contain non-finite values")
        return self

    def copy(self) -> "ProjectionStack":
        return ProjectionStack(self.data.copy(), self.pixel_pitch)
