"""Synthetic ellipsoid phantoms and scan simulation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial.transform import Rotation

from ._validation import check_volume
from .data import ProjectionStack, Volume3D
from .errors import InvalidSpecError
from .geometry import ConeBeamGeometry
from .projector import forward_project

MAX_PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True)
class PhantomSpec:
    """Random ellipsoid phantom recipe. Ranges are ``(low, high)``."""

    n_ellipsoids: int = 6
    attenuation_range: tuple[float, float] = (0.01, 0.04)
    size_range: tuple[float, float] = (0.4, 2.2)
    voids: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_ellipsoids < 0:
            raise InvalidSpecError("n_ellipsoids must be >= 0")
        for name in ("attenuation_range", "size_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise InvalidSpecError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")


@dataclass(frozen=True)
class NoiseModel:
    kind: Literal["none", "poisson"] = "none"
    incident_photons: float = 1e5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "poisson"):
            raise InvalidSpecError(f"unknown noise kind {self.kind!r}")
        if self.kind == "poisson" and not self.incident_photons > 0:
            raise InvalidSpecError("incident_photons must be positive for Poisson noise")


def _grid(dims, voxel_size):
    nx, ny, nz = dims
    ax = [(np.arange(n) - 0.5 * (n - 1)) * voxel_size for n in (nx, ny, nz)]
    z, y, x = np.meshgrid(ax[2], ax[1], ax[0], indexing="ij")
    return np.stack([x, y, z], axis=-1)


def _inside(points, center, axes, rot):
    local = (points - center) @ rot
    return np.sum((local / axes) ** 2, axis=-1) <= 1.0


def make_ellipsoid_phantom(dims, voxel_size: float, spec: PhantomSpec = PhantomSpec()) -> Volume3D:
    """Sum of random rotated ellipsoids, optionally carved by internal voids.

    Every ellipsoid lies inside the ball inscribed in the grid (less one
    voxel), so the object is seen by every view. Voids zero the volume inside
    a smaller ellipsoid nested in roughly half of the ellipsoids.
    """
    nx, ny, nz = (int(d) for d in dims)
    vol = np.zeros((nz, ny, nx), dtype=np.float64)
    if spec.n_ellipsoids == 0:
        return Volume3D(vol, voxel_size)
    rng = np.random.default_rng(spec.seed)
    pts = _grid((nx, ny, nz), voxel_size)
    radius = 0.5 * min(nx, ny, nz) * voxel_size - voxel_size
    voids = np.zeros(vol.shape, dtype=bool)
    for _ in range(spec.n_ellipsoids):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            axes = rng.uniform(*spec.size_range, size=3)
            room = radius - axes.max()
            if room >= 0:
                break
        else:
            raise InvalidSpecError(
                f"could not fit an ellipsoid of size range {spec.size_range} mm in radius {radius:.3g} mm"
            )
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        center = direction * room * rng.uniform() ** (1 / 3)
        rot = Rotation.random(random_state=rng).as_matrix()
        att = rng.uniform(*spec.attenuation_range)
        vol += att * _inside(pts, center, axes, rot)
        if spec.voids and rng.uniform() < 0.5:
            scale = rng.uniform(0.3, 0.6)
            vrot = Rotation.random(random_state=rng).as_matrix()
            voids |= _inside(pts, center, axes * scale, vrot)
    vol[voids] = 0.0
    return Volume3D(vol, voxel_size)


def make_ball_phantom(dims, voxel_size: float, radius: float, attenuation: float) -> Volume3D:
    """Centred uniform ball, evaluated at voxel centres."""
    pts = _grid(dims, voxel_size)
    inside = np.sum(pts**2, axis=-1) < radius**2
    return Volume3D(np.where(inside, attenuation, 0.0), voxel_size)


def simulate_scan(vol, geom: ConeBeamGeometry, noise: NoiseModel = NoiseModel()) -> ProjectionStack:
    """Log-normalized measurements of ``vol``.

    Noiseless mode returns the forward projection itself. In Poisson mode
    counts ``~ Poisson(I0 exp(-p))`` are clamped to at least one and
    converted back with ``-log(counts / I0)``. Counts are drawn in pixel
    order from a Philox counter-based generator.
    """
    check_volume(vol, geom)
    p = forward_project(vol, geom)
    if noise.kind == "none":
        return p
    rng = np.random.Generator(np.random.Philox(noise.seed))
    i0 = float(noise.incident_photons)
    counts = rng.poisson(i0 * np.exp(-p.data)).astype(np.float64)
    np.maximum(counts, 1.0, out=counts)
    return ProjectionStack(-np.log(counts / i0), p.pixel_pitch)
