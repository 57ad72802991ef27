"""Circular cone-beam acquisition geometry.

Coordinate convention (used by every operator in the package):

* world frame is right-handed, the rotation axis is ``z``;
* at view angle ``theta`` the source sits at ``D_so * (cos theta, sin theta, 0)``
  and the flat detector is centred at ``-(D_sd - D_so) * (cos theta, sin theta, 0)``;
* the detector ``u`` axis is ``(-sin theta, cos theta, 0)`` and the ``v``
  axis is ``+z``; column ``c`` / row ``r`` have coordinates
  ``u = (c - (det_cols - 1)/2 - u0) * pitch`` and
  ``v = (r - (det_rows - 1)/2 - v0) * pitch``;
* voxel ``(i, j, k)`` (array index ``[k, j, i]``) is centred at
  ``((i - (nx - 1)/2) * s, (j - (ny - 1)/2) * s, (k - (nz - 1)/2) * s)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .data import ProjectionStack
from .errors import CoverageError, DimensionError, InvalidSpecError

_FIELDS = (
    "source_to_origin",
    "source_to_detector",
    "det_rows",
    "det_cols",
    "det_pixel_pitch",
    "angles",
    "vol_dims",
    "voxel_size",
    "det_offset",
)


@dataclass(frozen=True)
class ConeBeamGeometry:
    """Immutable description of a circular cone-beam scan and its voxel grid.

    Lengths are in mm, angles in radians. Construction validates every
    invariant, including that the sphere circumscribing the voxel grid
    projects entirely onto the detector for all views.
    """

    source_to_origin: float
    source_to_detector: float
    det_rows: int
    det_cols: int
    det_pixel_pitch: float
    angles: tuple[float, ...]
    vol_dims: tuple[int, int, int]
    voxel_size: float
    det_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "angles", tuple(float(a) for a in np.ravel(self.angles)))
        set_(self, "vol_dims", tuple(int(d) for d in self.vol_dims))
        set_(self, "det_offset", tuple(float(o) for o in self.det_offset))
        set_(self, "det_rows", _as_int(self.det_rows, "det_rows"))
        set_(self, "det_cols", _as_int(self.det_cols, "det_cols"))
        for name in ("source_to_origin", "source_to_detector", "det_pixel_pitch", "voxel_size"):
            set_(self, name, float(getattr(self, name)))
        self._validate()

    def _validate(self):
        if not (self.source_to_origin > 0 and self.source_to_detector > self.source_to_origin):
            raise InvalidSpecError(
                "require source_to_detector > source_to_origin > 0, got "
                f"{self.source_to_detector} and {self.source_to_origin}"
            )
        if self.det_rows <= 0 or self.det_cols <= 0:
            raise InvalidSpecError(f"detector counts must be positive, got {self.det_rows}x{self.det_cols}")
        if not self.det_pixel_pitch > 0:
            raise InvalidSpecError(f"det_pixel_pitch must be positive, got {self.det_pixel_pitch}")
        if not self.voxel_size > 0:
            raise InvalidSpecError(f"voxel_size must be positive, got {self.voxel_size}")
        if len(self.vol_dims) != 3 or min(self.vol_dims) <= 0:
            raise InvalidSpecError(f"vol_dims must be three positive counts, got {self.vol_dims}")
        if len(self.det_offset) != 2 or not all(math.isfinite(o) for o in self.det_offset):
            raise InvalidSpecError(f"det_offset must be two finite numbers, got {self.det_offset}")
        a = np.asarray(self.angles)
        if a.size < 1:
            raise InvalidSpecError("at least one view angle is required")
        if not np.all(np.isfinite(a)) or a[0] < 0 or a[-1] >= 2 * np.pi:
            raise InvalidSpecError("angles must lie in [0, 2*pi)")
        if np.any(np.diff(a) <= 0):
            raise InvalidSpecError("angles must be strictly increasing")

        radius = self.object_radius
        if radius >= self.source_to_origin:
            raise CoverageError(
                f"object sphere radius {radius:.4g} mm reaches the source at {self.source_to_origin} mm"
            )
        # tangent cone of the object sphere meets the detector plane in a circle
        footprint = self.source_to_detector * radius / math.sqrt(self.source_to_origin**2 - radius**2)
        u0, v0 = self.det_offset
        p = self.det_pixel_pitch
        half_u = min(self.det_cols / 2 - u0, self.det_cols / 2 + u0) * p
        half_v = min(self.det_rows / 2 - v0, self.det_rows / 2 + v0) * p
        if footprint > half_u or footprint > half_v:
            raise CoverageError(
                f"object footprint radius {footprint:.4g} mm exceeds detector half-extent "
                f"({half_u:.4g} mm x {half_v:.4g} mm)"
            )

    @property
    def n_views(self) -> int:
        return len(self.angles)

    @property
    def angles_array(self) -> np.ndarray:
        return np.asarray(self.angles, dtype=np.float64)

    @property
    def volume_shape(self) -> tuple[int, int, int]:
        """Array shape ``(nz, ny, nx)`` of volumes on this grid."""
        nx, ny, nz = self.vol_dims
        return nz, ny, nx

    @property
    def projection_shape(self) -> tuple[int, int, int]:
        return self.n_views, self.det_rows, self.det_cols

    @property
    def object_radius(self) -> float:
        """Radius (mm) of the sphere circumscribing the voxel grid."""
        return 0.5 * self.voxel_size * math.sqrt(sum(d * d for d in self.vol_dims))

    @property
    def magnification(self) -> float:
        return self.source_to_detector / self.source_to_origin

    def angular_weights(self) -> np.ndarray:
        """Per-view angular quadrature weights (radians) summing to the arc covered.

        For a full revolution the weights are half the distance between the
        neighbouring views on the circle; uniform sampling gives ``2 pi / n``.
        """
        a = self.angles_array
        if a.size == 1:
            return np.array([2 * np.pi])
        ext = np.concatenate([[a[-1] - 2 * np.pi], a, [a[0] + 2 * np.pi]])
        return 0.5 * (ext[2:] - ext[:-2])

    def with_angles(self, angles: Sequence[float]) -> "ConeBeamGeometry":
        return replace(self, angles=tuple(angles))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["angles"] = list(self.angles)
        d["vol_dims"] = list(self.vol_dims)
        d["det_offset"] = list(self.det_offset)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ConeBeamGeometry":
        missing = [f for f in _FIELDS if f not in d and f != "det_offset"]
        if missing:
            raise InvalidSpecError(f"geometry document lacks fields {missing}")
        return cls(**{k: d[k] for k in _FIELDS if k in d})

    @classmethod
    def from_json(cls, text: str) -> "ConeBeamGeometry":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ConeBeamGeometry":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _as_int(value, name):
    if isinstance(value, bool) or int(value) != value:
        raise InvalidSpecError(f"{name} must be an integer, got {value!r}")
    return int(value)


def uniform_angles(n_views: int, full_revolution: bool = True) -> np.ndarray:
    """``n_views`` equally spaced angles starting at 0 over 2*pi (or pi)."""
    if int(n_views) < 1:
        raise InvalidSpecError(f"n_views must be >= 1, got {n_views}")
    arc = 2 * np.pi if full_revolution else np.pi
    return np.arange(int(n_views)) * (arc / int(n_views))


def make_circular_geometry(
    spec: Mapping[str, Any] | None = None,
    /,
    **kwargs,
) -> ConeBeamGeometry:
    """Build a validated circular geometry.

    Parameters may be passed as a mapping, as keywords, or both (keywords
    win). Either ``angles`` or ``n_views`` (with optional
    ``full_revolution``, default True) must be given.

    Examples
    --------
    >>> g = make_circular_geometry(source_to_origin=66, source_to_detector=199,
    ...     det_rows=112, det_cols=112, det_pixel_pitch=0.32, n_views=1200,
    ...     vol_dims=(64, 64, 64), voxel_size=0.1)
    >>> g.n_views
    1200
    """
    params = dict(spec or {})
    params.update(kwargs)
    n_views = params.pop("n_views", None)
    full = params.pop("full_revolution", True)
    if "angles" not in params:
        if n_views is None:
            raise InvalidSpecError("either angles or n_views is required")
        params["angles"] = uniform_angles(n_views, full)
    unknown = set(params) - set(_FIELDS)
    if unknown:
        raise InvalidSpecError(f"unknown geometry fields {sorted(unknown)}")
    try:
        return ConeBeamGeometry(**params)
    except TypeError as exc:
        raise InvalidSpecError(str(exc)) from exc


def desk_geometry(n_views: int = 192, n: int = 64, voxel_size: float = 0.1) -> ConeBeamGeometry:
    """Walnut-like source distances scaled to an ``n``-cubed desk-scale grid.

    The detector pitch is the voxel size magnified to the detector plane and
    the detector is just large enough (plus a two pixel margin) to satisfy the
    coverage check.
    """
    d_so, d_sd = 66.0, 199.0
    pitch = voxel_size * d_sd / d_so
    radius = 0.5 * voxel_size * math.sqrt(3) * n
    footprint = d_sd * radius / math.sqrt(d_so**2 - radius**2)
    n_det = 2 * (math.ceil(footprint / pitch) + 2)
    return make_circular_geometry(
        source_to_origin=d_so,
        source_to_detector=d_sd,
        det_rows=n_det,
        det_cols=n_det,
        det_pixel_pitch=pitch,
        n_views=n_views,
        vol_dims=(n, n, n),
        voxel_size=voxel_size,
    )


def subsample_views(
    proj: ProjectionStack, geom: ConeBeamGeometry, factor: int
) -> tuple[ProjectionStack, ConeBeamGeometry]:
    """Keep views ``0, factor, 2*factor, ...`` of both data and geometry."""
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise InvalidSpecError(f"factor must be a positive integer, got {factor!r}")
    factor = int(factor)
    if proj.n_views != geom.n_views:
        raise DimensionError(f"projection has {proj.n_views} views, geometry {geom.n_views}")
    if factor > geom.n_views:
        raise InvalidSpecError(f"factor {factor} exceeds the number of views {geom.n_views}")
    if factor == 1:
        return proj, geom
    keep = slice(0, None, factor)
    sub = ProjectionStack(proj.data[keep].copy(), proj.pixel_pitch)
    return sub, geom.with_angles(geom.angles[keep])
