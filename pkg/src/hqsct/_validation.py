"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np

from .data import ProjectionStack, Volume3D
from .errors import DimensionError, InvalidSpecError, NumericError


def as_array(obj) -> np.ndarray:
    if isinstance(obj, (Volume3D, ProjectionStack)):
        return obj.data
    return np.asarray(obj)


def check_volume(vol, geom=None, finite: bool = False) -> np.ndarray:
    """Return the raw array of ``vol`` after shape (and optionally finiteness) checks."""
    x = as_array(vol)
    if x.ndim != 3:
        raise DimensionError(f"expected a 3D volume, got shape {x.shape}")
    if geom is not None:
        if x.shape != geom.volume_shape:
            raise DimensionError(f"volume shape {x.shape} does not match geometry {geom.volume_shape}")
        if isinstance(vol, Volume3D) and not np.isclose(vol.voxel_size, geom.voxel_size):
            raise DimensionError(f"voxel size {vol.voxel_size} does not match geometry {geom.voxel_size}")
    if finite and not np.all(np.isfinite(x)):
        raise NumericError("volume contains non-finite values")
    return x


def check_projections(proj, geom=None, finite: bool = False) -> np.ndarray:
    y = as_array(proj)
    if y.ndim != 3:
        raise DimensionError(f"expected a 3D projection stack, got shape {y.shape}")
    if geom is not None and y.shape != geom.projection_shape:
        raise DimensionError(f"projection shape {y.shape} does not match geometry {geom.projection_shape}")
    if finite and not np.all(np.isfinite(y)):
        raise NumericError("projections contain non-finite values")
    return y


def check_scalar(x, name, min_val=None, max_val=None, include_min=True, target_type=numbers.Real):
    """Type and range check for a scalar hyper-parameter, returns ``x``."""
    if isinstance(x, bool) or not isinstance(x, target_type):
        raise InvalidSpecError(f"{name} must be {target_type.__name__}, got {type(x).__name__}")
    if min_val is not None:
        bad = x < min_val if include_min else x <= min_val
        if bad:
            op = ">=" if include_min else ">"
            raise InvalidSpecError(f"{name} must be {op} {min_val}, got {x}")
    if max_val is not None and x > max_val:
        raise InvalidSpecError(f"{name} must be <= {max_val}, got {x}")
    return x
