"""Sparse-view cone-beam CT reconstruction with a learnt half-quadratic splitting loop."""

import numba as _numba

_numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

from .analytic import FilterConfig, fdk_reconstruct, ramp_filter_rows  # noqa: E402
from .data import ProjectionStack, Volume3D  # noqa: E402
from .geometry import ConeBeamGeometry, desk_geometry, make_circular_geometry, subsample_views  # noqa: E402
from .metrics import SSIMConfig, psnr, ssim, ssim_volume  # noqa: E402
from .phantoms import NoiseModel, PhantomSpec, make_ellipsoid_phantom, simulate_scan  # noqa: E402
from .projector import adjoint_gap, back_project, forward_project  # noqa: E402
from .solvers import HQSConfig, ReconTrace, cg_normal_solve, hqs_reconstruct, quadratic_mbir_baseline  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ConeBeamGeometry",
    "FilterConfig",
    "HQSConfig",
    "NoiseModel",
    "PhantomSpec",
    "ProjectionStack",
    "ReconTrace",
    "SSIMConfig",
    "Volume3D",
    "adjoint_gap",
    "back_project",
    "cg_normal_solve",
    "desk_geometry",
    "fdk_reconstruct",
    "forward_project",
    "hqs_reconstruct",
    "make_circular_geometry",
    "make_ellipsoid_phantom",
    "psnr",
    "quadratic_mbir_baseline",
    "ramp_filter_rows",
    "simulate_scan",
    "ssim",
    "ssim_volume",
    "subsample_views",
]
