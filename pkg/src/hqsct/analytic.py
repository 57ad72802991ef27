"""Feldkamp-Davis-Kress (FDK) reconstruction for circular cone-beam scans."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import _kernels
from ._validation import check_projections
from .data import ProjectionStack, Volume3D
from .errors import InvalidSpecError
from .geometry import ConeBeamGeometry

FilterKind = Literal["ram-lak", "hamming"]


@dataclass(frozen=True)
class FilterConfig:
    """Ramp filter choice and FFT length.

    ``zero_pad_to=None`` selects the smallest power of two that is at least
    twice the row length.
    """

    kind: FilterKind = "hamming"
    zero_pad_to: int | None = None

    def __post_init__(self):
        if self.kind not in ("ram-lak", "hamming"):
            raise InvalidSpecError(f"unknown filter kind {self.kind!r}")
        if self.zero_pad_to is not None:
            n = int(self.zero_pad_to)
            if n < 2 or n & (n - 1):
                raise InvalidSpecError(f"zero_pad_to must be a power of two, got {self.zero_pad_to}")

    def pad_length(self, n_cols: int) -> int:
        if self.zero_pad_to is None:
            return 1 << int(np.ceil(np.log2(max(2 * n_cols, 2))))
        if self.zero_pad_to < 2 * n_cols:
            raise InvalidSpecError(f"zero_pad_to={self.zero_pad_to} is shorter than 2 * {n_cols} columns")
        return int(self.zero_pad_to)


def ramp_kernel(n_taps: int, pitch: float = 1.0) -> np.ndarray:
    """Band-limited discrete ramp kernel in FFT (wrap-around) order.

    ``h[0] = 1 / (4 pitch^2)``, ``h[k] = -1 / (pi k pitch)^2`` for odd ``k``,
    zero for even ``k != 0``.
    """
    k = np.fft.fftfreq(n_taps, d=1.0 / n_taps).astype(np.int64)
    h = np.zeros(n_taps)
    h[0] = 0.25
    odd = (k % 2) != 0
    h[odd] = -1.0 / (np.pi * k[odd]) ** 2
    return h / pitch**2


def filter_response(n_pad: int, kind: FilterKind = "hamming", pitch: float = 1.0) -> np.ndarray:
    """Frequency response (length ``n_pad``) applied by :func:`ramp_filter_rows`."""
    response = pitch * np.real(np.fft.fft(ramp_kernel(n_pad, pitch)))
    if kind == "hamming":
        response *= 0.54 + 0.46 * np.cos(2 * np.pi * np.fft.fftfreq(n_pad))
    return response


def _filter_rows(data: np.ndarray, cfg: FilterConfig, pitch: float) -> np.ndarray:
    n_cols = data.shape[-1]
    n_pad = cfg.pad_length(n_cols)
    response = filter_response(n_pad, cfg.kind, pitch)
    spectrum = np.fft.rfft(data, n=n_pad, axis=-1)
    spectrum *= response[: n_pad // 2 + 1]
    return np.fft.irfft(spectrum, n=n_pad, axis=-1)[..., :n_cols]


def ramp_filter_rows(proj, cfg: FilterConfig = FilterConfig(), pitch: float | None = None) -> ProjectionStack:
    """Convolve every detector row with the (windowed) ramp kernel.

    The convolution is linear, not circular: rows are zero padded to
    ``cfg.pad_length`` before the frequency-domain product. ``pitch`` is the
    sample spacing along the row; it defaults to the stack's pixel pitch.
    """
    y = check_projections(proj)
    if pitch is None:
        pitch = proj.pixel_pitch if isinstance(proj, ProjectionStack) else 1.0
    out = _filter_rows(np.asarray(y, dtype=np.float64), cfg, float(pitch))
    return ProjectionStack(out, getattr(proj, "pixel_pitch", pitch))


def fdk_reconstruct(proj, geom: ConeBeamGeometry, cfg: FilterConfig = FilterConfig()) -> Volume3D:
    """FDK reconstruction of a full-revolution circular scan.

    Projections are cosine weighted and ramp filtered on a virtual detector
    through the rotation axis, then backprojected with the ``(D_so / U)^2``
    distance weight and half the per-view angular step (each ray is measured
    twice over a full revolution).
    """
    y = check_projections(proj, geom, finite=True)
    d_so, d_sd = geom.source_to_origin, geom.source_to_detector
    scale = d_so / d_sd
    tau = geom.det_pixel_pitch * scale
    u0, v0 = geom.det_offset
    u = (np.arange(geom.det_cols) - 0.5 * (geom.det_cols - 1) - u0) * tau
    v = (np.arange(geom.det_rows) - 0.5 * (geom.det_rows - 1) - v0) * tau
    cosine = d_so / np.sqrt(d_so**2 + u[None, :] ** 2 + v[:, None] ** 2)
    weighted = np.asarray(y, dtype=np.float64) * cosine
    filtered = np.ascontiguousarray(_filter_rows(weighted, cfg, tau))

    a = geom.angles_array
    out = np.zeros(geom.volume_shape, dtype=np.float64)
    _kernels.fdk_backproject_kernel(
        filtered,
        np.cos(a),
        np.sin(a),
        0.5 * geom.angular_weights(),
        d_so,
        d_sd,
        geom.det_pixel_pitch,
        u0,
        v0,
        geom.voxel_size,
        out,
    )
    return Volume3D(out, geom.voxel_size)
