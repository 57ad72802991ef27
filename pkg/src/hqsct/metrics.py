"""PSNR and SSIM image-quality metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import as_array
from .errors import DimensionError, InvalidSpecError


@dataclass(frozen=True)
class SSIMConfig:
    data_range: float = 1.0
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if not self.data_range > 0:
            raise InvalidSpecError(f"data_range must be positive, got {self.data_range}")
        if self.window < 1 or self.window % 2 == 0:
            raise InvalidSpecError(f"window must be a positive odd size, got {self.window}")


def _pair(x, ref):
    x = np.asarray(as_array(x), dtype=np.float64)
    ref = np.asarray(as_array(ref), dtype=np.float64)
    if x.shape != ref.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, data_range: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB over all elements.

    ``data_range`` defaults to the maximum of ``ref``. Identical inputs give
    ``inf``.
    """
    x, ref = _pair(x, ref)
    if data_range is None:
        data_range = float(ref.max())
    if not data_range > 0:
        raise InvalidSpecError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(data_range**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 1D Gaussian taps; the 2D window is its outer product."""
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t**2) / (2 * sigma**2))
    return g / g.sum()


def ssim_map(x, ref, cfg: SSIMConfig = SSIMConfig()) -> np.ndarray:
    """Local SSIM over every fully contained window position ("valid" mode)."""
    x, ref = _pair(x, ref)
    if x.ndim != 2:
        raise DimensionError(f"ssim expects 2D images, got shape {x.shape}")
    if min(x.shape) < cfg.window:
        raise DimensionError(f"image {x.shape} is smaller than the {cfg.window}x{cfg.window} window")
    g = gaussian_window(cfg.window, cfg.sigma)
    half = cfg.window // 2

    def blur(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="constant")
        a = ndimage.correlate1d(a, g, axis=1, mode="constant")
        return a[half : a.shape[0] - half, half : a.shape[1] - half]

    mu_x, mu_y = blur(x), blur(ref)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(ref * ref) - mu_y * mu_y
    cov = blur(x * ref) - mu_x * mu_y
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim(x, ref, cfg: SSIMConfig | None = None, data_range: float | None = None) -> float:
    """Mean structural similarity of two 2D images."""
    if cfg is None:
        if data_range is None:
            data_range = float(np.max(as_array(ref)))
        cfg = SSIMConfig(data_range=data_range)
    return float(np.mean(ssim_map(x, ref, cfg)))


def ssim_volume(x, ref, data_range: float | None = None) -> float:
    """Mean SSIM over axial slices, using one global ``data_range``."""
    x, ref = _pair(x, ref)
    if data_range is None:
        data_range = float(ref.max())
    cfg = SSIMConfig(data_range=data_range)
    return float(np.mean([ssim(a, b, cfg) for a, b in zip(x, ref)]))


METRIC_FIELDS = ("volume_id", "method", "psnr_db", "ssim")


def write_metrics_csv(path, rows) -> None:
    """Rows are mappings with at least the :data:`METRIC_FIELDS` keys."""
    rows = list(rows)
    extra = sorted({k for r in rows for k in r} - set(METRIC_FIELDS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(METRIC_FIELDS) + extra)
        w.writeheader()
        for r in rows:
            w.writerow(r)
