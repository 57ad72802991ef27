import csv

import numpy as np
import pytest

from hqsct.errors import DimensionError, InvalidSpecError
from hqsct.metrics import SSIMConfig, gaussian_window, psnr, ssim, ssim_map, ssim_volume, write_metrics_csv


def brute_ssim(x, y, data_range, size=11, sigma=1.5):
    t = np.arange(size) - (size - 1) / 2
    w = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / (2 * sigma**2))
    w /= w.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a, b = x[i : i + size, j : j + size], y[i : i + size, j : j + size]
            ma, mb = (w * a).sum(), (w * b).sum()
            va = (w * (a - ma) ** 2).sum()
            vb = (w * (b - mb) ** 2).sum()
            cov = (w * (a - ma) * (b - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return np.mean(vals)


def test_psnr_known_value():
    ref = np.zeros((10, 10))
    ref[0, 0] = 1.0
    x = ref + 0.1
    assert psnr(x, ref) == pytest.approx(20.0)


def test_psnr_identical_is_inf():
    ref = np.random.default_rng(0).uniform(size=(5, 5))
    assert psnr(ref, ref) == float("inf")


def test_psnr_symmetric_with_fixed_range(rng):
    a, b = rng.uniform(size=(2, 16, 16))
    assert psnr(a, b, data_range=1.0) == psnr(b, a, data_range=1.0)


def test_psnr_validation():
    with pytest.raises(DimensionError):
        psnr(np.zeros(3), np.zeros(4))
    with pytest.raises(InvalidSpecError):
        psnr(np.ones(3), np.zeros(3))


def test_gaussian_window_normalized():
    g = gaussian_window()
    assert g.sum() == pytest.approx(1.0)
    assert g[5] == g.max()
    np.testing.assert_allclose(g, g[::-1])


def test_ssim_identity():
    x = np.random.default_rng(2).uniform(size=(20, 20))
    assert ssim(x, x) == pytest.approx(1.0)


def test_ssim_constant_images_closed_form():
    a, b, r = 0.3, 0.7, 1.0
    c1 = (0.01 * r) ** 2
    got = ssim(np.full((16, 16), a), np.full((16, 16), b), SSIMConfig(data_range=r))
    assert got == pytest.approx((2 * a * b + c1) / (a * a + b * b + c1), rel=1e-12)


def test_ssim_matches_brute_force(rng):
    x = rng.uniform(size=(19, 23))
    y = np.clip(x + 0.2 * rng.standard_normal(x.shape), 0, None)
    assert ssim(x, y, data_range=1.0) == pytest.approx(brute_ssim(x, y, 1.0), abs=1e-6)
    assert ssim_map(x, y, SSIMConfig()).shape == (9, 13)


def test_ssim_decreases_with_noise(rng):
    x = np.zeros((48, 48))
    x[10:30, 12:40] = 1.0
    scores = [ssim(x + s * rng.standard_normal(x.shape), x, data_range=1.0) for s in (0.01, 0.05, 0.2, 0.5)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_ssim_validation():
    with pytest.raises(DimensionError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), data_range=1.0)
    with pytest.raises(InvalidSpecError):
        SSIMConfig(window=4)


def test_ssim_volume_is_slice_mean(rng):
    ref = rng.uniform(size=(3, 12, 12))
    x = ref + 0.05 * rng.standard_normal(ref.shape)
    r = float(ref.max())
    expected = np.mean([ssim(x[k], ref[k], data_range=r) for k in range(3)])
    assert ssim_volume(x, ref) == pytest.approx(expected)


def test_metrics_csv(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [{"volume_id": "p0", "method": "fdk", "psnr_db": 21.5, "ssim": 0.7}])
    rows = list(csv.DictReader(open(path)))
    assert rows == [{"volume_id": "p0", "method": "fdk", "psnr_db": "21.5", "ssim": "0.7"}]
