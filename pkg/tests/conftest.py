import numpy as np
import pytest

from hqsct.geometry import make_circular_geometry


def small_geometry(n_views=12, det=16, n=8, **kw):
    """8^3 / 12-view / 16x16 oracle geometry used across the suite."""
    params = dict(
        source_to_origin=20.0,
        source_to_detector=40.0,
        det_rows=det,
        det_cols=det,
        det_pixel_pitch=0.5,
        n_views=n_views,
        vol_dims=(n, n, n),
        voxel_size=0.25,
    )
    params.update(kw)
    return make_circular_geometry(**params)


@pytest.fixture(scope="session")
def oracle_geom():
    return small_geometry()


@pytest.fixture(scope="session")
def oracle_matrix(oracle_geom):
    from hqsct.projector import materialize_matrix

    return materialize_matrix(oracle_geom)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, message); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, message = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {message}")
