import csv

import numpy as np
import pytest

from hqsct.data import Volume3D
from hqsct.errors import InvalidSpecError, NumericError
from hqsct.projector import forward_project
from hqsct.solvers import (
    HQSConfig,
    ReconTrace,
    cg_normal_solve,
    gradient3d,
    gradient3d_adjoint,
    hqs_reconstruct,
    quadratic_mbir_baseline,
)

BETA = 5e-2


@pytest.fixture(scope="module")
def problem(oracle_geom, oracle_matrix):
    rng = np.random.default_rng(42)
    x_true = rng.uniform(0, 1, oracle_geom.volume_shape)
    b = (oracle_matrix @ x_true.ravel()).reshape(oracle_geom.projection_shape)
    b += 0.01 * rng.standard_normal(b.shape)
    z = x_true + 0.1 * rng.standard_normal(x_true.shape)
    return oracle_geom, oracle_matrix, b, z


def dense_solution(a, b, z, beta):
    h = a.T @ a + beta * np.eye(a.shape[1])
    return np.linalg.solve(h, a.T @ b.ravel() + beta * z.ravel())


def identity(v):
    return v.copy()


def test_cg_matches_dense_solve(problem):
    g, a, b, z = problem
    x = cg_normal_solve(z, b, g, BETA, 200).data.ravel()
    ref = dense_solution(a, b, z, BETA)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-5


@pytest.mark.parametrize("x0", ["zero", "z", "random"])
def test_cg_objective_monotone(problem, x0):
    g, a, b, z = problem
    start = {"zero": None, "z": z, "random": np.random.default_rng(1).standard_normal(z.shape)}[x0]
    _, info = cg_normal_solve(z, b, g, BETA, 30, x0=start, return_info=True)
    obj = np.array(info.objective)
    assert np.all(np.diff(obj) <= 1e-12 * abs(obj[0]))
    # the tracked objective is the exact quadratic
    x = cg_normal_solve(z, b, g, BETA, 30, x0=start).data.ravel()
    exact = 0.5 * np.sum((a @ x - b.ravel()) ** 2) + 0.5 * BETA * np.sum((x - z.ravel()) ** 2)
    assert obj[-1] == pytest.approx(exact, rel=1e-10)


def test_large_beta_returns_prior(problem):
    g, _, b, z = problem
    x = cg_normal_solve(z, b, g, 1e6, 10).data
    assert np.max(np.abs(x - z)) < 1e-3


def test_consistent_start_is_fixed_point(problem):
    g, _, _, z = problem
    b = forward_project(z, g)
    x = cg_normal_solve(z, b, g, BETA, 10, x0=z).data
    assert np.array_equal(x, z)


def test_storage_order_invariance(problem):
    g, _, b, z = problem
    a = cg_normal_solve(z, b, g, BETA, 10).data
    c = cg_normal_solve(np.asfortranarray(z), np.asfortranarray(b), g, BETA, 10).data
    assert np.array_equal(a, c)


def test_cg_rejects_non_finite(problem):
    g, _, b, z = problem
    bad = z.copy()
    bad[0, 0, 0] = np.inf
    with pytest.raises(NumericError):
        cg_normal_solve(bad, b, g, BETA, 10)
    with pytest.raises(InvalidSpecError):
        cg_normal_solve(z, b, g, 0.0, 10)


def test_hqs_identity_denoiser_reduces_data_misfit(problem):
    g, _, b, _ = problem
    cfg = HQSConfig(K=4, warm_start="previous")
    x0 = Volume3D(np.zeros(g.volume_shape), g.voxel_size)
    _, trace = hqs_reconstruct(b, g, cfg, [identity] * 4, x0)
    fid = np.array(trace.data_fidelity)
    assert np.all(np.diff(fid) < 0)
    assert all(a >= c for a, c in zip(trace.objective_before_dc, trace.objective_after_dc))


def test_k_zero_returns_init(problem):
    g, _, b, z = problem
    x, trace = hqs_reconstruct(b, g, HQSConfig(K=0), [], z)
    assert np.array_equal(x.data, z) and len(trace) == 0


def test_shared_and_unshared_agree_for_equal_weights(problem):
    g, _, b, z = problem

    def shrink(v):
        return Volume3D(0.9 * v.data, v.voxel_size)

    xs, _ = hqs_reconstruct(b, g, HQSConfig(weight_mode="shared"), {"shared": shrink}, z)
    xu, _ = hqs_reconstruct(b, g, HQSConfig(), {f"stage{n}": shrink for n in (1, 2, 3)}, z)
    assert np.array_equal(xs.data, xu.data)


def test_missing_denoiser_is_reported(problem):
    g, _, b, z = problem
    with pytest.raises(InvalidSpecError, match="stage3"):
        hqs_reconstruct(b, g, HQSConfig(), {"stage1": identity, "stage2": identity}, z)
    with pytest.raises(InvalidSpecError):
        HQSConfig(weight_mode="shared", denoiser_ids=("a", "b", "c"))


def test_beta_knob_trades_fit_for_prior(problem):
    g, _, b, z = problem
    dist, fid = [], []
    for beta in (1e-3, 1e-1, 10.0):
        x, info = cg_normal_solve(z, b, g, beta, 200, return_info=True)
        dist.append(np.linalg.norm(x.data - z))
        fid.append(info.data_fidelity)
    assert dist[0] > dist[1] > dist[2]
    assert fid[0] < fid[1] < fid[2]


def test_trace_csv(problem, tmp_path):
    g, _, b, z = problem
    _, trace = hqs_reconstruct(b, g, HQSConfig(K=2), [identity] * 2, z, reference=z)
    assert isinstance(trace, ReconTrace) and len(trace.psnr) == 2
    trace.to_csv(tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert [r["iteration"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"iteration", "objective_before_dc", "objective_after_dc", "data_fidelity", "psnr"}


def test_gradient_adjoint(rng):
    x = rng.standard_normal((4, 5, 6))
    y = rng.standard_normal((3, 4, 5, 6))
    assert np.vdot(gradient3d(x), y) == pytest.approx(np.vdot(x, gradient3d_adjoint(y)), rel=1e-12)
    assert not gradient3d(np.full((3, 3, 3), 2.0)).any()


def test_baseline_matches_dense_regularized_solve(problem):
    g, a, b, _ = problem
    lam = 0.5
    n = a.shape[1]
    gm = np.stack([gradient3d(e.reshape(g.volume_shape)).ravel() for e in np.eye(n)], axis=1)
    ref = np.linalg.solve(a.T @ a + lam * gm.T @ gm, a.T @ b.ravel())
    x = quadratic_mbir_baseline(b, g, lam, iters=200).data.ravel()
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-5


def test_baseline_unregularized_tends_to_min_norm(problem):
    # cond(A) is about 600 here, so plain CG needs far more than 200 steps
    g, a, b, _ = problem
    ref = np.linalg.pinv(a) @ b.ravel()
    x = quadratic_mbir_baseline(b, g, 0.0, iters=3000).data.ravel()
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8
