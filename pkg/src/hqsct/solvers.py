"""Data-consistency CG, the learnt HQS outer loop, and a quadratic baseline.

The HQS iteration alternates

    z_{n+1} = D_{n+1}(x_n)                                   (denoiser stage)
    x_{n+1} = (A^T A + beta I)^{-1} (A^T b + beta z_{n+1})   (CG, fixed steps)

so that each outer step approximately minimizes
``1/2 ||A x - b||^2 + beta/2 ||x - z_{n+1}||^2``.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping

import numpy as np

from ._validation import check_projections, check_scalar, check_volume
from .data import Volume3D
from .errors import InvalidSpecError, NumericError
from .geometry import ConeBeamGeometry
from .metrics import psnr
from .projector import _adjoint, _forward

logger = logging.getLogger(__name__)

WeightMode = Literal["shared", "unshared"]


@dataclass(frozen=True)
class HQSConfig:
    """Outer-loop settings.

    ``warm_start`` picks the CG starting point of every data-consistency
    step: ``"denoised"`` starts from the stage output ``z_{n+1}``,
    ``"previous"`` from the previous iterate ``x_n``.
    """

    K: int = 3
    beta: float = 5e-2
    cg_iters: int = 10
    weight_mode: WeightMode = "unshared"
    denoiser_ids: tuple[str, ...] | None = None
    warm_start: Literal["denoised", "previous"] = "previous"
    nonneg_output: bool = False

    def __post_init__(self):
        check_scalar(self.K, "K", 0, target_type=int)
        check_scalar(self.beta, "beta", 0, include_min=False)
        check_scalar(self.cg_iters, "cg_iters", 1, target_type=int)
        if self.weight_mode not in ("shared", "unshared"):
            raise InvalidSpecError(f"weight_mode must be shared or unshared, got {self.weight_mode!r}")
        if self.warm_start not in ("denoised", "previous"):
            raise InvalidSpecError(f"unknown warm_start {self.warm_start!r}")
        if self.denoiser_ids is None:
            ids = ("shared",) * self.K if self.weight_mode == "shared" else tuple(
                f"stage{n + 1}" for n in range(self.K)
            )
            object.__setattr__(self, "denoiser_ids", ids)
        else:
            object.__setattr__(self, "denoiser_ids", tuple(self.denoiser_ids))
        if len(self.denoiser_ids) != self.K:
            raise InvalidSpecError(f"need {self.K} denoiser ids, got {len(self.denoiser_ids)}")
        if self.weight_mode == "shared" and len(set(self.denoiser_ids)) > 1:
            raise InvalidSpecError("shared mode requires a single denoiser id")

    @classmethod
    def full_size(cls) -> "HQSConfig":
        """Outer-loop settings of the full-size experiment."""
        return cls(K=3, beta=5e-2, cg_iters=10, weight_mode="unshared")


@dataclass
class CGInfo:
    objective: list[float] = field(default_factory=list)
    residual_norms: list[float] = field(default_factory=list)
    data_fidelity: float = float("nan")


@dataclass
class ReconTrace:
    """Per-outer-iteration record of an HQS run."""

    objective_before_dc: list[float] = field(default_factory=list)
    objective_after_dc: list[float] = field(default_factory=list)
    data_fidelity: list[float] = field(default_factory=list)
    cg_objective: list[list[float]] = field(default_factory=list)
    cg_residual_norms: list[list[float]] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.objective_after_dc)

    def rows(self):
        for n in range(len(self)):
            yield {
                "iteration": n + 1,
                "objective_before_dc": self.objective_before_dc[n],
                "objective_after_dc": self.objective_after_dc[n],
                "data_fidelity": self.data_fidelity[n],
                "psnr": self.psnr[n] if self.psnr else "",
            }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(
                fh, fieldnames=["iteration", "objective_before_dc", "objective_after_dc", "data_fidelity", "psnr"]
            )
            w.writeheader()
            w.writerows(self.rows())


def _dc_objective(ax, b, x, z, beta):
    res = ax - b
    fid = 0.5 * float(np.vdot(res, res))
    dz = x - z
    return fid + 0.5 * beta * float(np.vdot(dz, dz)), fid


def cg_normal_solve(
    z,
    b,
    geom: ConeBeamGeometry,
    beta: float,
    cg_iters: int,
    x0=None,
    return_info: bool = False,
):
    """Run ``cg_iters`` CG steps on ``(A^T A + beta I) x = A^T b + beta z``.

    Parameters
    ----------
    z : Volume3D or ndarray
        Denoiser output the solution is pulled towards.
    b : ProjectionStack or ndarray
        Measurements on ``geom``.
    beta : float
        Penalty weight, must be positive.
    cg_iters : int
        Fixed number of iterations; no residual stopping rule.
    x0 : Volume3D or ndarray, optional
        Starting point, zero when omitted.
    return_info : bool
        Also return a :class:`CGInfo` with the quadratic objective at the
        start and after every step, and the residual norms.

    Returns
    -------
    Volume3D or (Volume3D, CGInfo)
    """
    check_scalar(beta, "beta", 0, include_min=False)
    check_scalar(cg_iters, "cg_iters", 0, target_type=int)
    zz = np.ascontiguousarray(check_volume(z, geom, finite=True), dtype=np.float64)
    bb = np.ascontiguousarray(check_projections(b, geom, finite=True), dtype=np.float64)
    if x0 is None:
        x = np.zeros_like(zz)
    else:
        x = np.array(check_volume(x0, geom, finite=True), dtype=np.float64, order="C")

    info = CGInfo()
    ax = _forward(x, geom)
    rhs = _adjoint(bb, geom) + beta * zz
    r = rhs - (_adjoint(ax, geom) + beta * x)
    obj, fid = _dc_objective(ax, bb, x, zz, beta)
    info.objective.append(obj)
    rs = float(np.vdot(r, r))
    info.residual_norms.append(np.sqrt(rs))
    p = r.copy()
    for _ in range(cg_iters):
        if rs == 0.0:
            break
        ap = _forward(p, geom)
        hp = _adjoint(ap, geom) + beta * p
        alpha = rs / float(np.vdot(p, hp))
        x += alpha * p
        ax += alpha * ap
        r -= alpha * hp
        rs_new = float(np.vdot(r, r))
        p *= rs_new / rs
        p += r
        rs = rs_new
        obj, fid = _dc_objective(ax, bb, x, zz, beta)
        info.objective.append(obj)
        info.residual_norms.append(np.sqrt(rs))
    if not np.all(np.isfinite(x)):
        raise NumericError("CG produced non-finite values")
    info.data_fidelity = fid
    out = Volume3D(x, geom.voxel_size)
    return (out, info) if return_info else out


Denoiser = Callable[[Volume3D], Volume3D]


def _resolve_denoisers(cfg: HQSConfig, denoisers) -> list[Denoiser]:
    from .denoise import DenoiserParams, apply_denoiser_volume

    if isinstance(denoisers, Mapping):
        missing = [i for i in dict.fromkeys(cfg.denoiser_ids) if i not in denoisers]
        if missing:
            raise InvalidSpecError(f"missing stage denoisers {missing}")
        stages = [denoisers[i] for i in cfg.denoiser_ids]
    else:
        stages = list(denoisers) if denoisers is not None else []
        if len(stages) == 1 and cfg.K > 1 and cfg.weight_mode == "shared":
            stages = stages * cfg.K
        if len(stages) < cfg.K:
            raise InvalidSpecError(f"missing stage denoisers: got {len(stages)} for K={cfg.K}")

    resolved = []
    for d in stages[: cfg.K]:
        if isinstance(d, DenoiserParams):
            resolved.append(lambda v, _p=d: apply_denoiser_volume(_p, v))
        elif callable(d):
            resolved.append(d)
        else:
            raise InvalidSpecError(f"stage denoiser {d!r} is neither DenoiserParams nor callable")
    return resolved


def hqs_stage(x, b, geom, denoiser: Denoiser, cfg: HQSConfig, beta: float | None = None):
    """One outer iteration; returns ``(x_next, z, CGInfo)``."""
    beta = cfg.beta if beta is None else beta
    z = denoiser(x if isinstance(x, Volume3D) else Volume3D(x, geom.voxel_size))
    z = z if isinstance(z, Volume3D) else Volume3D(z, geom.voxel_size)
    start = z if cfg.warm_start == "denoised" else x
    x_next, info = cg_normal_solve(z, b, geom, beta, cfg.cg_iters, x0=start, return_info=True)
    return x_next, z, info


def hqs_reconstruct(
    b,
    geom: ConeBeamGeometry,
    cfg: HQSConfig,
    denoisers,
    x_init,
    reference=None,
    beta: float | None = None,
) -> tuple[Volume3D, ReconTrace]:
    """Learnt half-quadratic splitting reconstruction.

    Parameters
    ----------
    b : ProjectionStack
        Sparse-view measurements.
    cfg : HQSConfig
    denoisers : mapping or sequence
        Stage denoisers, keyed by ``cfg.denoiser_ids`` or listed in stage
        order. Entries are :class:`~hqsct.denoise.DenoiserParams` or callables
        mapping a volume to a volume.
    x_init : Volume3D
        Starting image, usually the FDK reconstruction of ``b``.
    reference : Volume3D, optional
        When given, PSNR of every iterate is recorded in the trace.
    beta : float, optional
        Inference-time override of ``cfg.beta``.
    """
    check_projections(b, geom, finite=True)
    x = Volume3D(np.asarray(check_volume(x_init, geom, finite=True), dtype=np.float64), geom.voxel_size)
    stages = _resolve_denoisers(cfg, denoisers)
    trace = ReconTrace()
    ref = None if reference is None else np.asarray(check_volume(reference, geom), dtype=np.float64)
    for n in range(cfg.K):
        t0 = time.perf_counter()
        x, _, info = hqs_stage(x, b, geom, stages[n], cfg, beta)
        trace.seconds.append(time.perf_counter() - t0)
        trace.objective_before_dc.append(info.objective[0])
        trace.objective_after_dc.append(info.objective[-1])
        trace.cg_objective.append(info.objective)
        trace.cg_residual_norms.append(info.residual_norms)
        trace.data_fidelity.append(info.data_fidelity)
        if ref is not None:
            trace.psnr.append(psnr(x.data, ref))
        logger.debug("hqs iteration %d: objective %.6g -> %.6g", n + 1, info.objective[0], info.objective[-1])
    if cfg.nonneg_output:
        x = Volume3D(np.maximum(x.data, 0.0), geom.voxel_size)
    return x, trace


def gradient3d(x: np.ndarray) -> np.ndarray:
    """Forward differences along z, y, x; zero in the last plane of each axis."""
    g = np.zeros((3,) + x.shape, dtype=np.float64)
    g[0, :-1] = x[1:] - x[:-1]
    g[1, :, :-1] = x[:, 1:] - x[:, :-1]
    g[2, :, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    return g


def gradient3d_adjoint(g: np.ndarray) -> np.ndarray:
    out = np.zeros(g.shape[1:], dtype=np.float64)
    out[:-1] -= g[0, :-1]
    out[1:] += g[0, :-1]
    out[:, :-1] -= g[1, :, :-1]
    out[:, 1:] += g[1, :, :-1]
    out[:, :, :-1] -= g[2, :, :, :-1]
    out[:, :, 1:] += g[2, :, :, :-1]
    return out


def conjugate_gradient(apply_op, rhs: np.ndarray, x0: np.ndarray, iters: int) -> np.ndarray:
    """Plain CG for a symmetric positive (semi-)definite operator."""
    x = np.array(x0, dtype=np.float64)
    r = rhs - apply_op(x)
    p = r.copy()
    rs = float(np.vdot(r, r))
    for _ in range(iters):
        if rs == 0.0:
            break
        hp = apply_op(p)
        curv = float(np.vdot(p, hp))
        if curv <= 0.0:
            break
        alpha = rs / curv
        x += alpha * p
        r -= alpha * hp
        rs_new = float(np.vdot(r, r))
        p *= rs_new / rs
        p += r
        rs = rs_new
    return x


def quadratic_mbir_baseline(b, geom: ConeBeamGeometry, lam: float, iters: int = 200, x0=None) -> Volume3D:
    """Regularized least squares ``||A x - b||^2 + lam ||G x||^2`` by CG.

    ``G`` is the 3D forward-difference gradient; CG runs on
    ``(A^T A + lam G^T G) x = A^T b`` for exactly ``iters`` steps.
    """
    check_scalar(lam, "lambda", 0)
    check_scalar(iters, "iters", 0, target_type=int)
    bb = np.asarray(check_projections(b, geom, finite=True), dtype=np.float64)
    x = np.zeros(geom.volume_shape) if x0 is None else np.asarray(check_volume(x0, geom, finite=True), dtype=np.float64)

    def apply_op(v):
        out = _adjoint(_forward(v, geom), geom)
        if lam:
            out += lam * gradient3d_adjoint(gradient3d(v))
        return out

    sol = conjugate_gradient(apply_op, _adjoint(bb, geom), x, iters)
    if not np.all(np.isfinite(sol)):
        raise NumericError("baseline CG produced non-finite values")
    return Volume3D(sol, geom.voxel_size)
