"""Dataset simulation and stage-sequential training of the HQS denoisers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .analytic import FilterConfig, fdk_reconstruct
from .data import ProjectionStack, Volume3D
from .denoise import DenoiserParams, TrainConfig, UNetArch, init_params, train_stage
from .errors import InvalidSpecError
from .geometry import ConeBeamGeometry, subsample_views
from .phantoms import NoiseModel, PhantomSpec, make_ellipsoid_phantom, simulate_scan
from .solvers import HQSConfig, _resolve_denoisers, hqs_stage

logger = logging.getLogger(__name__)


@dataclass
class ScanCase:
    """One simulated object with everything the pipeline derives from it."""

    phantom: Volume3D
    dense: ProjectionStack
    sparse: ProjectionStack
    target: Volume3D
    fdk_sparse: Volume3D


def simulate_case(
    geom_dense: ConeBeamGeometry,
    factor: int,
    phantom_spec: PhantomSpec,
    noise: NoiseModel = NoiseModel(),
    filter_cfg: FilterConfig = FilterConfig(),
) -> tuple[ScanCase, ConeBeamGeometry]:
    """Phantom, dense scan, subsampled scan, dense FDK target and sparse FDK input."""
    phantom = make_ellipsoid_phantom(geom_dense.vol_dims, geom_dense.voxel_size, phantom_spec)
    dense = simulate_scan(phantom, geom_dense, noise)
    sparse, geom_sparse = subsample_views(dense, geom_dense, factor)
    target = fdk_reconstruct(dense, geom_dense, filter_cfg)
    fdk_sparse = fdk_reconstruct(sparse, geom_sparse, filter_cfg)
    return ScanCase(phantom, dense, sparse, target, fdk_sparse), geom_sparse


@dataclass
class StageTrainingResult:
    denoisers: dict[str, DenoiserParams]
    losses: list[list[float]] = field(default_factory=list)
    iterates: list[list[Volume3D]] = field(default_factory=list)


def train_hqs_stages(
    measurements,
    geom: ConeBeamGeometry,
    x_init,
    targets,
    cfg: HQSConfig,
    train_cfg: TrainConfig = TrainConfig(),
    arch: UNetArch = UNetArch(),
    seed: int = 0,
    keep_iterates: bool = False,
) -> StageTrainingResult:
    """Train the K stage denoisers one after another.

    Stage ``n`` is trained to completion on the current iterates of all
    training volumes, then every volume is advanced through the denoiser
    and the data-consistency solve to produce the inputs of stage ``n + 1``.
    In shared mode the single parameter set keeps training at every stage.
    """
    if not (len(measurements) == len(x_init) == len(targets)) or not measurements:
        raise InvalidSpecError("measurements, x_init and targets must be non-empty and aligned")
    xs = [Volume3D(np.asarray(x.data, dtype=np.float64), geom.voxel_size) for x in x_init]
    denoisers: dict[str, DenoiserParams] = {}
    result = StageTrainingResult(denoisers)
    if keep_iterates:
        result.iterates.append(list(xs))
    for n, stage_id in enumerate(cfg.denoiser_ids):
        init = denoisers.get(stage_id)
        if init is None:
            init = init_params(arch, seed=seed + n)
        stage_cfg = replace(train_cfg, seed=train_cfg.seed + n)
        params, losses = train_stage(xs, targets, stage_cfg, init, return_losses=True)
        params.meta = {"stage": n + 1, "id": stage_id}
        denoisers[stage_id] = params
        result.losses.append(losses)
        logger.info("stage %d (%s): loss %.4e -> %.4e", n + 1, stage_id, losses[0], losses[-1])
        stage = _resolve_denoisers(replace(cfg, K=1, denoiser_ids=(stage_id,)), {stage_id: params})[0]
        xs = [hqs_stage(x, b, geom, stage, cfg)[0] for x, b in zip(xs, measurements)]
        if keep_iterates:
            result.iterates.append(list(xs))
    return result
