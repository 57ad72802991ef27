"""Per-stage denoiser training, slice-by-slice inference and weight files."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .._validation import check_volume
from ..data import Volume3D
from ..errors import DimensionError, FormatError, InvalidSpecError, TruncationError
from .optim import AdamHyper, AdamState, adam_step
from .patches import extract_patch_pairs
from .unet import DenoiserParams, UNetArch, backward_from_cache, forward_with_cache

logger = logging.getLogger(__name__)

NORM_PERCENTILE = 99.9


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one stage (desk-scale defaults)."""

    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    patch_size: int = 64
    patch_stride: int = 64
    seed: int = 0
    normalization: str = "volume"

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidSpecError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("batch_size", "patch_size", "patch_stride"):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be positive")
        if not self.learning_rate > 0 or not self.adam_eps > 0:
            raise InvalidSpecError("learning_rate and adam_eps must be positive")
        if self.normalization not in ("volume", "stage"):
            raise InvalidSpecError(f"unknown normalization {self.normalization!r}")

    @classmethod
    def full_size(cls) -> "TrainConfig":
        """256x256 patches, batch 64, Adam at 1e-4 for 500 epochs."""
        return cls(epochs=500, batch_size=64, learning_rate=1e-4, patch_size=256, patch_stride=124)

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(self.learning_rate, self.adam_betas[0], self.adam_betas[1], self.adam_eps)


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target
    return float(np.mean(diff * diff))


def volume_scale(vol) -> float:
    """99.9th percentile of a volume, or 1 when it is not positive."""
    s = float(np.percentile(check_volume(vol), NORM_PERCENTILE))
    return s if s > 0 else 1.0


def train_stage(
    inputs,
    targets,
    cfg: TrainConfig,
    init: DenoiserParams,
    return_losses: bool = False,
):
    """Fit one stage denoiser to map input-volume patches to target patches.

    ``init`` is never modified; a trained copy is returned. Each input/target
    pair is divided by the input volume's 99.9th percentile. With
    ``return_losses`` the per-epoch mean training loss (including the loss
    of ``init`` as entry 0) is returned too.
    """
    params = init.copy()
    params.normalization = cfg.normalization
    scales = [volume_scale(v) for v in inputs]
    params.norm_scale = float(np.mean(scales)) if scales else 1.0
    if cfg.normalization == "stage":
        scales = [params.norm_scale] * len(scales)
    data = extract_patch_pairs(inputs, targets, cfg.patch_size, cfg.patch_stride, scales, dtype=params.dtype)
    n = len(data)
    if n == 0:
        raise InvalidSpecError("empty patch set")
    if cfg.batch_size > n:
        raise InvalidSpecError(f"batch_size {cfg.batch_size} exceeds the {n} available patches")
    div = 2**params.arch.depth
    if cfg.patch_size % div:
        raise DimensionError(f"patch size {cfg.patch_size} is not divisible by {div}")

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(params.tensors)
    losses = [evaluate_loss(params, data.inputs, data.targets, cfg.batch_size)] if return_losses else []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = data.inputs[idx], data.targets[idx]
            out, cache = forward_with_cache(params, x)
            diff = out - y
            total += float(np.sum(diff.astype(np.float64) ** 2))
            grads = backward_from_cache(params, cache, (2.0 / diff.size) * diff)
            adam_step(params.tensors, grads, state, cfg.hyper)
        epoch_loss = total / data.inputs.size
        if return_losses:
            losses.append(epoch_loss)
        logger.info("epoch %d/%d: loss %.4e", epoch + 1, cfg.epochs, epoch_loss)
    return (params, losses) if return_losses else params


def evaluate_loss(params: DenoiserParams, inputs, targets, batch_size: int = 16) -> float:
    total = 0.0
    for start in range(0, len(inputs), batch_size):
        out, _ = forward_with_cache(params, inputs[start : start + batch_size])
        total += float(np.sum((out.astype(np.float64) - targets[start : start + batch_size]) ** 2))
    return total / np.asarray(inputs).size


def apply_denoiser_volume(params: DenoiserParams, vol, batch_size: int = 16) -> Volume3D:
    """Denoise every axial slice independently.

    Slices are edge-padded to a multiple of ``2**depth`` and cropped back.
    The volume is divided by its normalization scale before the network and
    multiplied by it afterwards.
    """
    x = np.asarray(check_volume(vol), dtype=np.float64)
    voxel = vol.voxel_size if isinstance(vol, Volume3D) else 1.0
    scale = volume_scale(x) if params.normalization == "volume" else params.norm_scale
    nz, ny, nx = x.shape
    div = 2**params.arch.depth
    py, px = (-ny) % div, (-nx) % div
    slices = (x / scale).astype(params.dtype)
    if py or px:
        slices = np.pad(slices, ((0, 0), (0, py), (0, px)), mode="edge")
    out = np.empty((nz, ny, nx), dtype=np.float64)
    for start in range(0, nz, batch_size):
        y, _ = forward_with_cache(params, slices[start : start + batch_size])
        out[start : start + batch_size] = y[:, :ny, :nx]
    out *= scale
    return Volume3D(out, voxel)


# --- weight files -----------------------------------------------------------

_MAGIC = b"CBDN"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_params(path, params: DenoiserParams) -> None:
    """Write ``CBDN | u32 version | u32 header length | JSON header | f32 payload``."""
    header = {
        "format_version": FORMAT_VERSION,
        "arch": asdict(params.arch),
        "norm_scale": params.norm_scale,
        "normalization": params.normalization,
        "tensors": [[name, list(t.shape)] for name, t in params.tensors.items()],
        "meta": params.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(_MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_params(path) -> DenoiserParams:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise TruncationError(path, _PREFIX.size, len(raw))
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[_PREFIX.size : _PREFIX.size + hlen].decode("utf-8"))
    offset = _PREFIX.size + hlen
    expected = offset + 4 * sum(int(np.prod(s)) for _, s in header["tensors"])
    if len(raw) < expected:
        raise TruncationError(path, expected - offset, len(raw) - offset)
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * count
    return DenoiserParams(
        UNetArch(**header["arch"]),
        tensors,
        float(header["norm_scale"]),
        header["normalization"],
        header.get("meta", {}),
    )
