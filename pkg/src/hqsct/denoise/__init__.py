"""Learned 2D slice denoiser used as the proximal step of the HQS loop."""

from .optim import AdamHyper, AdamState, adam_step
from .patches import PatchSet, extract_patch_pairs, extract_patches, reassemble_patches, tile_starts
from .training import (
    TrainConfig,
    apply_denoiser_volume,
    load_params,
    mse_loss,
    save_params,
    train_stage,
    volume_scale,
)
from .unet import (
    DenoiserParams,
    UNetArch,
    backward_from_cache,
    forward_with_cache,
    init_params,
    unet_backward,
    unet_forward,
    zero_params,
)

__all__ = [
    "AdamHyper",
    "AdamState",
    "DenoiserParams",
    "PatchSet",
    "TrainConfig",
    "UNetArch",
    "adam_step",
    "apply_denoiser_volume",
    "backward_from_cache",
    "extract_patch_pairs",
    "extract_patches",
    "forward_with_cache",
    "init_params",
    "load_params",
    "mse_loss",
    "reassemble_patches",
    "save_params",
    "tile_starts",
    "train_stage",
    "unet_backward",
    "unet_forward",
    "volume_scale",
    "zero_params",
]
