"""Axial 2D patch extraction and reassembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._validation import check_volume
from ..errors import DimensionError, InvalidSpecError


def tile_starts(length: int, p: int, stride: int) -> list[int]:
    """Grid start offsets with the last patch aligned to the far edge."""
    if p > length:
        raise DimensionError(f"patch size {p} exceeds slice extent {length}")
    if stride < 1:
        raise InvalidSpecError(f"stride must be >= 1, got {stride}")
    starts = list(range(0, length - p + 1, stride))
    if starts[-1] != length - p:
        starts.append(length - p)
    return starts


def extract_patches(vol, p: int, stride: int):
    """Tile every axial slice of ``vol`` with ``p x p`` patches.

    Returns
    -------
    patches : ndarray, shape (n, p, p)
    corners : ndarray, shape (n, 3)
        ``(slice, row, col)`` of each patch's upper-left corner.
    """
    x = check_volume(vol)
    nz, ny, nx = x.shape
    rows, cols = tile_starts(ny, p, stride), tile_starts(nx, p, stride)
    corners = np.array([(k, r, c) for k in range(nz) for r in rows for c in cols], dtype=np.int64)
    patches = np.stack([x[k, r : r + p, c : c + p] for k, r, c in corners])
    return patches, corners


def reassemble_patches(patches: np.ndarray, corners: np.ndarray, shape) -> np.ndarray:
    """Inverse of :func:`extract_patches`; overlapping values are averaged."""
    acc = np.zeros(shape, dtype=np.float64)
    hits = np.zeros(shape, dtype=np.float64)
    p = patches.shape[-1]
    for patch, (k, r, c) in zip(patches, corners):
        acc[k, r : r + p, c : c + p] += patch
        hits[k, r : r + p, c : c + p] += 1.0
    covered = hits > 0
    acc[covered] /= hits[covered]
    return acc.astype(patches.dtype, copy=False)


@dataclass
class PatchSet:
    """Aligned (input, target) patch pairs with provenance.

    ``meta`` rows are ``(volume_id, slice, row, col)``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    meta: np.ndarray

    def __post_init__(self):
        if self.inputs.shape != self.targets.shape:
            raise DimensionError(f"inputs {self.inputs.shape} and targets {self.targets.shape} differ")
        if len(self.meta) != len(self.inputs):
            raise DimensionError("metadata rows do not match the number of patches")

    def __len__(self):
        return len(self.inputs)

    @property
    def patch_size(self) -> int:
        return self.inputs.shape[-1]


def extract_patch_pairs(inputs, targets, p: int, stride: int, scales=None, dtype=np.float32) -> PatchSet:
    """Patch pairs from aligned volume lists; ``scales[i]`` divides volume pair ``i``."""
    if len(inputs) != len(targets):
        raise DimensionError(f"{len(inputs)} input volumes but {len(targets)} targets")
    xs, ys, meta = [], [], []
    for i, (vin, vt) in enumerate(zip(inputs, targets)):
        a = check_volume(vin)
        if a.shape != check_volume(vt).shape:
            raise DimensionError(f"volume pair {i} has mismatched shapes")
        s = 1.0 if scales is None else float(scales[i])
        pi, corners = extract_patches(np.asarray(a) / s, p, stride)
        pt, _ = extract_patches(np.asarray(check_volume(vt)) / s, p, stride)
        xs.append(pi.astype(dtype))
        ys.append(pt.astype(dtype))
        meta.append(np.column_stack([np.full(len(corners), i), corners]))
    if not xs:
        raise InvalidSpecError("no training volumes given")
    return PatchSet(np.concatenate(xs), np.concatenate(ys), np.concatenate(meta))
