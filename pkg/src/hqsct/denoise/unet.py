"""A small 2D U-Net with hand-written reverse-mode gradients.

Tensors are channels-last, ``(batch, height, width, channels)``; conv
kernels are stored ``(k, k, c_in, c_out)``. Each encoder level applies
``[conv, ReLU] x convs_per_level`` then a 2x2 max-pool; the bottleneck
applies the same conv block; each decoder level upsamples by nearest
neighbour, applies ``[conv, ReLU]`` to halve the channels, concatenates the
encoder skip (skip first) and applies the conv block. A final 1x1 conv maps
to one channel with no activation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DimensionError, InvalidSpecError
from ._im2col import col2im, im2col


@dataclass(frozen=True)
class UNetArch:
    depth: int = 2
    base_channels: int = 16
    kernel_size: int = 3
    convs_per_level: int = 2

    def __post_init__(self):
        if self.depth < 0 or self.base_channels < 1 or self.convs_per_level < 1:
            raise InvalidSpecError(f"invalid U-Net descriptor {self}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidSpecError(f"kernel_size must be odd, got {self.kernel_size}")

    @classmethod
    def full_size(cls) -> "UNetArch":
        """Full-size network: four pooling levels, 64 base channels, 3x3 kernels."""
        return cls(depth=4, base_channels=64, kernel_size=3)

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    def layer_shapes(self) -> dict[str, tuple[int, int, int, int]]:
        """Kernel shape of every conv layer, in declaration order."""
        k, m = self.kernel_size, self.convs_per_level
        shapes = {}
        cin = 1
        for level in range(self.depth):
            c = self.channels(level)
            for j in range(m):
                shapes[f"enc{level}.conv{j}"] = (k, k, cin if j == 0 else c, c)
            cin = c
        c = self.channels(self.depth)
        for j in range(m):
            shapes[f"mid.conv{j}"] = (k, k, cin if j == 0 else c, c)
        for level in reversed(range(self.depth)):
            c = self.channels(level)
            shapes[f"dec{level}.up"] = (k, k, 2 * c, c)
            for j in range(m):
                shapes[f"dec{level}.conv{j}"] = (k, k, 2 * c if j == 0 else c, c)
        shapes["out"] = (1, 1, self.base_channels, 1)
        return shapes


@dataclass
class DenoiserParams:
    """Weights of one stage denoiser plus its normalization record.

    ``tensors`` maps ``"<layer>.w"`` / ``"<layer>.b"`` to arrays in
    declaration order. ``normalization`` is ``"volume"`` (scale each input
    volume by its own 99.9th percentile) or ``"stage"`` (use the recorded
    ``norm_scale``).
    """

    arch: UNetArch
    tensors: dict[str, np.ndarray]
    norm_scale: float = 1.0
    normalization: str = "volume"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = []
        for name, shape in self.arch.layer_shapes().items():
            expected += [(f"{name}.w", shape), (f"{name}.b", (shape[3],))]
        names = [n for n, _ in expected]
        if list(self.tensors) != names:
            raise InvalidSpecError("tensor names do not match the architecture descriptor")
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise DimensionError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")
        if self.normalization not in ("volume", "stage"):
            raise InvalidSpecError(f"unknown normalization {self.normalization!r}")

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(
            self.arch, {k: v.copy() for k, v in self.tensors.items()}, self.norm_scale, self.normalization, dict(self.meta)
        )

    def astype(self, dtype) -> "DenoiserParams":
        out = self.copy()
        out.tensors = {k: v.astype(dtype) for k, v in out.tensors.items()}
        return out

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def descriptor(self) -> dict:
        return asdict(self.arch)


def init_params(arch: UNetArch = UNetArch(), seed: int = 0, dtype=np.float32) -> DenoiserParams:
    """He-normal kernels and zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in arch.layer_shapes().items():
        fan_in = shape[0] * shape[1] * shape[2]
        tensors[f"{name}.w"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        tensors[f"{name}.b"] = np.zeros(shape[3], dtype=dtype)
    return DenoiserParams(arch, tensors)


def zero_params(arch: UNetArch = UNetArch(), dtype=np.float32) -> DenoiserParams:
    tensors = {}
    for name, shape in arch.layer_shapes().items():
        tensors[f"{name}.w"] = np.zeros(shape, dtype=dtype)
        tensors[f"{name}.b"] = np.zeros(shape[3], dtype=dtype)
    return DenoiserParams(arch, tensors)


# --- layers -----------------------------------------------------------------


def _conv_forward(x, w, b):
    bsz, h, wd, cin = x.shape
    k = w.shape[0]
    if k == 1:
        cols = x.reshape(-1, cin)
    else:
        cols = np.empty((bsz, h, wd, k * k * cin), dtype=x.dtype)
        im2col(np.ascontiguousarray(x), k, cols)
        cols = cols.reshape(-1, k * k * cin)
    out = cols @ w.reshape(-1, w.shape[3])
    out += b
    return out.reshape(bsz, h, wd, w.shape[3]), cols


def _conv_backward(dout, cols, x_shape, w):
    k, cout = w.shape[0], w.shape[3]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = d2 @ w.reshape(-1, cout).T
    if k == 1:
        return dcols.reshape(x_shape), dw, db
    dx = np.zeros(x_shape, dtype=dout.dtype)
    col2im(dcols.reshape(x_shape[:3] + (-1,)), k, dx)
    return dx, dw, db


def _pool_forward(x):
    bsz, h, w, c = x.shape
    blocks = x.reshape(bsz, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(bsz, h // 2, w // 2, c, 4)
    idx = np.argmax(blocks, axis=-1)
    return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], idx


def _pool_backward(dout, idx):
    bsz, h2, w2, c = dout.shape
    g = np.zeros((bsz, h2, w2, c, 4), dtype=dout.dtype)
    np.put_along_axis(g, idx[..., None], dout[..., None], axis=-1)
    return g.reshape(bsz, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(bsz, 2 * h2, 2 * w2, c)


def _upsample(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample_backward(dout):
    bsz, h, w, c = dout.shape
    return dout.reshape(bsz, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


# --- network ----------------------------------------------------------------


def _check_input(params: DenoiserParams, x):
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise DimensionError(f"expected a 2D patch or a (batch, H, W) stack, got shape {x.shape}")
    div = 2**params.arch.depth
    if x.shape[1] % div or x.shape[2] % div:
        raise DimensionError(f"patch sides {x.shape[1:]} must be divisible by {div}")
    return x.astype(params.dtype, copy=False)[..., None]


def forward_with_cache(params: DenoiserParams, x):
    """Run the network on ``x`` of shape ``(B, H, W)``; returns ``(out, cache)``."""
    t = params.tensors
    arch = params.arch
    h = _check_input(params, x)
    cache = []

    def conv_relu(name, h):
        y, cols = _conv_forward(h, t[name + ".w"], t[name + ".b"])
        mask = y > 0
        cache.append(("conv", name, cols, h.shape, mask))
        return y * mask

    def block(prefix, h):
        for j in range(arch.convs_per_level):
            h = conv_relu(f"{prefix}.conv{j}", h)
        return h

    skips = []
    for level in range(arch.depth):
        h = block(f"enc{level}", h)
        skips.append(h)
        h, idx = _pool_forward(h)
        cache.append(("pool", idx))
    h = block("mid", h)
    for level in reversed(range(arch.depth)):
        h = _upsample(h)
        cache.append(("up",))
        h = conv_relu(f"dec{level}.up", h)
        skip = skips[level]
        h = np.concatenate([skip, h], axis=-1)
        cache.append(("cat", skip.shape[-1]))
        h = block(f"dec{level}", h)
    y, cols = _conv_forward(h, t["out.w"], t["out.b"])
    cache.append(("conv", "out", cols, h.shape, None))
    return y[..., 0], cache


def backward_from_cache(params: DenoiserParams, cache, dout) -> dict[str, np.ndarray]:
    """Parameter gradients given the upstream gradient of the output."""
    t = params.tensors
    grads = {name: None for name in t}
    dh = np.asarray(dout, dtype=params.dtype)
    if dh.ndim == 2:
        dh = dh[None]
    dh = dh[..., None]
    skip_grads = []
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "conv":
            _, name, cols, x_shape, mask = entry
            if mask is not None:
                dh = dh * mask
            dh, dw, db = _conv_backward(dh, cols, x_shape, t[name + ".w"])
            grads[name + ".w"], grads[name + ".b"] = dw, db
        elif kind == "cat":
            c_skip = entry[1]
            skip_grads.append(dh[..., :c_skip])
            dh = dh[..., c_skip:]
        elif kind == "up":
            dh = _upsample_backward(dh)
        elif kind == "pool":
            dh = _pool_backward(dh, entry[1]) + skip_grads.pop()
    return grads


def unet_forward(params: DenoiserParams, patch):
    """Apply the network to a 2D patch (or a ``(B, H, W)`` stack)."""
    out, _ = forward_with_cache(params, patch)
    return out[0] if np.ndim(patch) == 2 else out


def unet_backward(params: DenoiserParams, patch, upstream_grad) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream_grad * unet_forward(params, patch))``."""
    out, cache = forward_with_cache(params, patch)
    g = np.asarray(upstream_grad)
    if g.shape != np.shape(patch):
        raise DimensionError(f"upstream gradient shape {g.shape} does not match patch {np.shape(patch)}")
    return backward_from_cache(params, cache, g)
