"""Estimator-style wrappers around the reconstruction methods.

These follow the scikit-learn conventions (constructor stores parameters
verbatim, ``fit`` returns ``self``, learnt state ends with ``_``) so that
``get_params`` / ``set_params`` / ``clone`` work. Inputs are projection
stacks and volumes rather than 2D feature matrices.
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .analytic import FilterConfig, fdk_reconstruct
from .data import Volume3D
from .denoise import DenoiserParams, TrainConfig, UNetArch, apply_denoiser_volume, init_params, train_stage
from .geometry import ConeBeamGeometry
from .pipeline import train_hqs_stages
from .solvers import HQSConfig, hqs_reconstruct, quadratic_mbir_baseline


class FDKReconstructor(TransformerMixin, BaseEstimator):
    """Analytic FDK reconstruction; ``fit`` only validates the settings.

    Parameters
    ----------
    geometry : ConeBeamGeometry
    filter : {"hamming", "ram-lak"}
    zero_pad_to : int, optional
    """

    def __init__(self, geometry: ConeBeamGeometry | None = None, filter: str = "hamming", zero_pad_to=None):
        self.geometry = geometry
        self.filter = filter
        self.zero_pad_to = zero_pad_to

    def fit(self, X=None, y=None):
        self.filter_config_ = FilterConfig(self.filter, self.zero_pad_to)
        return self

    def transform(self, X) -> Volume3D:
        check_is_fitted(self, "filter_config_")
        return fdk_reconstruct(X, self.geometry, self.filter_config_)


class QuadraticMBIR(BaseEstimator):
    """Gradient-penalized least squares solved by a fixed number of CG steps."""

    def __init__(self, geometry: ConeBeamGeometry | None = None, lam: float = 1e-2, n_iter: int = 200):
        self.geometry = geometry
        self.lam = lam
        self.n_iter = n_iter

    def fit(self, X=None, y=None):
        return self

    def predict(self, X) -> Volume3D:
        return quadratic_mbir_baseline(X, self.geometry, self.lam, self.n_iter)


class UNetDenoiser(TransformerMixin, BaseEstimator):
    """Slice-wise U-Net denoiser trained on aligned (noisy, clean) volumes."""

    def __init__(
        self,
        depth: int = 2,
        base_channels: int = 16,
        epochs: int = 30,
        batch_size: int = 16,
        learning_rate: float = 1e-3,
        patch_size: int = 64,
        patch_stride: int = 64,
        random_state: int = 0,
    ):
        self.depth = depth
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patch_size = patch_size
        self.patch_stride = patch_stride
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            patch_size=self.patch_size,
            patch_stride=self.patch_stride,
            seed=self.random_state,
        )

    def fit(self, X, y):
        """``X`` and ``y`` are equal-length sequences of input and target volumes."""
        arch = UNetArch(depth=self.depth, base_channels=self.base_channels)
        self.params_, self.loss_curve_ = train_stage(
            list(X), list(y), self._train_config(), init_params(arch, self.random_state), return_losses=True
        )
        return self

    def transform(self, X) -> Volume3D:
        check_is_fitted(self, "params_")
        return apply_denoiser_volume(self.params_, X)


class HQSReconstructor(BaseEstimator):
    """Learnt HQS reconstruction with stage-wise trained U-Net denoisers.

    ``fit`` takes sparse-view projection stacks and their clean target
    volumes, starts every case from its FDK image and trains the stages in
    order. ``predict`` reconstructs one stack and stores the per-iteration
    record in ``trace_``. ``beta`` can be changed with ``set_params`` after
    fitting without retraining.
    """

    def __init__(
        self,
        geometry: ConeBeamGeometry | None = None,
        K: int = 3,
        beta: float = 5e-2,
        cg_iters: int = 10,
        weight_mode: str = "unshared",
        warm_start: str = "previous",
        depth: int = 2,
        base_channels: int = 16,
        epochs: int = 30,
        batch_size: int = 16,
        learning_rate: float = 1e-3,
        patch_size: int = 64,
        patch_stride: int = 64,
        filter: str = "hamming",
        random_state: int = 0,
    ):
        self.geometry = geometry
        self.K = K
        self.beta = beta
        self.cg_iters = cg_iters
        self.weight_mode = weight_mode
        self.warm_start = warm_start
        self.depth = depth
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patch_size = patch_size
        self.patch_stride = patch_stride
        self.filter = filter
        self.random_state = random_state

    def hqs_config(self) -> HQSConfig:
        return HQSConfig(
            K=self.K, beta=self.beta, cg_iters=self.cg_iters, weight_mode=self.weight_mode, warm_start=self.warm_start
        )

    def _init(self, proj) -> Volume3D:
        return fdk_reconstruct(proj, self.geometry, FilterConfig(self.filter))

    def fit(self, X, y):
        X, y = list(X), list(y)
        train_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            patch_size=self.patch_size,
            patch_stride=self.patch_stride,
            seed=self.random_state,
        )
        result = train_hqs_stages(
            X,
            self.geometry,
            [self._init(p) for p in X],
            y,
            self.hqs_config(),
            train_cfg,
            UNetArch(depth=self.depth, base_channels=self.base_channels),
            seed=self.random_state,
        )
        self.denoisers_: dict[str, DenoiserParams] = result.denoisers
        self.loss_curves_ = result.losses
        return self

    def predict(self, X, reference=None) -> Volume3D:
        check_is_fitted(self, "denoisers_")
        t0 = time.perf_counter()
        x, self.trace_ = hqs_reconstruct(X, self.geometry, self.hqs_config(), self.denoisers_, self._init(X), reference)
        self.seconds_ = time.perf_counter() - t0
        return x

    def score(self, X, y) -> float:
        """PSNR (dB) of the reconstruction of ``X`` against the volume ``y``."""
        from .metrics import psnr

        return psnr(self.predict(X).data, np.asarray(getattr(y, "data", y)))
