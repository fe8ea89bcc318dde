"""scikit-learn style wrappers around the reconstructors.

Each estimator takes a :class:`~inrmar.projector.Sinogram` as ``X``.
``transform`` returns the reconstructed attenuation image as an ndarray
of shape ``(ny, nx)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import inr
from .fbp import fbp
from .mbhc import mbhc_reconstruct
from .validation import check_grid, check_mask, check_positive, check_sinogram


class FBPReconstructor(TransformerMixin, BaseEstimator):
    """Ram-Lak filtered backprojection onto an ``nx`` by ``ny`` grid."""

    def __init__(self, nx=128, ny=128, pixel_mm=0.6):
        self.nx = nx
        self.ny = ny
        self.pixel_mm = pixel_mm

    def fit(self, X, y=None):
        sino = check_sinogram(X)
        self.grid_ = check_grid(self.nx, self.ny, self.pixel_mm)
        self.geometry_ = sino.geometry
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        return fbp(check_sinogram(X, self.geometry_), self.grid_).values


class MBHCReconstructor(FBPReconstructor):
    """FBP followed by the log-sinh metal corrector.

    ``threshold`` and ``kappa`` accept ``"auto"``; ``floor`` is the attenuation
    below which histogram modes are ignored when the threshold is automatic.
    """

    def __init__(self, nx=128, ny=128, pixel_mm=0.6, threshold="auto", kappa="auto", floor=0.07):
        super().__init__(nx, ny, pixel_mm)
        self.threshold = threshold
        self.kappa = kappa
        self.floor = floor

    def transform(self, X):
        check_is_fitted(self, "grid_")
        if self.kappa != "auto":
            check_positive(self.kappa, "kappa")
        res = mbhc_reconstruct(check_sinogram(X, self.geometry_), self.grid_, self.threshold,
                               self.kappa, floor=self.floor)
        self.threshold_, self.kappa_, self.metal_mask_ = res.threshold, res.kappa, res.mask.mask
        return res.image.values


class INRReconstructor(TransformerMixin, BaseEstimator):
    """Sinusoidal-network reconstruction of (mu, sigma~) from polychromatic data.

    ``fit`` trains on the sinogram (optionally restricted by ``mask``);
    ``transform`` renders mu; ``predict`` returns model projections for the
    fitted geometry.
    """

    def __init__(self, nx=128, ny=128, pixel_mm=0.6, learning_rate=5e-4, lr_final=None,
                 lambda_tilde=3.0, epsilon=1e-6, samples_per_ray=256, rays_per_batch=2048,
                 stop_loss=5e-3, max_steps=50_000, w0=30.0, output_scale=0.01, jitter=True, seed=0):
        self.nx = nx
        self.ny = ny
        self.pixel_mm = pixel_mm
        self.learning_rate = learning_rate
        self.lr_final = lr_final
        self.lambda_tilde = lambda_tilde
        self.epsilon = epsilon
        self.samples_per_ray = samples_per_ray
        self.rays_per_batch = rays_per_batch
        self.stop_loss = stop_loss
        self.max_steps = max_steps
        self.w0 = w0
        self.output_scale = output_scale
        self.jitter = jitter
        self.seed = seed

    def train_config(self) -> inr.TrainConfig:
        return inr.TrainConfig(learning_rate=self.learning_rate, lr_final=self.lr_final,
                               lambda_tilde=self.lambda_tilde, epsilon=self.epsilon,
                               samples_per_ray=self.samples_per_ray, rays_per_batch=self.rays_per_batch,
                               stop_loss=self.stop_loss, max_steps=self.max_steps, w0=self.w0,
                               output_scale=self.output_scale,
                               jitter=self.jitter, seed=self.seed)

    def fit(self, X, y=None, mask=None):
        sino = check_sinogram(X)
        self.grid_ = check_grid(self.nx, self.ny, self.pixel_mm)
        self.geometry_ = sino.geometry
        state = inr.train(sino, check_mask(mask, sino.geometry), self.train_config(), self.grid_)
        self.params_ = state.params
        self.n_steps_ = state.step
        self.loss_history_ = np.asarray(state.history)
        return self

    def transform(self, X=None):
        check_is_fitted(self, "params_")
        return inr.render(self.params_, self.grid_)[0].values

    def sigma_image(self):
        check_is_fitted(self, "params_")
        return inr.render(self.params_, self.grid_)[1].values

    def predict(self, X=None):
        """Model projections P_hat for every ray of the fitted geometry."""
        check_is_fitted(self, "params_")
        table = inr.RayTable.build(self.geometry_, self.grid_)
        cfg = self.train_config()
        out = np.zeros(table.lengths.size)
        hit = np.flatnonzero(table.lengths > 0)
        for s in range(0, hit.size, 512):
            idx = hit[s:s + 512]
            pts, dt = table.sample(idx, cfg.samples_per_ray, None, self.params_.dtype)
            I_mu, I_sg, _, _ = inr._field_integrals(self.params_, pts, dt)
            out[idx] = inr.projection_model(I_mu, I_sg, cfg)
        return out.reshape(self.geometry_.shape())
