"""Scikit-learn style front door for training and applying the denoiser."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .losses import AnnealSchedule, LossWeights
from .metrics import psnr
from .network import mini_net_config
from .synth import Burst, mini_synth_config
from .training import TrainConfig, denoise_burst, display, train


class BurstDenoiser(BaseEstimator):
    """Burst denoiser with per-pixel predicted kernel stacks.

    ``fit`` trains on bursts (or on clean grayscale images, which are
    synthesized into bursts); ``predict``/``transform`` denoise bursts;
    ``score`` is the mean display-referred PSNR against ground truth.
    Hyper-parameters mirror :class:`burstkpn.training.TrainConfig`;
    ``None`` for the config-valued ones means the mini preset.
    """

    def __init__(
        self,
        net=None,
        synth=None,
        lr=1e-4,
        batch=4,
        iters=5000,
        seed=0,
        pool=64,
        clip_norm=10.0,
        checkpoint_every=1000,
        anneal=None,
        weights=None,
        sigma_scale=1.0,
    ):
        self.net = net
        self.synth = synth
        self.lr = lr
        self.batch = batch
        self.iters = iters
        self.seed = seed
        self.pool = pool
        self.clip_norm = clip_norm
        self.checkpoint_every = checkpoint_every
        self.anneal = anneal
        self.weights = weights
        self.sigma_scale = sigma_scale

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch=self.batch,
            iters=self.iters,
            seed=self.seed,
            pool=self.pool,
            clip_norm=self.clip_norm,
            checkpoint_every=self.checkpoint_every,
            anneal=self.anneal if self.anneal is not None else AnnealSchedule(),
            weights=self.weights if self.weights is not None else LossWeights(),
            net=self.net if self.net is not None else mini_net_config(),
            synth=self.synth if self.synth is not None else mini_synth_config(),
        )

    def fit(self, X, y=None, out_dir=None):
        """Train on a list of bursts or clean source images."""
        cfg = self._train_config()
        result = train(cfg, X, out_dir=out_dir)
        self.net_config_ = cfg.net
        self.params_ = result.params
        self.opt_ = result.opt
        self.loss_log_ = result.log
        return self

    def _denoise(self, burst: Burst):
        out, _ = denoise_burst(self.params_, self.net_config_, burst, self.sigma_scale)
        return out

    def predict(self, X):
        """Denoise one burst (returns an image) or a list of bursts."""
        check_is_fitted(self, "params_")
        if isinstance(X, Burst):
            return self._denoise(X)
        return [self._denoise(b) for b in X]

    def transform(self, X):
        return self.predict(X)

    def score(self, X, y=None) -> float:
        """Mean PSNR of display-mapped outputs against ground truth."""
        check_is_fitted(self, "params_")
        bursts = [X] if isinstance(X, Burst) else list(X)
        values = []
        for burst in bursts:
            if burst.truth is None:
                raise ValueError("scoring needs bursts with ground truth")
            out = self._denoise(burst)
            values.append(
                psnr(display(out, burst.scale), display(burst.truth, burst.scale))
            )
        return float(np.mean(values))
