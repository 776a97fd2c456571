"""Scikit-learn style front end for the transmission model.

``fit`` trains on a sequence of :class:`~jeit.pipeline.Sample`, ``transform``
sends each sample through the configured channel and returns the receiver
outputs, ``predict`` keeps just the deblurred images. Hyperparameters follow
the estimator convention (stored verbatim, introspectable via get_params),
so the model drops into sklearn pipelines and model-selection utilities.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .channel import ChannelConfig
from .config import RunConfig
from .pipeline import (
    EvalResult,
    LossWeights,
    OptimizerConfig,
    Sample,
    forward_eval,
    train,
)
from .validation import check_sample_sequence


class EventImageTransmitter(BaseEstimator, TransformerMixin):
    """Joint event/image transmission with entropy-driven bandwidth allocation."""

    def __init__(
        self,
        height=32,
        width=32,
        patch=4,
        half_intervals=3,
        latent_channels=16,
        hyper_channels=8,
        hidden=64,
        mode="jeit",
        lambda_image=1.0,
        lambda_events=1.0,
        lambda_deblur=2.0,
        eta=0.24,
        train_snr_db=10.0,
        eval_snr_db=None,
        epochs=200,
        learning_rate=1e-4,
        batch_size=None,
        seed=0,
    ):
        self.height = height
        self.width = width
        self.patch = patch
        self.half_intervals = half_intervals
        self.latent_channels = latent_channels
        self.hyper_channels = hyper_channels
        self.hidden = hidden
        self.mode = mode
        self.lambda_image = lambda_image
        self.lambda_events = lambda_events
        self.lambda_deblur = lambda_deblur
        self.eta = eta
        self.train_snr_db = train_snr_db
        self.eval_snr_db = eval_snr_db
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def _run_config(self) -> RunConfig:
        return RunConfig(
            height=self.height,
            width=self.width,
            patch=self.patch,
            half_intervals=self.half_intervals,
            latent_image=self.latent_channels,
            latent_events=self.latent_channels,
            latent_shared=self.latent_channels,
            hyper_channels=self.hyper_channels,
            hidden=self.hidden,
            mode=self.mode,
            lambda_image=self.lambda_image,
            lambda_events=self.lambda_events,
            lambda_deblur=self.lambda_deblur,
            eta=self.eta,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size or 0,
            snr_db=self.train_snr_db,
            seed=self.seed,
        )

    def fit(self, X: Sequence[Sample], y=None):
        run = self._run_config()
        cfg = run.transform_config()
        samples = check_sample_sequence(X, cfg)
        weights = LossWeights(
            lambda_image=self.lambda_image,
            lambda_events=self.lambda_events,
            lambda_deblur=self.lambda_deblur,
            eta=self.eta,
            mode=self.mode,
        )
        result = train(
            samples,
            epochs=self.epochs,
            weights=weights,
            cfg=cfg,
            optimizer=OptimizerConfig(learning_rate=self.learning_rate),
            seed=self.seed,
            snr_db=self.train_snr_db,
            batch_size=self.batch_size,
            run_config=run,
        )
        self.model_ = result.model
        self.loss_curve_ = result.totals
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before transform/predict/score")

    def transform(self, X: Sequence[Sample]) -> list[EvalResult]:
        self._require_fitted()
        samples = check_sample_sequence(X, self.model_.cfg)
        channel = ChannelConfig(snr_db=self.eval_snr_db, seed=self.seed)
        rng = channel.rng()
        return [forward_eval(self.model_, s, channel=channel, rng=rng) for s in samples]

    def predict(self, X: Sequence[Sample]) -> np.ndarray:
        return np.stack([res.t_hat for res in self.transform(X)])

    def score(self, X: Sequence[Sample], y=None) -> float:
        """Median deblurring PSNR over the given samples (higher is better)."""
        results = self.transform(X)
        return float(np.median([r.metrics["psnr_deblur"] for r in results]))
