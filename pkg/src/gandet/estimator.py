"""Scikit-learn style front-end over the training and scoring pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin

from . import models, scoring
from .datasets import TrainStream
from .models import ModelConfig
from .scoring import ScoreConfig
from .training import JOINT_IMAGE_SPACE, TrainConfig, train
from .validation import as_image_batch, check_value_range


class GanAnomalyDetector(BaseEstimator, OutlierMixin):
    """Unsupervised image anomaly detector backed by an adversarially
    trained generator and encoder.

    fit() trains on images assumed mostly normal; a modest fraction of
    unlabeled anomalies in the training set is tolerated by design.
    Scores follow the scikit-learn outlier convention: higher
    score_samples means more normal, predict returns +1 for inliers and
    -1 for outliers.

    Images are float arrays in [-1, 1], shaped (n, r, r), (n, r, r, c),
    or flat (n, r*r*c) rows.

    Parameters mirror TrainConfig, ModelConfig and ScoreConfig; see
    those dataclasses for semantics.
    """

    def __init__(
        self,
        resolution: int = 16,
        channels: int = 1,
        latent_dim: int = 64,
        base_channels: int = 32,
        min_channels: int = 8,
        encoder_mode: str = JOINT_IMAGE_SPACE,
        critic_steps: int = 1,
        gp_weight: float = 10.0,
        learning_rate: float = 1e-3,
        beta1: float = 0.0,
        beta2: float = 0.99,
        batch_size_start: int = 32,
        batch_size_end: int = 32,
        steps_per_phase: int = 400,
        progressive: bool = True,
        posthoc_encoder_steps: int | None = None,
        score_weight: float = 0.05,
        threshold: float = 0.0,
        num_threads: int = 1,
        random_state: int = 0,
    ):
        self.resolution = resolution
        self.channels = channels
        self.latent_dim = latent_dim
        self.base_channels = base_channels
        self.min_channels = min_channels
        self.encoder_mode = encoder_mode
        self.critic_steps = critic_steps
        self.gp_weight = gp_weight
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size_start = batch_size_start
        self.batch_size_end = batch_size_end
        self.steps_per_phase = steps_per_phase
        self.progressive = progressive
        self.posthoc_encoder_steps = posthoc_encoder_steps
        self.score_weight = score_weight
        self.threshold = threshold
        self.num_threads = num_threads
        self.random_state = random_state

    # ------------------------------------------------------------------

    def _validate_images(self, X) -> np.ndarray:
        batch = as_image_batch(X, resolution=self.resolution, channels=self.channels)
        check_value_range(batch, (-1.0, 1.0), name="images")
        return batch

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            encoder_mode=self.encoder_mode,
            critic_steps=self.critic_steps,
            gp_weight=self.gp_weight,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            batch_size_start=self.batch_size_start,
            batch_size_end=self.batch_size_end,
            steps_per_phase=self.steps_per_phase,
            progressive=self.progressive,
            posthoc_encoder_steps=self.posthoc_encoder_steps,
            num_threads=self.num_threads,
            seed=self.random_state,
        )

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            latent_dim=self.latent_dim,
            image_channels=self.channels,
            base_channels=self.base_channels,
            min_channels=self.min_channels,
        )

    def _score_config(self) -> ScoreConfig:
        return ScoreConfig(weight=self.score_weight, threshold=self.threshold)

    def _check_fitted(self):
        if not hasattr(self, "bundle_"):
            raise RuntimeError("this detector is not fitted yet; call fit first")

    # ------------------------------------------------------------------

    def fit(self, X, y=None):
        """Train on unlabeled images. y is ignored."""
        batch = self._validate_images(X)
        self.bundle_, self.train_log_ = train(
            TrainStream(images=batch),
            self._train_config(),
            self.resolution,
            self._model_config(),
        )
        self.offset_ = -float(self.threshold)
        self.n_features_in_ = int(np.prod(batch.shape[1:]))
        return self

    def score_report(self, X, source_ids=None) -> list[scoring.ScoreReport]:
        """Full per-sample score reports, in input order."""
        self._check_fitted()
        batch = self._validate_images(X)
        return scoring.score_batch(self.bundle_, batch, self._score_config(), source_ids)

    def score_samples(self, X) -> np.ndarray:
        """Negated anomaly score: larger means more normal."""
        return -np.asarray([r.score for r in self.score_report(X)])

    def decision_function(self, X) -> np.ndarray:
        """Positive for inliers, negative for outliers."""
        return self.score_samples(X) - self.offset_

    def predict(self, X) -> np.ndarray:
        """+1 for inliers, -1 for outliers. The boundary itself is inlying."""
        return np.where(self.decision_function(X) < 0, -1, 1)

    def transform(self, X) -> np.ndarray:
        """Encode images to latent vectors (n, latent_dim)."""
        self._check_fitted()
        batch = self._validate_images(X)
        return models.encode(self.bundle_, batch)

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).transform(X)

    def save(self, path, include_discriminator: bool = True) -> None:
        """Persist the fitted model as a checkpoint directory."""
        self._check_fitted()
        models.checkpoint_save(self.bundle_, path, include_discriminator)

    def load_bundle(self, path) -> "GanAnomalyDetector":
        """Adopt a previously trained checkpoint instead of fitting."""
        bundle = models.checkpoint_load(path)
        if bundle.target_resolution != self.resolution:
            raise ValueError(
                f"checkpoint was trained at {bundle.target_resolution}, "
                f"this detector expects {self.resolution}"
            )
        self.bundle_ = bundle
        self.train_log_ = []
        self.offset_ = -float(self.threshold)
        self.n_features_in_ = self.resolution * self.resolution * self.channels
        return self
