"""Scikit-learn style estimator wrapping the full pipeline.

`fit` trains the composite model on normal clips; `score_samples`
returns per-window regularity (higher = more normal, matching the
scikit-learn convention for anomaly scores); `predict` returns proposed
anomalous intervals per clip. Hyperparameters are plain constructor
arguments, so `get_params` / `set_params` / `clone` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import anomaly as AN
from .errors import ConfigError
from .network import NetworkConfig, init_model
from .synth import VideoClip, resize_grayscale
from .training import TrainConfig, train


def coerce_clips(X, frame_size: int | None = None) -> list[VideoClip]:
    """Validate and normalize fit/predict inputs.

    Accepts a list of `VideoClip`s or of frame arrays shaped [T, S, S] or
    [T, 1, S, S]. When `frame_size` is given and differs, frames are
    bilinearly resized.
    """
    if isinstance(X, (VideoClip, np.ndarray)):
        X = [X]
    clips = []
    for i, item in enumerate(X):
        if isinstance(item, VideoClip):
            clip = item
        else:
            arr = np.asarray(item, dtype=np.float64)
            if arr.ndim == 3:
                arr = arr[:, None, :, :]
            if arr.ndim != 4 or arr.shape[1] != 1:
                raise ConfigError(
                    f"clip {i}: expected [T, S, S] or [T, 1, S, S] frames, "
                    f"got shape {arr.shape}"
                )
            clip = VideoClip(frames=arr)
        if frame_size is not None and clip.frame_size != frame_size:
            resized = np.stack(
                [resize_grayscale(f, frame_size) for f in clip.frames]
            )
            clip = VideoClip(
                frames=np.clip(resized, 0.0, 1.0),
                ground_truth=clip.ground_truth,
            )
        clips.append(clip)
    return clips


class ConvLSTMAnomalyDetector(BaseEstimator):
    """Temporal video anomaly detector built on a composite Conv-LSTM
    encoder-decoder.

    Parameters mirror the library defaults; see the README for the
    full-scale settings and what each knob does.
    """

    def __init__(
        self,
        frame_size=64,
        input_len=5,
        output_len=5,
        patch_factor=4,
        filter_size=5,
        layer_channels=(32, 16, 16),
        conditioned=False,
        composite=True,
        output_nonlinearity="sigmoid",
        optimizer="rmsprop",
        learning_rate=1e-4,
        decay=0.9,
        batch_size=5,
        max_iterations=2000,
        eval_interval=100,
        early_stop_patience=10,
        validation_fraction=0.2,
        error_source="combined",
        persistence_threshold=0.2,
        proposal_window=50,
        merge_distance=50,
        random_state=0,
        threads=1,
    ):
        self.frame_size = frame_size
        self.input_len = input_len
        self.output_len = output_len
        self.patch_factor = patch_factor
        self.filter_size = filter_size
        self.layer_channels = layer_channels
        self.conditioned = conditioned
        self.composite = composite
        self.output_nonlinearity = output_nonlinearity
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.decay = decay
        self.batch_size = batch_size
        self.max_iterations = max_iterations
        self.eval_interval = eval_interval
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.error_source = error_source
        self.persistence_threshold = persistence_threshold
        self.proposal_window = proposal_window
        self.merge_distance = merge_distance
        self.random_state = random_state
        self.threads = threads

    def _network_config(self) -> NetworkConfig:
        return NetworkConfig(
            frame_size=self.frame_size,
            input_len=self.input_len,
            output_len=self.output_len,
            patch_factor=self.patch_factor,
            filter_size=self.filter_size,
            layer_channels=tuple(self.layer_channels),
            conditioned=self.conditioned,
            composite=self.composite,
            output_nonlinearity=self.output_nonlinearity,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            decay=self.decay,
            batch_size=self.batch_size,
            max_iterations=self.max_iterations,
            eval_interval=self.eval_interval,
            early_stop_patience=self.early_stop_patience,
            validation_fraction=self.validation_fraction,
            seed=self.random_state,
            threads=self.threads,
        )

    def fit(self, X, y=None):
        """Train on clips of normal activity; `y` is ignored."""
        clips = coerce_clips(X, self.frame_size)
        model = init_model(self._network_config(), self.random_state)
        result = train(model, clips, self._train_config())
        self.model_ = model
        self.history_ = result.history
        self.best_val_loss_ = result.best_val_loss
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This ConvLSTMAnomalyDetector instance is not fitted yet."
            )

    def score_samples(self, X) -> list[np.ndarray]:
        """Per-window regularity scores for each clip (higher = more normal)."""
        self._check_fitted()
        clips = coerce_clips(X, self.frame_size)
        return [
            AN.regularity(
                AN.sliding_errors(
                    self.model_, clip, self.error_source, threads=self.threads
                )
            )
            for clip in clips
        ]

    def predict(self, X) -> list[list[tuple[int, int]]]:
        """Proposed anomalous intervals (window-start indices) per clip."""
        self._check_fitted()
        out = []
        for scores in self.score_samples(X):
            regions = AN.detect_regions(
                scores,
                self.persistence_threshold,
                window=self.proposal_window,
                merge_distance=self.merge_distance,
            )
            out.append([r.as_interval() for r in regions])
        return out
