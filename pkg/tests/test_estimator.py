"""Scikit-learn API conformance and end-to-end estimator behavior."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from convlstm_anomaly import ConvLSTMAnomalyDetector, SceneSpec, ObjectSpec, generate
from convlstm_anomaly.errors import ConfigError
from convlstm_anomaly.estimator import coerce_clips


def small_detector(**overrides):
    params = dict(
        frame_size=8,
        input_len=2,
        output_len=2,
        patch_factor=2,
        filter_size=3,
        layer_channels=(4,),
        max_iterations=20,
        batch_size=2,
        validation_fraction=0.0,
        proposal_window=5,
        merge_distance=5,
        random_state=0,
    )
    params.update(overrides)
    return ConvLSTMAnomalyDetector(**params)


def tiny_clips(n=2, length=10):
    spec = SceneSpec(
        frame_size=8,
        background=0.2,
        objects=[
            ObjectSpec(shape="square", size=3, intensity=0.6, velocity=(0.0, 1.0))
        ],
    )
    return [generate(spec, length, seed=i) for i in range(n)]


class TestSklearnApi:
    def test_get_params_roundtrip(self):
        det = small_detector()
        params = det.get_params()
        assert params["frame_size"] == 8
        assert params["layer_channels"] == (4,)
        det.set_params(max_iterations=7)
        assert det.get_params()["max_iterations"] == 7

    def test_clone(self):
        det = small_detector(max_iterations=13)
        copy = clone(det)
        assert copy.get_params() == det.get_params()

    def test_not_fitted_error(self):
        with pytest.raises(NotFittedError):
            small_detector().predict(tiny_clips(1))

    def test_fit_returns_self_and_sets_attrs(self):
        det = small_detector()
        out = det.fit(tiny_clips())
        assert out is det
        assert hasattr(det, "model_")
        assert len(det.history_) == 20


class TestCoerceClips:
    def test_accepts_arrays_with_and_without_channel(self):
        a = np.zeros((5, 8, 8))
        b = np.zeros((5, 1, 8, 8))
        clips = coerce_clips([a, b])
        assert all(c.frames.shape == (5, 1, 8, 8) for c in clips)

    def test_resizes_when_frame_size_differs(self):
        clips = coerce_clips([np.zeros((3, 16, 16))], frame_size=8)
        assert clips[0].frames.shape == (3, 1, 8, 8)

    def test_bad_shape_rejected(self):
        with pytest.raises(ConfigError):
            coerce_clips([np.zeros((3, 2, 8, 8))])


class TestEndToEnd:
    def test_score_samples_shape_and_range(self):
        det = small_detector()
        det.fit(tiny_clips())
        scores = det.score_samples(tiny_clips(1, length=12))
        assert len(scores) == 1
        # 12 frames, window 4 -> 9 window starts
        assert scores[0].shape == (9,)
        assert scores[0].max() == 1.0
        assert scores[0].min() >= 0.0

    def test_predict_returns_interval_lists(self):
        det = small_detector(persistence_threshold=0.0)
        det.fit(tiny_clips())
        preds = det.predict(tiny_clips(1, length=12))
        assert len(preds) == 1
        for s, e in preds[0]:
            assert 0 <= s <= e <= 8

    def test_deterministic_given_random_state(self):
        scores = []
        for _ in range(2):
            det = small_detector(random_state=3)
            det.fit(tiny_clips())
            scores.append(det.score_samples(tiny_clips(1, length=10))[0])
        np.testing.assert_array_equal(scores[0], scores[1])
