"""Composite Conv-LSTM video prediction and temporal anomaly detection."""

from .anomaly import (
    AnomalyRegion,
    DetectionReport,
    ExtremaPair,
    best_f1_row,
    detect_regions,
    evaluate,
    filter_extrema,
    persistence1d,
    propose_regions,
    regularity,
    sliding_errors,
    threshold_sweep,
    window_anomaly_labels,
)
from .errors import ConfigError, DataError, NumericError
from .estimator import ConvLSTMAnomalyDetector, coerce_clips
from .network import (
    CompositeModel,
    ConvLSTMCellParams,
    CellState,
    NetworkConfig,
    cell_step,
    decode,
    encode,
    forward_composite,
    init_model,
    load_checkpoint,
    patchify,
    save_checkpoint,
    unpatchify,
)
from .optim import Adagrad, Adam, RMSProp
from .synth import (
    AnomalySpec,
    ObjectSpec,
    SceneSpec,
    VideoClip,
    generate,
    load_clip,
    load_scene_spec,
    resize_grayscale,
    save_clip,
)
from .tensor import Tensor, gradients, mse, no_grad, xavier_init
from .training import TrainConfig, TrainResult, train

__all__ = [
    "AnomalyRegion",
    "AnomalySpec",
    "Adagrad",
    "Adam",
    "CellState",
    "CompositeModel",
    "ConfigError",
    "ConvLSTMAnomalyDetector",
    "ConvLSTMCellParams",
    "DataError",
    "DetectionReport",
    "ExtremaPair",
    "NetworkConfig",
    "NumericError",
    "ObjectSpec",
    "RMSProp",
    "SceneSpec",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "VideoClip",
    "best_f1_row",
    "cell_step",
    "coerce_clips",
    "decode",
    "detect_regions",
    "encode",
    "evaluate",
    "filter_extrema",
    "forward_composite",
    "generate",
    "gradients",
    "init_model",
    "load_checkpoint",
    "load_clip",
    "load_scene_spec",
    "mse",
    "no_grad",
    "patchify",
    "persistence1d",
    "propose_regions",
    "regularity",
    "resize_grayscale",
    "save_checkpoint",
    "save_clip",
    "sliding_errors",
    "threshold_sweep",
    "train",
    "unpatchify",
    "window_anomaly_labels",
    "xavier_init",
]
