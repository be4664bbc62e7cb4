"""Convolutional distance estimator."""

from .estimator import DistanceEstimator
from .model import (
    DESK_CONFIG,
    FULL_CONFIG,
    PRESETS,
    NetworkConfig,
    NetworkParams,
    attention_map,
    backward,
    extract_features,
    forward,
    init_params,
    loss_and_gradients,
    predict,
    predict_distance,
    prepare_aux,
    prepare_images,
)
from .optim import AdamState, adam_step
from .serialize import load_weights, save_weights
from .train import TrainHistory, train

__all__ = [
    "AdamState",
    "DESK_CONFIG",
    "DistanceEstimator",
    "FULL_CONFIG",
    "NetworkConfig",
    "NetworkParams",
    "PRESETS",
    "TrainHistory",
    "adam_step",
    "attention_map",
    "backward",
    "extract_features",
    "forward",
    "init_params",
    "load_weights",
    "loss_and_gradients",
    "predict",
    "predict_distance",
    "prepare_aux",
    "prepare_images",
    "save_weights",
    "train",
]
