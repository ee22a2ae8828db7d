"""Trainable-tensor engine for ModelGraphs."""

from .model import (
    EVAL, TRAIN, EpochStats, ModelInstance, TrainConfig, accuracy, adam_step, forward,
    init_params, learning_rate, loss_and_grads, predict, to_input, train,
)

__all__ = [
    "EVAL", "TRAIN", "EpochStats", "ModelInstance", "TrainConfig", "accuracy", "adam_step",
    "forward", "init_params", "learning_rate", "loss_and_grads", "predict", "to_input", "train",
]
