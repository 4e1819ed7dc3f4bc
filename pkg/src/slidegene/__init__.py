"""Weakly supervised prediction of bulk gene expression from slide tile bags."""

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    FormatError,
    GraphError,
    InputError,
    NumericError,
    ShapeError,
    SlidegeneError,
    TrainingError,
    UndefinedCorrelationError,
)
from .model import Model, ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .train import TrainConfig, train

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "FormatError",
    "GraphError",
    "InputError",
    "Model",
    "NumericError",
    "ModelConfig",
    "ModelParams",
    "ShapeError",
    "SlidegeneError",
    "TrainConfig",
    "TrainingError",
    "UndefinedCorrelationError",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]

__version__ = "0.1.0"
