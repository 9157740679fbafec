"""Training/evaluation workbench: config, toy data, the loop, and the CLI."""

from .config import TrainConfig, load_train_config
from .toydata import ToyDatasetSpec, generate_toy_dataset
from .training import TrainResult, train

__all__ = [
    "TrainConfig",
    "load_train_config",
    "ToyDatasetSpec",
    "generate_toy_dataset",
    "TrainResult",
    "train",
]
