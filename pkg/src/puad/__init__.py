"""Deep positive-unlabeled anomaly detection.

Autoencoder and SVDD detectors trained on unlabeled (possibly
contaminated) data plus a few labeled anomalies, on a small reverse-mode
autodiff core written over numpy.
"""

from .errors import (
    CapacityError,
    ConfigError,
    ContractError,
    DomainError,
    FormatError,
    NumericError,
    PuadError,
    ShapeError,
)
from .losses import LossKind
from .trainer import ModelConfig, TrainConfig, fit, train
from .evaluate import auroc, report, score_dataset

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "ContractError",
    "DomainError",
    "FormatError",
    "LossKind",
    "ModelConfig",
    "NumericError",
    "PuadError",
    "ShapeError",
    "TrainConfig",
    "auroc",
    "fit",
    "report",
    "score_dataset",
    "train",
]
