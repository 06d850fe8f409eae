"""Desk-scale single-image deraining with dynamic dual self-attention.

A from-scratch NumPy stack: a reverse-mode autodiff tape (:mod:`.tensor`),
convolution / normalization / resampling kernels (:mod:`.nn`), dual dense +
top-k sparse attention (:mod:`.attention`), the multiscale feed-forward unit
(:mod:`.sefn`), a U-shaped encoder-decoder (:mod:`.model`), and the training,
data, metric, and persistence plumbing behind the ``derain-ddsa`` CLI.
"""

from .model import DerainModel, ModelConfig, paper_config
from .training import TrainConfig, TrainingDiverged, paper_train_config, train_loop
from .tensor import Tensor, Tape, no_grad

__version__ = "0.1.0"

__all__ = [
    "DerainModel",
    "ModelConfig",
    "paper_config",
    "TrainConfig",
    "TrainingDiverged",
    "paper_train_config",
    "train_loop",
    "Tensor",
    "Tape",
    "no_grad",
    "__version__",
]
