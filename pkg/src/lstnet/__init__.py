"""Unsupervised domain adaptation by image translation through a shared latent space.

The package runs on its own numpy reverse-mode autodiff (:mod:`lstnet.autograd`)
and provides the translation network, its objective and training loop,
dataset loaders and translate-then-classify evaluation.
"""

from .networks import BuildConfig, LSTNet, build_lstnet
from .objective import LossReport, ObjectiveWeights
from .trainer import TrainConfig, Trainer, load_checkpoint, save_checkpoint, train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "BuildConfig",
    "LSTNet",
    "LossReport",
    "ObjectiveWeights",
    "TrainConfig",
    "Trainer",
    "build_lstnet",
    "load_checkpoint",
    "save_checkpoint",
    "train_loop",
    "train_step",
]
