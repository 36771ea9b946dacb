"""Sobolev-loss physics-informed neural networks on numpy."""
from .losses import VARIANTS, get_variant, total_loss
from .network import Architecture, MlpParams, evaluate, init_uniform
from .problems import get_problem
from .trainer import TrainConfig, TrainRecord, sweep, train

__all__ = [
    "Architecture",
    "MlpParams",
    "TrainConfig",
    "TrainRecord",
    "VARIANTS",
    "evaluate",
    "get_problem",
    "get_variant",
    "init_uniform",
    "sweep",
    "total_loss",
    "train",
]
