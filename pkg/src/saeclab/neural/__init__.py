"""Numpy three-stage network with manual gradients."""

from .checkpoint import load_checkpoint, save_checkpoint
from .crn import CrnStage, StageConfig
from .layers import GRU, Conv2d, ConvTranspose2d
from .model import ModelConfig, SaesModel, loss_stage1, loss_stage2, make_config
from .optim import AdamState, adam_step
from .train import Example, Schedule, TrainingDiverged, bundle_to_example, enhance, train_two_stage

__all__ = [
    "AdamState", "Conv2d", "ConvTranspose2d", "CrnStage", "Example", "GRU", "ModelConfig",
    "SaesModel", "Schedule", "StageConfig", "TrainingDiverged", "adam_step",
    "bundle_to_example", "enhance", "load_checkpoint", "loss_stage1", "loss_stage2",
    "make_config", "save_checkpoint", "train_two_stage",
]
