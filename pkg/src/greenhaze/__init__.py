"""Feedforward single image dehazing: a dark channel stage refined by a
coarse-to-fine stack of Saab features, LNT features and boosted trees."""

from .dcp import DcpParams, dehaze_dcp
from .modelio import load_model, save_model
from .ushape import TrainConfig, UShapeModel, infer, train_pipeline

__all__ = ["DcpParams", "TrainConfig", "UShapeModel", "dehaze_dcp", "infer", "load_model", "save_model",
           "train_pipeline"]
__version__ = "0.1.0"
