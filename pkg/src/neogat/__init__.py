"""Reduced-montage neonatal EEG seizure detection with a CNN + graph-attention model."""

from .dataset import EpochStore, extract_epochs, make_split
from .dsp import CHANNEL_NAMES, preprocess_recording
from .explain import gradcam
from .graph import build_graph
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .train import TrainConfig, train_loop

__version__ = "0.1.0"

__all__ = [
    "CHANNEL_NAMES",
    "EpochStore",
    "Model",
    "ModelConfig",
    "TrainConfig",
    "build_graph",
    "extract_epochs",
    "gradcam",
    "load_checkpoint",
    "make_split",
    "preprocess_recording",
    "save_checkpoint",
    "train_loop",
]
