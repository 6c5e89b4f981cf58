"""Trainable vision critic: feature classification and salient listing."""

from .data import (
    BOS,
    EOS,
    PAD,
    VOCAB_SIZE,
    ClassifierExample,
    ImageResolver,
    ListerExample,
    classifier_target,
    lister_target,
    load_classification,
    load_salient,
)
from .errors import (
    CheckpointError,
    CriticServiceError,
    DatasetSchemaError,
    ModelUnavailable,
    NonFiniteLoss,
)
from .model import LoraLinear, TinyVLM, build_model, pack_image
from .serve import CriticServer
from .train import TrainerConfig, TrainingRun, load_checkpoint, predict_label, train

__version__ = "0.1.0"
