"""Acoustic model: pseudo-phonemes + speaker -> durations, pitch, mel."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .model import (
    VOICING_THRESHOLD,
    AcousticModel,
    AcousticOutput,
    LossBreakdown,
    ModelConfig,
    SpeakerTable,
    TrainingExample,
    align_durations,
    batch_loss_and_grads,
    init_params,
    length_regulate,
    loss,
    parameter_layer_type,
    predicted_durations,
)
from .training import (
    AdamState,
    GradCheckResult,
    TrainResult,
    adam_step,
    gradient_check,
    toy_gradcheck_case,
    train,
)

__all__ = [
    "VOICING_THRESHOLD",
    "AcousticModel",
    "AcousticOutput",
    "AdamState",
    "Checkpoint",
    "GradCheckResult",
    "LossBreakdown",
    "ModelConfig",
    "SpeakerTable",
    "TrainResult",
    "TrainingExample",
    "adam_step",
    "align_durations",
    "batch_loss_and_grads",
    "gradient_check",
    "init_params",
    "length_regulate",
    "load_checkpoint",
    "loss",
    "parameter_layer_type",
    "predicted_durations",
    "save_checkpoint",
    "toy_gradcheck_case",
    "train",
]
