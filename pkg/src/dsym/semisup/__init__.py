"""Two-phase teacher-student training with filtered pseudo-labels."""

from .ema import TeacherStudentState, ema_module_update, ema_update
from .losses import (
    DegenerateBatchCounter,
    TrainConfig,
    consistency_loss,
    head_activation_maps,
    lambda_unsup,
    supervised_loss,
)
from .pseudo import PASS_THROUGH_SIMILARITY, PseudoLabel, generate_pseudo_labels
from .trainer import DSYMResult, DSYMTrainer, MetricRow, run_dsym

__all__ = [
    "TeacherStudentState",
    "ema_module_update",
    "ema_update",
    "DegenerateBatchCounter",
    "TrainConfig",
    "consistency_loss",
    "head_activation_maps",
    "lambda_unsup",
    "supervised_loss",
    "PASS_THROUGH_SIMILARITY",
    "PseudoLabel",
    "generate_pseudo_labels",
    "DSYMResult",
    "DSYMTrainer",
    "MetricRow",
    "run_dsym",
]
