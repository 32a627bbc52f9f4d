from .decode import Detection, classify, detect, dfl_decode, flatten_head_output, nms
from .estimator import DefectDetector, samples_to_tensors, train_detector
from .losses import LevelTargets, assign_targets, detection_loss
from .network import (
    Backbone,
    DetectorNet,
    HeadOutput,
    LevelHead,
    STRIDES,
    init_head_bias,
    make_anchors,
)
from .state_space import GatedSSMBlock, SSMParams, init_ssm_params, ssm_scan, stabilized

__all__ = [
    "Detection",
    "classify",
    "detect",
    "dfl_decode",
    "flatten_head_output",
    "nms",
    "DefectDetector",
    "samples_to_tensors",
    "train_detector",
    "LevelTargets",
    "assign_targets",
    "detection_loss",
    "Backbone",
    "DetectorNet",
    "HeadOutput",
    "LevelHead",
    "STRIDES",
    "init_head_bias",
    "make_anchors",
    "GatedSSMBlock",
    "SSMParams",
    "init_ssm_params",
    "ssm_scan",
    "stabilized",
]
