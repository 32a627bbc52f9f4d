from .detection_metrics import (
    APResult,
    MatchResult,
    PRCurve,
    average_precision,
    evaluate_detections,
    evaluate_map_range,
    iou,
    match_detections,
    mean_ap,
    micro_pr_curve,
    precision_recall,
)
from .harness import EvalSummary, collect_predictions, evaluate_model

__all__ = [
    "APResult",
    "MatchResult",
    "PRCurve",
    "average_precision",
    "evaluate_detections",
    "evaluate_map_range",
    "iou",
    "match_detections",
    "mean_ap",
    "micro_pr_curve",
    "precision_recall",
    "EvalSummary",
    "collect_predictions",
    "evaluate_model",
]
