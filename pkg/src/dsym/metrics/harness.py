"""Dataset-level evaluation of a detector network on annotated samples."""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import torch

from ..data.defects import NUM_CLASSES
from ..detector.decode import detect
from .detection_metrics import evaluate_detections, match_detections, precision_recall


@dataclass
class EvalSummary:
    map50: float
    precision: float
    recall: float
    per_class_ap: Dict[int, Optional[float]] = field(default_factory=dict)


def collect_predictions(net, samples, conf_thresh: float = 0.25, iou_nms: float = 0.5):
    """Run detection over samples; returns (predictions, ground_truths) dicts."""
    predictions, ground_truths = {}, {}
    for i, s in enumerate(samples):
        image = torch.from_numpy(np.asarray(s.image, dtype=np.float32))
        predictions[i] = [d.to_tuple(s.size) for d in detect(net, image, conf_thresh, iou_nms)]
        ground_truths[i] = [
            (int(c), *b.to_corners(s.size)) for c, b in s.annotations
        ]
    return predictions, ground_truths


def evaluate_model(
    net,
    samples,
    conf_thresh: float = 0.25,
    iou_nms: float = 0.5,
    iou_eval: float = 0.5,
    num_classes: int = NUM_CLASSES,
) -> EvalSummary:
    """mAP at the eval IoU plus dataset precision/recall at the working threshold."""
    if not samples:
        raise ValueError("no samples to evaluate")
    predictions, ground_truths = collect_predictions(net, samples, conf_thresh, iou_nms)
    ap = evaluate_detections(predictions, ground_truths, range(num_classes), iou_eval)
    tp = fp = fn = 0
    for i in predictions:
        m = match_detections(predictions[i], ground_truths[i], iou_eval)
        tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
    precision, recall = precision_recall(tp, fp, fn)
    return EvalSummary(
        map50=ap.map,
        precision=precision,
        recall=recall,
        per_class_ap=ap.per_class_ap,
    )
