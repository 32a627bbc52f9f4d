"""Teacher inference on unlabeled images and gated pseudo-label records."""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch

from ..detector.decode import Detection, detect
from ..filtering.gate import FilterConfig, keep_sample

PASS_THROUGH_SIMILARITY = 1.0


@dataclass(frozen=True)
class PseudoLabel:
    """One unlabeled image scored by the teacher and the cross-modal gate.

    ``clip_similarity`` is the cosine score of the top detection's padded
    crop against its class prompt; when no usable filter is supplied the
    recorded value is the pass-through sentinel 1.0, which the acceptance
    rule treats as clearing any decayed threshold.
    """

    source_image: Optional[str]
    detections: List[Detection]
    teacher_confidence: float
    clip_similarity: float
    accepted: bool


def generate_pseudo_labels(
    teacher_net,
    samples,
    noise_filter,
    t: float,
    filter_config: FilterConfig,
    conf_thresh: float = 0.25,
    iou_nms: float = 0.5,
) -> List[PseudoLabel]:
    """Score each sample with the teacher and gate it for pseudo-training.

    Acceptance follows the conjunction rule: similarity above the decayed
    threshold at step ``t`` and teacher confidence above tau_conf. A filter
    that is missing or flagged unusable contributes the pass-through
    similarity, leaving only the confidence gate active.
    """
    teacher_net.eval()
    filter_usable = noise_filter is not None and getattr(noise_filter, "usable_", False)
    labels = []
    for sample in samples:
        image = torch.from_numpy(np.asarray(sample.image, dtype=np.float32))
        detections = detect(teacher_net, image, conf_thresh, iou_nms)
        if detections:
            confidence = max(d.score for d in detections)
            if filter_usable:
                top = max(detections, key=lambda d: d.score)
                similarity = noise_filter.similarity_to_class(
                    sample.image, top.bbox, top.defect_class
                )
            else:
                similarity = PASS_THROUGH_SIMILARITY
        else:
            confidence, similarity = 0.0, 0.0
        labels.append(
            PseudoLabel(
                source_image=sample.sample_id,
                detections=detections,
                teacher_confidence=confidence,
                clip_similarity=similarity,
                accepted=keep_sample(similarity, confidence, t, filter_config),
            )
        )
    return labels
