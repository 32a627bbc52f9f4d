"""Box decoding, score fusion, suppression, and inference assembly."""

from dataclasses import dataclass
from typing import List

import torch

from ..data.defects import BBox, DefectClass


@dataclass(frozen=True)
class Detection:
    """One detected defect; score fuses class probability and objectness."""

    bbox: BBox
    defect_class: DefectClass
    score: float

    def to_tuple(self, size: int):
        """(class_id, score, x1, y1, x2, y2) in image units, for evaluation."""
        x1, y1, x2, y2 = self.bbox.to_corners(size)
        return (int(self.defect_class), self.score, x1, y1, x2, y2)


def dfl_decode(box_dist: torch.Tensor, anchors: torch.Tensor, stride: int, size: int) -> torch.Tensor:
    """Expected side distances from bin distributions, then corner boxes.

    box_dist: (..., cells, 4, m+1) logits. Per side, softmax over the m+1
    bins and take the expectation d = sum_k k p_k; the box around anchor
    (ax, ay) is (ax - d_l s, ay - d_t s, ax + d_r s, ay + d_b s), clamped
    to [0, size].
    """
    if box_dist.shape[-2] != 4:
        raise ValueError(f"box_dist must have 4 sides, got {box_dist.shape[-2]}")
    bins = torch.arange(box_dist.shape[-1], dtype=box_dist.dtype, device=box_dist.device)
    dist = (torch.softmax(box_dist, dim=-1) * bins).sum(dim=-1) * stride
    ax, ay = anchors[..., 0], anchors[..., 1]
    boxes = torch.stack(
        [
            ax - dist[..., 0],
            ay - dist[..., 1],
            ax + dist[..., 2],
            ay + dist[..., 3],
        ],
        dim=-1,
    )
    return boxes.clamp(0.0, float(size))


def classify(cls_logits: torch.Tensor) -> torch.Tensor:
    """Elementwise sigmoid; classes are scored independently."""
    return torch.sigmoid(cls_logits)


def nms(boxes: torch.Tensor, scores: torch.Tensor, iou_thresh: float) -> List[int]:
    """Greedy suppression; returns kept indices in descending score order."""
    order = torch.argsort(scores, descending=True, stable=True)
    kept = []
    suppressed = torch.zeros(len(scores), dtype=torch.bool)
    for i in order.tolist():
        if suppressed[i]:
            continue
        kept.append(i)
        x1 = torch.maximum(boxes[i, 0], boxes[:, 0])
        y1 = torch.maximum(boxes[i, 1], boxes[:, 1])
        x2 = torch.minimum(boxes[i, 2], boxes[:, 2])
        y2 = torch.minimum(boxes[i, 3], boxes[:, 3])
        inter = (x2 - x1).clamp(min=0) * (y2 - y1).clamp(min=0)
        area_i = (boxes[i, 2] - boxes[i, 0]).clamp(min=0) * (boxes[i, 3] - boxes[i, 1]).clamp(min=0)
        areas = (boxes[:, 2] - boxes[:, 0]).clamp(min=0) * (boxes[:, 3] - boxes[:, 1]).clamp(min=0)
        union = area_i + areas - inter
        iou = torch.where(union > 0, inter / union, torch.zeros_like(union))
        suppressed |= iou > iou_thresh
    return kept


def flatten_head_output(output) -> tuple:
    """Per-level maps to per-cell rows: (cells, 4, m+1), (cells, C), (cells,)."""
    B = output.box_dist.shape[0]
    if B != 1:
        raise ValueError("flatten_head_output expects a single-image batch")
    m1 = output.box_dist.shape[1] // 4
    box = output.box_dist[0].reshape(4, m1, -1).permute(2, 0, 1)
    cls = output.cls_logits[0].flatten(1).T
    obj = output.obj_logits[0].flatten()
    return box, cls, obj


@torch.no_grad()
def detect(
    net,
    image: torch.Tensor,
    conf_thresh: float = 0.25,
    iou_nms: float = 0.5,
) -> List[Detection]:
    """Full inference for one (1,H,W) or (H,W) image in [0,1]."""
    if image.ndim == 2:
        image = image.unsqueeze(0)
    size = net.size
    outputs = net(image.unsqueeze(0))
    all_boxes, all_scores, all_classes = [], [], []
    for out in outputs:
        box_logits, cls_logits, obj_logits = flatten_head_output(out)
        boxes = dfl_decode(box_logits, out.anchors, out.stride, size)
        probs = classify(cls_logits) * torch.sigmoid(obj_logits).unsqueeze(1)
        score, cls_id = probs.max(dim=1)
        keep = score >= conf_thresh
        all_boxes.append(boxes[keep])
        all_scores.append(score[keep])
        all_classes.append(cls_id[keep])
    boxes = torch.cat(all_boxes)
    scores = torch.cat(all_scores)
    classes = torch.cat(all_classes)
    detections = []
    for cls in classes.unique().tolist():
        sel = torch.nonzero(classes == cls, as_tuple=True)[0]
        for j in nms(boxes[sel], scores[sel], iou_nms):
            i = sel[j]
            x1, y1, x2, y2 = boxes[i].tolist()
            if x2 <= x1 or y2 <= y1:
                continue
            detections.append(
                Detection(
                    bbox=BBox.from_corners(x1, y1, x2, y2, size),
                    defect_class=DefectClass(cls),
                    score=float(scores[i]),
                )
            )
    detections.sort(key=lambda d: -d.score)
    return detections
