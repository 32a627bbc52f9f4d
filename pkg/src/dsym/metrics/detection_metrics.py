"""Detection metrics: IoU matching, PR curves, per-class AP, and mAP.

Boxes are corner-format ``(x1, y1, x2, y2)`` in image units. A detection is
``(class_id, score, x1, y1, x2, y2)`` and a ground-truth box is
``(class_id, x1, y1, x2, y2)``; both are plain sequences so the module stays
framework-free.

Degenerate conventions (documented, deliberate):
  * precision with zero detections is 1.0,
  * recall with zero ground truths is 1.0,
  * AP for a class with zero ground truths anywhere is undefined (``None``)
    and the class is excluded from the mAP mean.

Ties in confidence are broken by detection id (insertion order), which makes
every quantity here invariant to permutations of equal-scored detections.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


@dataclass
class MatchResult:
    """Outcome of matching one image's detections against its ground truth.

    ``is_tp`` and ``matched_gt`` align with the input detection order.
    """

    is_tp: List[bool]
    matched_gt: List[Optional[int]]
    num_gt: int

    @property
    def tp(self) -> int:
        return sum(self.is_tp)

    @property
    def fp(self) -> int:
        return len(self.is_tp) - self.tp

    @property
    def fn(self) -> int:
        return self.num_gt - self.tp


@dataclass
class PRCurve:
    """Precision/recall points swept over distinct confidence thresholds."""

    points: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def recalls(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def precisions(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=np.float64)


@dataclass
class APResult:
    per_class_ap: Dict[int, Optional[float]]
    map: float
    undefined_classes: List[int] = field(default_factory=list)


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Intersection-over-union of two corner-format boxes; 0 when disjoint
    or either box is degenerate."""
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    area_a = max(0.0, ax2 - ax1) * max(0.0, ay2 - ay1)
    area_b = max(0.0, bx2 - bx1) * max(0.0, by2 - by1)
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    ix1 = max(ax1, bx1)
    iy1 = max(ay1, by1)
    ix2 = min(ax2, bx2)
    iy2 = min(ay2, by2)
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    if inter <= 0.0:
        return 0.0
    return inter / (area_a + area_b - inter)


def match_detections(detections, ground_truths, iou_thresh: float = 0.5) -> MatchResult:
    """Greedy matching in descending score order.

    Each detection claims the highest-IoU not-yet-matched ground-truth box of
    the same class with IoU >= ``iou_thresh``; otherwise it is a false
    positive. Equal IoUs resolve to the lowest ground-truth index.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i][1], i))
    taken = [False] * len(ground_truths)
    is_tp = [False] * len(detections)
    matched = [None] * len(detections)
    for i in order:
        cls, _score, x1, y1, x2, y2 = detections[i]
        best_iou, best_j = 0.0, None
        for j, gt in enumerate(ground_truths):
            if taken[j] or gt[0] != cls:
                continue
            ov = iou((x1, y1, x2, y2), gt[1:5])
            if ov >= iou_thresh and ov > best_iou:
                best_iou, best_j = ov, j
        if best_j is not None:
            taken[best_j] = True
            is_tp[i] = True
            matched[i] = best_j
    return MatchResult(is_tp=is_tp, matched_gt=matched, num_gt=len(ground_truths))


def precision_recall(tp: int, fp: int, fn: int) -> Tuple[float, float]:
    """Precision and recall from accumulated counts, with the documented
    0/0 conventions (precision -> 1 with no detections, recall -> 1 with no
    ground truths)."""
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return precision, recall


def _class_tp_flags(image_detections, image_ground_truths, class_id, iou_thresh):
    """Flatten one class's detections across images into (score, id, tp).

    Matching is greedy per image in global descending score order so a high
    score detection in one image cannot be displaced by a lower one.
    """
    records = []  # (score, det_id, image_key, box)
    det_id = 0
    for key in image_detections:
        for det in image_detections[key]:
            if det[0] == class_id:
                records.append((float(det[1]), det_id, key, tuple(det[2:6])))
            det_id += 1
    total_gt = 0
    gt_boxes: Dict[object, list] = {}
    gt_taken: Dict[object, list] = {}
    for key, gts in image_ground_truths.items():
        boxes = [tuple(g[1:5]) for g in gts if g[0] == class_id]
        gt_boxes[key] = boxes
        gt_taken[key] = [False] * len(boxes)
        total_gt += len(boxes)

    records.sort(key=lambda r: (-r[0], r[1]))
    scores = np.array([r[0] for r in records], dtype=np.float64)
    tp_flags = np.zeros(len(records), dtype=bool)
    for idx, (_score, _did, key, box) in enumerate(records):
        boxes = gt_boxes.get(key, [])
        taken = gt_taken.get(key, [])
        best_iou, best_j = 0.0, None
        for j, gt_box in enumerate(boxes):
            if taken[j]:
                continue
            ov = iou(box, gt_box)
            if ov >= iou_thresh and ov > best_iou:
                best_iou, best_j = ov, j
        if best_j is not None:
            taken[best_j] = True
            tp_flags[idx] = True
    return scores, tp_flags, total_gt


def _ap_from_flags(scores: np.ndarray, tp_flags: np.ndarray, total_gt: int):
    """Exact area under the monotone-envelope PR curve.

    One PR point per distinct confidence value; precision at recall r is the
    running maximum of precision over recall >= r; the integral is the
    rectangle sum over recall increments.
    """
    if total_gt == 0:
        return None, PRCurve()
    if len(scores) == 0:
        return 0.0, PRCurve()
    tp_cum = np.cumsum(tp_flags.astype(np.float64))
    fp_cum = np.cumsum((~tp_flags).astype(np.float64))
    # last index of each distinct-score group = the PR point for that threshold
    is_group_end = np.ones(len(scores), dtype=bool)
    is_group_end[:-1] = scores[1:] != scores[:-1]
    idx = np.flatnonzero(is_group_end)
    recalls = tp_cum[idx] / total_gt
    precisions = tp_cum[idx] / (tp_cum[idx] + fp_cum[idx])
    curve = PRCurve(points=list(zip(recalls.tolist(), precisions.tolist())))
    # monotone envelope from the right, then rectangle integration over recall
    env = np.maximum.accumulate(precisions[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recalls[:-1]))
    ap = float(np.sum((recalls - prev_recall) * env))
    return ap, curve


def average_precision(
    image_detections: Dict[object, list],
    image_ground_truths: Dict[object, list],
    class_id: int,
    iou_thresh: float = 0.5,
    return_curve: bool = False,
):
    """AP for one class over a set of images.

    ``image_detections`` maps an image key to its detection list and
    ``image_ground_truths`` to its ground-truth list (formats in the module
    docstring). Returns ``None`` when the class has no ground truth anywhere.
    """
    scores, tp_flags, total_gt = _class_tp_flags(
        image_detections, image_ground_truths, class_id, iou_thresh
    )
    ap, curve = _ap_from_flags(scores, tp_flags, total_gt)
    if return_curve:
        return ap, curve
    return ap


def micro_pr_curve(
    image_detections: Dict[object, list],
    image_ground_truths: Dict[object, list],
    class_ids: Sequence[int],
    iou_thresh: float = 0.5,
) -> PRCurve:
    """One PR sweep pooling every class's detections.

    Matching stays class-aware (a detection can only claim ground truth of
    its own class); only the cumulative counting is shared, giving a single
    dataset-level curve. Empty when there is no ground truth at all.
    """
    parts = [
        _class_tp_flags(image_detections, image_ground_truths, c, iou_thresh)
        for c in class_ids
    ]
    total_gt = sum(p[2] for p in parts)
    scores = np.concatenate([p[0] for p in parts]) if parts else np.array([])
    flags = np.concatenate([p[1] for p in parts]) if parts else np.array([], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    _, curve = _ap_from_flags(scores[order], flags[order], total_gt)
    return curve


def mean_ap(per_class_ap: Dict[int, Optional[float]]) -> APResult:
    """Arithmetic mean of the defined per-class AP values."""
    defined = {c: v for c, v in per_class_ap.items() if v is not None}
    undefined = sorted(c for c, v in per_class_ap.items() if v is None)
    if not defined:
        raise ValueError("no class has a defined AP (no ground truth at all)")
    value = float(np.mean([defined[c] for c in sorted(defined)]))
    return APResult(per_class_ap=dict(per_class_ap), map=value, undefined_classes=undefined)


def evaluate_detections(
    image_detections: Dict[object, list],
    image_ground_truths: Dict[object, list],
    class_ids: Sequence[int],
    iou_thresh: float = 0.5,
) -> APResult:
    """Per-class AP and mAP at one IoU threshold."""
    per_class = {
        c: average_precision(image_detections, image_ground_truths, c, iou_thresh)
        for c in class_ids
    }
    return mean_ap(per_class)


def evaluate_map_range(
    image_detections: Dict[object, list],
    image_ground_truths: Dict[object, list],
    class_ids: Sequence[int],
    thresholds: Sequence[float] = tuple(np.arange(0.5, 0.96, 0.05)),
) -> float:
    """Secondary report: mAP averaged over an IoU-threshold sweep."""
    values = [
        evaluate_detections(image_detections, image_ground_truths, class_ids, t).map
        for t in thresholds
    ]
    return float(np.mean(values))
