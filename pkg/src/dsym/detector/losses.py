"""Target assignment and the composed detection training objective."""

from dataclasses import dataclass
from typing import List

import torch
import torch.nn.functional as F

from .decode import dfl_decode


@dataclass
class LevelTargets:
    """Per-cell supervision for one feature level.

    fg: (cells,) bool; cls_target: (cells,) long, -1 on background;
    box_target: (cells, 4) corner boxes in image units, zeros on background.
    """

    fg: torch.Tensor
    cls_target: torch.Tensor
    box_target: torch.Tensor


def assign_targets(outputs, gt_boxes, gt_classes) -> List[LevelTargets]:
    """Center-in-box assignment with nearest-center tie-breaking.

    A cell is positive when its anchor center falls inside a ground-truth
    box; a cell contested by several boxes goes to the one whose center is
    nearest the anchor (ties resolved by ground-truth order).
    """
    targets = []
    for out in outputs:
        anchors = out.anchors
        n_cells = anchors.shape[0]
        fg = torch.zeros(n_cells, dtype=torch.bool)
        cls_target = torch.full((n_cells,), -1, dtype=torch.long)
        box_target = torch.zeros(n_cells, 4)
        if len(gt_boxes):
            gt = torch.as_tensor(gt_boxes, dtype=torch.float32)
            centers = torch.stack(
                [(gt[:, 0] + gt[:, 2]) / 2, (gt[:, 1] + gt[:, 3]) / 2], dim=1
            )
            inside = (
                (anchors[:, 0:1] > gt[None, :, 0])
                & (anchors[:, 0:1] < gt[None, :, 2])
                & (anchors[:, 1:2] > gt[None, :, 1])
                & (anchors[:, 1:2] < gt[None, :, 3])
            )
            dist = torch.cdist(anchors, centers)
            dist = torch.where(inside, dist, torch.full_like(dist, float("inf")))
            best = dist.argmin(dim=1)
            hit = inside.any(dim=1)
            fg[hit] = True
            cls_target[hit] = torch.as_tensor(
                [int(c) for c in gt_classes], dtype=torch.long
            )[best[hit]]
            box_target[hit] = gt[best[hit]]
        targets.append(LevelTargets(fg=fg, cls_target=cls_target, box_target=box_target))
    return targets


def _dfl_side_loss(logits: torch.Tensor, dist: torch.Tensor, m: int) -> torch.Tensor:
    """Cross-entropy spread over the two bins bracketing each distance."""
    dist = dist.clamp(0.0, m - 1e-4)
    lo = dist.floor().long()
    hi = lo + 1
    w_hi = dist - lo.float()
    w_lo = 1.0 - w_hi
    logp = F.log_softmax(logits, dim=-1)
    return -(w_lo * logp.gather(-1, lo.unsqueeze(-1)).squeeze(-1)
             + w_hi * logp.gather(-1, hi.unsqueeze(-1)).squeeze(-1)).mean()


def _pairwise_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    x1 = torch.maximum(a[:, 0], b[:, 0])
    y1 = torch.maximum(a[:, 1], b[:, 1])
    x2 = torch.minimum(a[:, 2], b[:, 2])
    y2 = torch.minimum(a[:, 3], b[:, 3])
    inter = (x2 - x1).clamp(min=0) * (y2 - y1).clamp(min=0)
    area_a = (a[:, 2] - a[:, 0]).clamp(min=0) * (a[:, 3] - a[:, 1]).clamp(min=0)
    area_b = (b[:, 2] - b[:, 0]).clamp(min=0) * (b[:, 3] - b[:, 1]).clamp(min=0)
    union = area_a + area_b - inter
    return torch.where(union > 0, inter / union, torch.zeros_like(union))


def detection_loss(outputs, targets_per_image, num_classes: int, size: int):
    """Classification + objectness BCE, DFL cross-entropy, and IoU loss.

    ``targets_per_image`` is one assign_targets() result per batch element.
    Returns (total, parts dict). Classification and box terms average over
    positive cells only; objectness covers every cell. With no positives
    anywhere the box/class terms vanish and only objectness remains.
    """
    cls_terms, obj_terms, dfl_terms, iou_terms = [], [], [], []
    for b, targets in enumerate(targets_per_image):
        for out, tgt in zip(outputs, targets):
            m = out.box_dist.shape[1] // 4 - 1
            box_logits = out.box_dist[b].reshape(4, m + 1, -1).permute(2, 0, 1)
            cls_logits = out.cls_logits[b].flatten(1).T
            obj_logits = out.obj_logits[b].flatten()
            obj_terms.append(
                F.binary_cross_entropy_with_logits(obj_logits, tgt.fg.float())
            )
            if not tgt.fg.any():
                continue
            fg = tgt.fg
            cls_onehot = F.one_hot(tgt.cls_target[fg], num_classes).float()
            cls_terms.append(
                F.binary_cross_entropy_with_logits(cls_logits[fg], cls_onehot)
            )
            anchors = out.anchors[fg]
            gt = tgt.box_target[fg]
            side_dist = torch.stack(
                [
                    (anchors[:, 0] - gt[:, 0]) / out.stride,
                    (anchors[:, 1] - gt[:, 1]) / out.stride,
                    (gt[:, 2] - anchors[:, 0]) / out.stride,
                    (gt[:, 3] - anchors[:, 1]) / out.stride,
                ],
                dim=1,
            )
            dfl_terms.append(_dfl_side_loss(box_logits[fg], side_dist, m))
            decoded = dfl_decode(box_logits[fg], anchors, out.stride, size)
            iou_terms.append((1.0 - _pairwise_iou(decoded, gt)).mean())

    def _mean(terms):
        return torch.stack(terms).mean() if terms else torch.zeros(())

    parts = {
        "cls": _mean(cls_terms),
        "obj": _mean(obj_terms),
        "dfl": _mean(dfl_terms),
        "iou": _mean(iou_terms),
    }
    total = parts["cls"] + parts["obj"] + parts["dfl"] + parts["iou"]
    return total, parts
