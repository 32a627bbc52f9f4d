"""Semi-supervised loss terms, the unsupervised-weight ramp, and TrainConfig."""

from dataclasses import dataclass
from typing import List, Sequence

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class TrainConfig:
    """Two-phase training schedule and optimizer settings.

    Phase 1 (supervised) covers epochs 1..epochs_sup; phase 2 (teacher-
    student) covers epochs_sup+1..epochs_total. epochs_sup == epochs_total
    degenerates to pure supervised training.
    """

    epochs_sup: int = 50
    epochs_total: int = 200
    alpha: float = 0.999
    tau_conf: float = 0.5
    lambda_unsup_max: float = 1.0
    ramp_epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.epochs_sup, int) or self.epochs_sup < 1:
            raise ValueError(f"epochs_sup must be an int >= 1, got {self.epochs_sup}")
        if not isinstance(self.epochs_total, int) or self.epochs_total < self.epochs_sup:
            raise ValueError(
                f"epochs_total must be an int >= epochs_sup, got {self.epochs_total}"
            )
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.tau_conf <= 1.0:
            raise ValueError(f"tau_conf must be in [0, 1], got {self.tau_conf}")
        if self.lambda_unsup_max < 0.0:
            raise ValueError(f"lambda_unsup_max must be >= 0, got {self.lambda_unsup_max}")
        if not isinstance(self.ramp_epochs, int) or self.ramp_epochs < 0:
            raise ValueError(f"ramp_epochs must be an int >= 0, got {self.ramp_epochs}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ValueError(f"batch_size must be an int >= 1, got {self.batch_size}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


class DegenerateBatchCounter:
    """Counts batches that carried no assigned targets."""

    def __init__(self):
        self.count = 0

    def bump(self):
        self.count += 1


def supervised_loss(
    probs: torch.Tensor, targets: torch.Tensor, counter: DegenerateBatchCounter = None
) -> torch.Tensor:
    """Mean cross-entropy of probability rows against integer targets.

    probs: (N, C) rows of class probabilities; targets: (N,) class ids.
    An empty batch returns 0 and bumps ``counter`` instead of raising.
    """
    if probs.ndim != 2:
        raise ValueError(f"probs must be (N, C), got shape {tuple(probs.shape)}")
    if targets.shape != probs.shape[:1]:
        raise ValueError(
            f"targets must be (N,) aligned with probs, got {tuple(targets.shape)}"
        )
    if probs.shape[0] == 0:
        if counter is not None:
            counter.bump()
        return torch.zeros((), dtype=probs.dtype)
    if targets.min() < 0 or targets.max() >= probs.shape[1]:
        raise ValueError("targets out of class range")
    picked = probs.gather(1, targets.long().unsqueeze(1)).squeeze(1)
    return -torch.log(picked).mean()


def consistency_loss(student_out, teacher_out) -> torch.Tensor:
    """Mean squared difference over aligned activation maps.

    Accepts a tensor pair or two equal-length sequences of tensors; the mean
    runs over every element of every map.
    """
    if isinstance(student_out, torch.Tensor):
        student_out, teacher_out = [student_out], [teacher_out]
    if len(student_out) != len(teacher_out):
        raise ValueError("student and teacher output lists differ in length")
    total, count = None, 0
    for s, t in zip(student_out, teacher_out):
        if s.shape != t.shape:
            raise ValueError(f"shape mismatch: {tuple(s.shape)} vs {tuple(t.shape)}")
        sq = (s - t).pow(2).sum()
        total = sq if total is None else total + sq
        count += s.numel()
    if count == 0:
        raise ValueError("no elements to compare")
    return total / count


def head_activation_maps(outputs, size: int) -> List[torch.Tensor]:
    """Post-activation maps the consistency term compares.

    Per level: sigmoid class probabilities, sigmoid objectness, and expected
    box distances scaled by stride/size so every map lives on an O(1) range.
    """
    maps = []
    for out in outputs:
        B, _, H, W = out.box_dist.shape
        m1 = out.box_dist.shape[1] // 4
        dist = out.box_dist.reshape(B, 4, m1, H, W).softmax(dim=2)
        bins = torch.arange(m1, dtype=dist.dtype).reshape(1, 1, m1, 1, 1)
        expected = (dist * bins).sum(dim=2) * (out.stride / size)
        maps.extend([out.cls_logits.sigmoid(), out.obj_logits.sigmoid(), expected])
    return maps


def lambda_unsup(epoch: int, config: TrainConfig) -> float:
    """Linear ramp 0 -> lambda_unsup_max over ramp_epochs past epochs_sup."""
    if epoch < config.epochs_sup:
        raise ValueError(
            f"lambda_unsup applies from epoch {config.epochs_sup}, got {epoch}"
        )
    if config.ramp_epochs == 0:
        return config.lambda_unsup_max
    frac = min(1.0, (epoch - config.epochs_sup) / config.ramp_epochs)
    return config.lambda_unsup_max * frac
