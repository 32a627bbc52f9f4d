"""Backbone, state-space detection head, and adaptive bias initialization."""

import math
from dataclasses import dataclass
from typing import List

import torch
from torch import nn

from ..data.defects import NUM_CLASSES
from .state_space import GatedSSMBlock

STRIDES = (8, 16)


@dataclass
class HeadOutput:
    """Raw per-level head maps plus decode geometry.

    box_dist: (B, 4*(m+1), H, W) DFL logits; cls_logits: (B, C, H, W);
    obj_logits: (B, 1, H, W); anchors: (H*W, 2) cell centers in image
    units, row-major; stride: the level's downsampling factor.
    """

    box_dist: torch.Tensor
    cls_logits: torch.Tensor
    obj_logits: torch.Tensor
    anchors: torch.Tensor
    stride: int

    def __post_init__(self):
        shapes = {t.shape[-2:] for t in (self.box_dist, self.cls_logits, self.obj_logits)}
        if len(shapes) != 1:
            raise ValueError(f"branch spatial shapes disagree: {shapes}")


def init_head_bias(n: int, s: int) -> float:
    """Classification bias b = ln(n / s) for n classes at stride s."""
    if n < 1 or s < 1:
        raise ValueError(f"need n >= 1 and s >= 1, got n={n}, s={s}")
    return math.log(n / s)


def make_anchors(size: int, stride: int) -> torch.Tensor:
    """Row-major (H*W, 2) grid-cell centers in image units."""
    cells = size // stride
    coords = (torch.arange(cells, dtype=torch.float32) + 0.5) * stride
    ys, xs = torch.meshgrid(coords, coords, indexing="ij")
    return torch.stack([xs.reshape(-1), ys.reshape(-1)], dim=1)


class ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.norm = nn.GroupNorm(4, out_ch)
        self.act = nn.SiLU()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class Backbone(nn.Module):
    """4-stage strided network emitting stride-8 and stride-16 maps."""

    def __init__(self, dim: int = 32):
        super().__init__()
        self.stage1 = ConvBlock(1, 16, stride=2)
        self.stage2 = ConvBlock(16, 32, stride=2)
        self.stage3 = nn.Sequential(ConvBlock(32, 48, stride=2), ConvBlock(48, 48))
        self.stage4 = nn.Sequential(ConvBlock(48, 64, stride=2), ConvBlock(64, 64))
        self.proj8 = nn.Conv2d(48, dim, 1)
        self.proj16 = nn.Conv2d(64, dim, 1)

    def forward(self, x: torch.Tensor):
        h = self.stage2(self.stage1(x))
        p8 = self.stage3(h)
        p16 = self.stage4(p8)
        return self.proj8(p8), self.proj16(p16)


class ConvMixBlock(nn.Module):
    """Residual convolutional token mixer; drop-in head block without state recurrence."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.GroupNorm(1, dim)
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(self.act(self.conv1(self.norm(x))))


class LevelHead(nn.Module):
    """Gated state-space block followed by three decoupled 1x1 branches.

    With use_ssm=False the sequence block is swapped for a plain
    convolutional mixer of similar size, keeping the branch geometry
    identical so both variants decode the same way.
    """

    def __init__(
        self,
        dim: int,
        stride: int,
        num_classes: int,
        m: int,
        state_dim: int,
        use_ssm: bool = True,
    ):
        super().__init__()
        self.stride = stride
        self.m = m
        self.use_ssm = use_ssm
        self.block = GatedSSMBlock(dim, state_dim=state_dim) if use_ssm else ConvMixBlock(dim)
        self.box_branch = nn.Conv2d(dim, 4 * (m + 1), 1)
        self.cls_branch = nn.Conv2d(dim, num_classes, 1)
        self.obj_branch = nn.Conv2d(dim, 1, 1)
        # bias b = ln(n/s) with zero weights makes every cell's initial
        # class probability exactly sigmoid(b)
        nn.init.zeros_(self.cls_branch.weight)
        nn.init.constant_(self.cls_branch.bias, init_head_bias(num_classes, stride))

    def forward(self, feat: torch.Tensor, size: int) -> HeadOutput:
        if feat.shape[1] != self.box_branch.in_channels:
            raise ValueError(
                f"expected {self.box_branch.in_channels} channels, got {feat.shape[1]}"
            )
        B, D, H, W = feat.shape
        if self.use_ssm:
            seq = feat.flatten(2).transpose(1, 2)
            seq = self.block(seq)
            mixed = seq.transpose(1, 2).reshape(B, D, H, W)
        else:
            mixed = self.block(feat)
        return HeadOutput(
            box_dist=self.box_branch(mixed),
            cls_logits=self.cls_branch(mixed),
            obj_logits=self.obj_branch(mixed),
            anchors=make_anchors(size, self.stride).to(feat.device),
            stride=self.stride,
        )


class DetectorNet(nn.Module):
    """Backbone plus one state-space head per stride level."""

    def __init__(
        self,
        num_classes: int = NUM_CLASSES,
        dim: int = 32,
        m: int = 8,
        state_dim: int = 8,
        size: int = 64,
        use_ssm: bool = True,
    ):
        super().__init__()
        self.num_classes = num_classes
        self.m = m
        self.size = size
        self.use_ssm = use_ssm
        self.backbone = Backbone(dim)
        self.heads = nn.ModuleList(
            [LevelHead(dim, s, num_classes, m, state_dim, use_ssm=use_ssm) for s in STRIDES]
        )

    def forward(self, images: torch.Tensor) -> List[HeadOutput]:
        """images: (B,1,H,W) in [0,1] -> one HeadOutput per stride level."""
        feats = self.backbone(images)
        return [head(feat, self.size) for head, feat in zip(self.heads, feats)]
