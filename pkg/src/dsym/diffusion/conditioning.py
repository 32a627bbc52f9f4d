"""Class and spatial condition encoding for the conditional denoiser."""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..data.defects import NUM_CLASSES


@dataclass
class ConditionEmbedding:
    """Class, spatial, and fused embeddings, all of shape (batch, d)."""

    e_cls: torch.Tensor
    e_spa: torch.Tensor
    c: torch.Tensor

    def __post_init__(self):
        if not (self.e_cls.shape == self.e_spa.shape == self.c.shape):
            raise ValueError("e_cls, e_spa and c must share one shape")


def sinusoidal_encoding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos positional features, shape (len(positions), dim)."""
    half = dim // 2
    freqs = torch.exp(-np.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = positions.float().unsqueeze(1) * freqs.unsqueeze(0)
    enc = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        enc = torch.cat([enc, torch.zeros(len(positions), 1)], dim=1)
    return enc


class ConditionEncoder(nn.Module):
    """Fuses a class token with mask/box geometry into one condition vector.

    The class branch adds a learned embedding to a fixed sinusoidal encoding
    of the class-token position. The spatial branch sums a small CNN over the
    binary mask with an MLP over the normalized box. Fusion is single-head
    cross-attention with the class vector as query and the spatial vector as
    the sole key/value, plus both residuals.
    """

    def __init__(self, d: int = 64, n_classes: int = NUM_CLASSES):
        super().__init__()
        self.d = d
        self.class_embed = nn.Embedding(n_classes, d)
        self.register_buffer(
            "class_pe", sinusoidal_encoding(torch.arange(n_classes), d), persistent=False
        )
        self.mask_cnn = nn.Sequential(
            nn.Conv2d(1, 8, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(8, 16, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(16, d),
        )
        self.box_mlp = nn.Sequential(nn.Linear(4, 32), nn.SiLU(), nn.Linear(32, d))
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)

    def encode_class(self, class_ids: torch.Tensor) -> torch.Tensor:
        return self.class_embed(class_ids) + self.class_pe[class_ids]

    def encode_spatial(self, masks: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
        return self.mask_cnn(masks) + self.box_mlp(boxes)

    def forward(
        self, class_ids: torch.Tensor, masks: torch.Tensor, boxes: torch.Tensor
    ) -> ConditionEmbedding:
        """class_ids (B,), masks (B,1,H,W) in {0,1}, boxes (B,4) normalized."""
        e_cls = self.encode_class(class_ids)
        e_spa = self.encode_spatial(masks, boxes)
        q = self.q_proj(e_cls).unsqueeze(1)
        k = self.k_proj(e_spa).unsqueeze(1)
        v = self.v_proj(e_spa).unsqueeze(1)
        scores = q @ k.transpose(1, 2) / np.sqrt(self.d)
        # single key/value token: the softmax over it is identically 1
        attn = (torch.softmax(scores, dim=-1) @ v).squeeze(1)
        fused = self.out_proj(attn) + e_cls + e_spa
        return ConditionEmbedding(e_cls=e_cls, e_spa=e_spa, c=fused)


def condition_batch(samples, size: int, device=None):
    """Stack (class, per-box mask, box) triples from annotated samples.

    One conditioning row per annotation; the sample's union mask is cut to
    each annotation's box so mask support stays inside the box.
    """
    class_ids, masks, boxes, images = [], [], [], []
    for sample in samples:
        if sample.mask is None:
            continue
        for cls, box in sample.annotations:
            x1, y1, x2, y2 = box.to_corners(size)
            cut = np.zeros_like(sample.mask)
            r0, r1 = int(np.floor(y1)), int(np.ceil(y2))
            c0, c1 = int(np.floor(x1)), int(np.ceil(x2))
            cut[r0:r1, c0:c1] = sample.mask[r0:r1, c0:c1]
            class_ids.append(int(cls))
            masks.append(cut.astype(np.float32))
            boxes.append([box.cx, box.cy, box.w, box.h])
            images.append(sample.image)
    return (
        torch.tensor(class_ids, dtype=torch.long, device=device),
        torch.from_numpy(np.stack(masks)).unsqueeze(1).to(device),
        torch.tensor(boxes, dtype=torch.float32, device=device),
        torch.from_numpy(np.stack(images)).unsqueeze(1).to(device),
    )
