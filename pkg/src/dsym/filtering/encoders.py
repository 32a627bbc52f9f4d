"""Toy cross-modal encoders: conv image tower and prompt-text table."""

from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..data.defects import BBox, DefectClass

BACKGROUND_PROMPT = "A photo with no defect"


def prompt_for(defect_class: Optional[DefectClass]) -> str:
    """Rendered prompt string; None means the background prompt."""
    if defect_class is None:
        return BACKGROUND_PROMPT
    return f"A photo with {DefectClass(defect_class).label} defect"


PROMPTS = tuple(prompt_for(c) for c in DefectClass) + (BACKGROUND_PROMPT,)
BACKGROUND_ROW = len(DefectClass)


class ImageEncoder(nn.Module):
    """Small convolutional tower mapping any crop to a d-dim embedding."""

    def __init__(self, d: int = 32, input_size: int = 32):
        super().__init__()
        self.input_size = input_size
        self.net = nn.Sequential(
            nn.Conv2d(1, 8, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(8, 16, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(32, d),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """images: (B,1,h,w) in [0,1], any h,w -> (B,d)."""
        if images.shape[-2:] != (self.input_size, self.input_size):
            images = F.interpolate(
                images, size=(self.input_size, self.input_size),
                mode="bilinear", align_corners=False,
            )
        return self.net(images)


class PromptTable(nn.Module):
    """Learned embedding per rendered prompt: six classes plus background."""

    def __init__(self, d: int = 32):
        super().__init__()
        self.rows = nn.Embedding(len(PROMPTS), d)
        self.row_of = {prompt: i for i, prompt in enumerate(PROMPTS)}

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        return self.rows(rows)

    def encode_prompt(self, defect_class: Optional[DefectClass]) -> torch.Tensor:
        """Embedding for a class prompt, or the background prompt for None."""
        if defect_class is not None:
            try:
                defect_class = DefectClass(defect_class)
            except ValueError:
                raise ValueError(f"unknown defect class: {defect_class!r}") from None
        row = self.row_of[prompt_for(defect_class)]
        return self.rows(torch.tensor(row))


def crop_region(image: np.ndarray, box: BBox, pad: float = 0.2) -> np.ndarray:
    """Box crop with the box inflated by ``pad`` on every side, clamped."""
    size = image.shape[0]
    x1, y1, x2, y2 = box.to_corners(size)
    pw, ph = (x2 - x1) * pad, (y2 - y1) * pad
    c0 = max(0, int(np.floor(x1 - pw)))
    r0 = max(0, int(np.floor(y1 - ph)))
    c1 = min(size, int(np.ceil(x2 + pw)))
    r1 = min(size, int(np.ceil(y2 + ph)))
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"empty crop for box {box}")
    return image[r0:r1, c0:c1]


def crops_to_batch(crops, input_size: int = 32) -> torch.Tensor:
    """Stack variable-size crops into one resized (B,1,S,S) batch."""
    resized = [
        F.interpolate(
            torch.from_numpy(np.ascontiguousarray(c, dtype=np.float32))[None, None],
            size=(input_size, input_size), mode="bilinear", align_corners=False,
        )
        for c in crops
    ]
    return torch.cat(resized, dim=0)
