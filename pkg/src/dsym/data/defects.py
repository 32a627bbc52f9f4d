"""Procedural six-class surface-defect image generator.

Each class has a fixed appearance heuristic parameterized only by the seed,
so the whole dataset is a pure function of (class, seed, size). Images are
grayscale float32 in [0, 1]; every defect carries a pixel mask and the tight
normalized bounding box of that mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Tuple

import numpy as np


class DefectClass(IntEnum):
    CRAZING = 0
    INCLUSION = 1
    PATCHES = 2
    PITTED_SURFACE = 3
    ROLLED_IN_SCALE = 4
    SCRATCHES = 5

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "DefectClass":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown defect class name: {name!r}") from None


CLASS_NAMES = tuple(c.label for c in DefectClass)
NUM_CLASSES = len(DefectClass)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized center/size coordinates."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center out of range: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size out of range: ({self.w}, {self.h})")

    def to_corners(self, size: int) -> Tuple[float, float, float, float]:
        """Denormalized (x1, y1, x2, y2) clamped to the image."""
        x1 = max(0.0, (self.cx - self.w / 2) * size)
        y1 = max(0.0, (self.cy - self.h / 2) * size)
        x2 = min(float(size), (self.cx + self.w / 2) * size)
        y2 = min(float(size), (self.cy + self.h / 2) * size)
        return x1, y1, x2, y2

    @staticmethod
    def from_corners(x1: float, y1: float, x2: float, y2: float, size: int) -> "BBox":
        x1, x2 = max(0.0, x1), min(float(size), x2)
        y1, y2 = max(0.0, y1), min(float(size), y2)
        return BBox(
            cx=(x1 + x2) / 2 / size,
            cy=(y1 + y2) / 2 / size,
            w=max(x2 - x1, 1e-6) / size,
            h=max(y2 - y1, 1e-6) / size,
        )


@dataclass
class ImageSample:
    """Grayscale image with box annotations; the unit of every pipeline."""

    image: np.ndarray
    annotations: List[Tuple[DefectClass, BBox]] = field(default_factory=list)
    mask: Optional[np.ndarray] = None
    sample_id: Optional[str] = None

    @property
    def size(self) -> int:
        return self.image.shape[0]


def _smooth_noise(rng: np.random.Generator, size: int, cells: int, amplitude: float) -> np.ndarray:
    """Low-frequency field: coarse noise bilinearly upsampled to size x size."""
    coarse = rng.normal(0.0, 1.0, size=(cells, cells))
    xs = np.linspace(0, cells - 1, size)
    grid = np.empty((size, size), dtype=np.float64)
    x0 = np.clip(xs.astype(int), 0, cells - 2)
    fx = xs - x0
    rows = coarse[:, x0] * (1 - fx) + coarse[:, x0 + 1] * fx
    grid = rows[x0, :] * (1 - fx[:, None]) + rows[x0 + 1, :] * fx[:, None]
    return amplitude * grid


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.38, 0.52)
    img = np.full((size, size), base, dtype=np.float64)
    img += _smooth_noise(rng, size, cells=5, amplitude=0.045)
    # horizontal brushing typical of rolled steel
    streaks = rng.normal(0.0, 0.02, size=(size, 1))
    kernel = np.ones(5) / 5.0
    streaks[:, 0] = np.convolve(streaks[:, 0], kernel, mode="same")
    img += streaks
    img += rng.normal(0.0, 0.018, size=(size, size))
    return np.clip(img, 0.02, 0.98)


def _draw_line(mask: np.ndarray, x0, y0, x1, y1, thickness: int):
    size = mask.shape[0]
    n = int(max(abs(x1 - x0), abs(y1 - y0)) * 2) + 2
    ts = np.linspace(0.0, 1.0, n)
    xs = np.clip((x0 + (x1 - x0) * ts).round().astype(int), 0, size - 1)
    ys = np.clip((y0 + (y1 - y0) * ts).round().astype(int), 0, size - 1)
    r = thickness // 2
    for dx in range(-r, thickness - r):
        for dy in range(-r, thickness - r):
            mask[np.clip(ys + dy, 0, size - 1), np.clip(xs + dx, 0, size - 1)] = True


def _shape_crazing(rng, size):
    """Thin branching polyline network."""
    mask = np.zeros((size, size), dtype=bool)
    x = rng.uniform(0.2, 0.8) * size
    y = rng.uniform(0.2, 0.8) * size
    angle = rng.uniform(0, 2 * np.pi)
    length = rng.uniform(0.35, 0.6) * size
    segs = rng.integers(3, 6)
    for _ in range(segs):
        step = length / segs
        nx = np.clip(x + step * np.cos(angle), 2, size - 3)
        ny = np.clip(y + step * np.sin(angle), 2, size - 3)
        _draw_line(mask, x, y, nx, ny, 1)
        if rng.uniform() < 0.7:  # branch
            bang = angle + rng.uniform(0.6, 1.3) * rng.choice([-1, 1])
            blen = step * rng.uniform(0.6, 1.2)
            bx = np.clip(nx + blen * np.cos(bang), 2, size - 3)
            by = np.clip(ny + blen * np.sin(bang), 2, size - 3)
            _draw_line(mask, nx, ny, bx, by, 1)
        x, y = nx, ny
        angle += rng.uniform(-0.5, 0.5)
    return mask, rng.uniform(-0.30, -0.20)


def _shape_inclusion(rng, size):
    """Dark elliptical blob."""
    mask = np.zeros((size, size), dtype=bool)
    cx = rng.uniform(0.2, 0.8) * size
    cy = rng.uniform(0.2, 0.8) * size
    a = rng.uniform(0.05, 0.14) * size
    b = rng.uniform(0.05, 0.14) * size
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    xr = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    yr = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    mask |= (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
    return mask, rng.uniform(-0.45, -0.30)


def _shape_patches(rng, size):
    """Bright irregular rectangular patch."""
    mask = np.zeros((size, size), dtype=bool)
    w = rng.uniform(0.15, 0.32) * size
    h = rng.uniform(0.15, 0.32) * size
    x0 = rng.uniform(0.05, 0.9 - w / size) * size
    y0 = rng.uniform(0.05, 0.9 - h / size) * size
    yy, xx = np.mgrid[0:size, 0:size]
    inside = (xx >= x0) & (xx <= x0 + w) & (yy >= y0) & (yy <= y0 + h)
    # roughen the edges
    jitter = _smooth_noise(rng, size, cells=8, amplitude=1.0) > -0.4
    mask |= inside & jitter
    if not mask.any():
        mask |= inside
    return mask, rng.uniform(0.22, 0.38)


def _shape_pitted(rng, size):
    """Cluster of small dark pits."""
    mask = np.zeros((size, size), dtype=bool)
    ccx = rng.uniform(0.25, 0.75) * size
    ccy = rng.uniform(0.25, 0.75) * size
    spread = rng.uniform(0.10, 0.18) * size
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(8, 16))):
        px = np.clip(rng.normal(ccx, spread), 2, size - 3)
        py = np.clip(rng.normal(ccy, spread), 2, size - 3)
        r = rng.uniform(1.0, 2.2)
        mask |= (xx - px) ** 2 + (yy - py) ** 2 <= r**2
    return mask, rng.uniform(-0.40, -0.25)


def _shape_rolled(rng, size):
    """Horizontal dark band with ragged edges."""
    mask = np.zeros((size, size), dtype=bool)
    cy = rng.uniform(0.15, 0.85) * size
    half = rng.uniform(0.03, 0.07) * size
    x0 = rng.uniform(0.0, 0.25) * size
    x1 = rng.uniform(0.75, 1.0) * size
    yy, xx = np.mgrid[0:size, 0:size]
    edge = _smooth_noise(rng, size, cells=6, amplitude=half * 0.6)[0]
    band = (np.abs(yy - cy) <= half + edge[np.clip(xx, 0, size - 1)]) & (xx >= x0) & (xx <= x1)
    mask |= band
    return mask, rng.uniform(-0.28, -0.16)


def _shape_scratches(rng, size):
    """Long bright stroke at a shallow angle off one axis (elongated box)."""
    mask = np.zeros((size, size), dtype=bool)
    length = rng.uniform(0.5, 0.85) * size
    theta = np.deg2rad(rng.uniform(5.0, 24.0)) * rng.choice([-1, 1])
    if rng.uniform() < 0.5:  # off-horizontal vs off-vertical
        dx, dy = np.cos(theta), np.sin(theta)
    else:
        dx, dy = np.sin(theta), np.cos(theta)
    cx = rng.uniform(0.3, 0.7) * size
    cy = rng.uniform(0.3, 0.7) * size
    x0 = np.clip(cx - dx * length / 2, 1, size - 2)
    y0 = np.clip(cy - dy * length / 2, 1, size - 2)
    x1 = np.clip(cx + dx * length / 2, 1, size - 2)
    y1 = np.clip(cy + dy * length / 2, 1, size - 2)
    _draw_line(mask, x0, y0, x1, y1, int(rng.integers(1, 3)))
    return mask, rng.uniform(0.25, 0.42)


_SHAPE_SAMPLERS = {
    DefectClass.CRAZING: _shape_crazing,
    DefectClass.INCLUSION: _shape_inclusion,
    DefectClass.PATCHES: _shape_patches,
    DefectClass.PITTED_SURFACE: _shape_pitted,
    DefectClass.ROLLED_IN_SCALE: _shape_rolled,
    DefectClass.SCRATCHES: _shape_scratches,
}


def _tight_bbox(mask: np.ndarray) -> BBox:
    ys, xs = np.nonzero(mask)
    size = mask.shape[0]
    return BBox.from_corners(xs.min(), ys.min(), xs.max() + 1, ys.max() + 1, size)


def sample_shape_prior(
    defect_class: DefectClass, rng: np.random.Generator, size: int
) -> Tuple[np.ndarray, BBox, float]:
    """Draw one (mask, tight bbox, intensity delta) from the class's shape prior."""
    mask, delta = _SHAPE_SAMPLERS[DefectClass(defect_class)](rng, size)
    if not mask.any():  # degenerate draw; retry deterministically from same rng
        return sample_shape_prior(defect_class, rng, size)
    return mask, _tight_bbox(mask), delta


def generate_sample(defect_class: DefectClass, seed: int, size: int = 64) -> ImageSample:
    """Textured background plus 1-3 defects of one class.

    Deterministic for fixed (class, seed, size).
    """
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    defect_class = DefectClass(defect_class)
    rng = np.random.default_rng([int(defect_class), int(seed), int(size)])
    img = _background(rng, size)
    union = np.zeros((size, size), dtype=bool)
    annotations = []
    n_defects = int(rng.integers(1, 4))
    for _ in range(n_defects):
        mask, bbox, delta = sample_shape_prior(defect_class, rng, size)
        for _attempt in range(4):  # avoid heavy overlap between defects
            if (mask & union).sum() <= 0.3 * mask.sum():
                break
            mask, bbox, delta = sample_shape_prior(defect_class, rng, size)
        img[mask] = np.clip(img[mask] + delta, 0.01, 0.99)
        union |= mask
        annotations.append((defect_class, bbox))
    return ImageSample(
        image=img.astype(np.float32),
        annotations=annotations,
        mask=union.astype(np.uint8),
    )
