"""On-disk dataset format.

Layout::

    <root>/images/<split>/<id>.png    8-bit grayscale
    <root>/labels/<split>/<id>.txt    one line per box: "class_id cx cy w h"
    <root>/manifest.json              counts, seed, labeled_fraction

The same loader reads any dataset converted into this layout, so real
imagery can be swapped in without code changes.
"""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from ..exceptions import DatasetIOError
from .defects import BBox, DefectClass, ImageSample
from .splits import SPLIT_NAMES, DatasetSplit


def _write_labels(path: Path, sample: ImageSample):
    lines = [
        f"{int(cls)} {box.cx!r} {box.cy!r} {box.w!r} {box.h!r}"
        for cls, box in sample.annotations
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def _read_labels(path: Path):
    annotations = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(path, f"cannot read label file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DatasetIOError(path, f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            cls = DefectClass(int(parts[0]))
            box = BBox(*(float(v) for v in parts[1:]))
        except (ValueError, KeyError) as exc:
            raise DatasetIOError(path, f"line {lineno}: {exc}") from exc
        annotations.append((cls, box))
    return annotations


def _write_split_dir(samples, root: Path, split_name: str):
    img_dir = root / "images" / split_name
    lbl_dir = root / "labels" / split_name
    img_dir.mkdir(parents=True, exist_ok=True)
    lbl_dir.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(samples):
        sid = sample.sample_id or f"sample_{i:05d}"
        arr = np.clip(np.round(sample.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(img_dir / f"{sid}.png")
        _write_labels(lbl_dir / f"{sid}.txt", sample)


def _read_split_dir(root: Path, split_name: str):
    img_dir = root / "images" / split_name
    samples = []
    for img_path in sorted(img_dir.glob("*.png")):
        try:
            arr = np.asarray(Image.open(img_path).convert("L"), dtype=np.float32) / 255.0
        except OSError as exc:
            raise DatasetIOError(img_path, f"corrupt image: {exc}") from exc
        lbl_path = root / "labels" / split_name / (img_path.stem + ".txt")
        if not lbl_path.exists():
            raise DatasetIOError(lbl_path, "label file missing for image")
        samples.append(
            ImageSample(
                image=arr,
                annotations=_read_labels(lbl_path),
                sample_id=img_path.stem,
            )
        )
    return samples


def save_dataset(dataset: DatasetSplit, root) -> Path:
    root = Path(root)
    for split_name in SPLIT_NAMES:
        _write_split_dir(dataset.split(split_name), root, split_name)
    manifest = {
        "counts": {s: len(dataset.split(s)) for s in SPLIT_NAMES},
        "seed": dataset.seed,
        "size": dataset.size,
        "labeled_fraction": dataset.labeled_fraction,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_dataset(root) -> DatasetSplit:
    root = Path(root)
    manifest_path = root / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise DatasetIOError(manifest_path, f"missing or unreadable manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetIOError(manifest_path, f"corrupt manifest: {exc}") from exc

    ds = DatasetSplit(
        seed=int(manifest.get("seed", 0)),
        size=int(manifest.get("size", 64)),
        labeled_fraction=float(manifest.get("labeled_fraction", 0.0)),
    )
    counts = manifest.get("counts", {})
    for split_name in SPLIT_NAMES:
        img_dir = root / "images" / split_name
        if not img_dir.is_dir():
            if counts.get(split_name, 0):
                raise DatasetIOError(img_dir, "split directory missing")
            continue
        bucket = ds.split(split_name)
        bucket.extend(_read_split_dir(root, split_name))
        expected = counts.get(split_name)
        if expected is not None and len(bucket) != expected:
            raise DatasetIOError(
                img_dir, f"manifest lists {expected} images, found {len(bucket)}"
            )
    return ds


def with_box_masks(samples, size: int | None = None):
    """Fills missing pixel masks with the union of annotation rectangles.

    Disk datasets store boxes but not masks; a rectangle mask is the exact
    information the boxes carry, so mask-conditioned consumers can run on
    loaded data. Samples that already have a mask are returned unchanged.
    """
    out = []
    for sample in samples:
        if sample.mask is not None:
            out.append(sample)
            continue
        s = size or sample.size
        mask = np.zeros((s, s), dtype=np.uint8)
        for _cls, box in sample.annotations:
            x1, y1, x2, y2 = box.to_corners(s)
            mask[int(np.floor(y1)) : int(np.ceil(y2)), int(np.floor(x1)) : int(np.ceil(x2))] = 1
        out.append(replace(sample, mask=mask))
    return out


def save_samples(samples, root, split_name: str = "synth") -> Path:
    """Writes a bare sample list in the same layout under one split directory."""
    root = Path(root)
    _write_split_dir(samples, root, split_name)
    manifest = {"counts": {split_name: len(samples)}}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_samples(root, split_name: str = "synth"):
    """Reads one split directory back as a flat sample list."""
    root = Path(root)
    img_dir = root / "images" / split_name
    if not img_dir.is_dir():
        raise DatasetIOError(img_dir, "split directory missing")
    return _read_split_dir(root, split_name)
