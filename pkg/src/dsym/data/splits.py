"""Dataset partitioning into test / labeled-train / unlabeled-train / val."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

from .defects import DefectClass, ImageSample, generate_sample

SPLIT_NAMES = ("test", "labeled_train", "unlabeled_train", "val")


@dataclass
class DatasetSplit:
    test: List[ImageSample] = field(default_factory=list)
    labeled_train: List[ImageSample] = field(default_factory=list)
    unlabeled_train: List[ImageSample] = field(default_factory=list)
    val: List[ImageSample] = field(default_factory=list)
    labeled_fraction: float = 0.0
    seed: int = 0
    size: int = 64

    def split(self, name: str) -> List[ImageSample]:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def build_splits(
    per_class_counts: Tuple[int, int, int, int], seed: int = 0, size: int = 64
) -> DatasetSplit:
    """Generate disjoint splits with exact per-class counts.

    ``per_class_counts`` is (test, labeled, unlabeled, val) per class. Each
    sample's content is a pure function of (class, running index, seed), so
    identical arguments reproduce the dataset bit for bit and no sample can
    appear in two splits.
    """
    counts = tuple(int(c) for c in per_class_counts)
    if len(counts) != 4 or any(c < 0 for c in counts):
        raise ValueError(f"per_class_counts must be 4 non-negative ints, got {per_class_counts}")
    ds = DatasetSplit(seed=seed, size=size)
    for cls in DefectClass:
        index = 0
        for split_name, n in zip(SPLIT_NAMES, counts):
            bucket = ds.split(split_name)
            for _ in range(n):
                # unique per (class, index); offset by seed so different
                # seeds give different datasets
                sample = generate_sample(cls, seed * 1_000_003 + index, size)
                sample.sample_id = f"{cls.label}_{index:04d}"
                bucket.append(sample)
                index += 1
    n_labeled = len(ds.labeled_train)
    n_unlabeled = len(ds.unlabeled_train)
    total_train = n_labeled + n_unlabeled
    if total_train == 0:
        raise ValueError("training pool is empty: labeled fraction is undefined")
    ds.labeled_fraction = n_labeled / total_train
    return ds
