from .defects import (
    CLASS_NAMES,
    DefectClass,
    BBox,
    ImageSample,
    generate_sample,
    sample_shape_prior,
)
from .splits import DatasetSplit, build_splits
from .store import load_dataset, load_samples, save_dataset, save_samples, with_box_masks

__all__ = [
    "CLASS_NAMES",
    "DefectClass",
    "BBox",
    "ImageSample",
    "DatasetSplit",
    "build_splits",
    "generate_sample",
    "sample_shape_prior",
    "load_dataset",
    "load_samples",
    "save_dataset",
    "save_samples",
    "with_box_masks",
]
