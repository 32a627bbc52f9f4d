"""Cross-modal (image vs. text-prompt) noise filtering for pseudo-labels."""

from .encoders import (
    BACKGROUND_PROMPT,
    BACKGROUND_ROW,
    PROMPTS,
    ImageEncoder,
    PromptTable,
    crop_region,
    crops_to_batch,
    prompt_for,
)
from .gate import FilterConfig, cosine_similarity, keep_sample, threshold_at
from .training import (
    ContrastiveFilter,
    build_crop_dataset,
    contrastive_loss,
    retrieval_accuracy,
    sample_background_box,
    train_contrastive,
)

__all__ = [
    "BACKGROUND_PROMPT",
    "BACKGROUND_ROW",
    "PROMPTS",
    "ImageEncoder",
    "PromptTable",
    "crop_region",
    "crops_to_batch",
    "prompt_for",
    "FilterConfig",
    "cosine_similarity",
    "keep_sample",
    "threshold_at",
    "ContrastiveFilter",
    "build_crop_dataset",
    "contrastive_loss",
    "retrieval_accuracy",
    "sample_background_box",
    "train_contrastive",
]
