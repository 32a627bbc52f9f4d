"""Similarity scoring and the decaying acceptance gate for pseudo-labels."""

import math
from dataclasses import dataclass

import numpy as np
import torch


def cosine_similarity(a, b) -> float:
    """Cosine similarity of two vectors; zero-norm inputs are rejected."""
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    if isinstance(b, torch.Tensor):
        b = b.detach().cpu().numpy()
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class FilterConfig:
    """Gate hyperparameters.

    tau_0: similarity threshold at t=0, in (0, 1).
    lambda_decay: exponential decay rate, >= 0 (0 keeps the threshold flat).
    total_steps: horizon T the decay is normalized by, >= 1.
    tau_conf: detector confidence floor, in [0, 1].
    """

    tau_0: float = 0.3
    lambda_decay: float = 1.0
    total_steps: int = 200
    tau_conf: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tau_0 < 1.0:
            raise ValueError(f"tau_0 must be in (0, 1), got {self.tau_0}")
        if self.lambda_decay < 0.0:
            raise ValueError(f"lambda_decay must be >= 0, got {self.lambda_decay}")
        if not isinstance(self.total_steps, int) or self.total_steps < 1:
            raise ValueError(f"total_steps must be an int >= 1, got {self.total_steps}")
        if not 0.0 <= self.tau_conf <= 1.0:
            raise ValueError(f"tau_conf must be in [0, 1], got {self.tau_conf}")


def threshold_at(t: float, config: FilterConfig) -> float:
    """Similarity threshold tau_0 * exp(-(t / T) * lambda) at step t."""
    if not 0 <= t <= config.total_steps:
        raise ValueError(f"t must lie in [0, {config.total_steps}], got {t}")
    return config.tau_0 * math.exp(-(t / config.total_steps) * config.lambda_decay)


def keep_sample(similarity: float, confidence: float, t: float, config: FilterConfig) -> bool:
    """Accept iff similarity beats the decayed threshold and confidence beats tau_conf."""
    if not (math.isfinite(similarity) and math.isfinite(confidence)):
        raise ValueError("similarity and confidence must be finite")
    return similarity > threshold_at(t, config) and confidence > config.tau_conf
