"""Noise schedules and the closed-form forward noising marginal."""

from dataclasses import dataclass

import numpy as np
import torch

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise rates for a diffusion process.

    ``beta[t-1]`` is the noise variance added at step t (1-based);
    ``alpha = 1 - beta``; ``alpha_bar`` is the running product of alpha.
    Invariants: every beta in (0, 1), alpha_bar strictly decreasing,
    alpha_bar[0] == alpha[0].
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def __post_init__(self):
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    def alpha_bar_at(self, t):
        """alpha_bar for 1-based step t, with the t=0 identity convention.

        Accepts an int or an integer tensor; t=0 maps to 1.0 so callers can
        treat "no noise yet" and the final reverse step uniformly.
        """
        table = torch.from_numpy(np.concatenate([[1.0], self.alpha_bar]))
        if isinstance(t, torch.Tensor):
            return table.to(t.device)[t.long()]
        return float(table[int(t)])


def make_schedule(
    T: int = 200,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
) -> NoiseSchedule:
    """Build a noise schedule of T steps.

    ``linear`` interpolates beta from beta_start to beta_end. ``cosine``
    derives beta from a squared-cosine alpha_bar curve and ignores the
    endpoint arguments except for validation.
    """
    if not isinstance(T, int) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"kind must be one of {SCHEDULE_KINDS}, got {kind!r}")

    if kind == "linear":
        if T == 1:
            beta = np.array([beta_start], dtype=np.float64)
        else:
            beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    else:
        s = 0.008
        ts = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((ts + s) / (1 + s) * np.pi / 2) ** 2
        alpha_bar = f[1:] / f[0]
        beta = np.clip(1.0 - alpha_bar / np.concatenate([[1.0], alpha_bar[:-1]]), 1e-8, 0.999)

    alpha = 1.0 - beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def forward_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Closed-form noising: x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

    ``t`` is a 1-based step, either an int shared by the batch or an integer
    tensor with one entry per batch element; t=0 returns x0 unchanged.
    """
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    if isinstance(t, torch.Tensor):
        if torch.any(t < 0) or torch.any(t > sched.T):
            raise ValueError(f"t must lie in [0, {sched.T}]")
        ab = sched.alpha_bar_at(t).to(x0.dtype)
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    else:
        if not 0 <= t <= sched.T:
            raise ValueError(f"t must lie in [0, {sched.T}], got {t}")
        ab = torch.tensor(sched.alpha_bar_at(t), dtype=x0.dtype)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
