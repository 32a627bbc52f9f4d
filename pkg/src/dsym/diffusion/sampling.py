"""Deterministic accelerated sampling from a trained denoiser."""

import numpy as np
import torch

from .schedule import NoiseSchedule


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Descending 1-based steps, evenly spaced and always starting at T."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, {T}], got {steps}")
    seq = np.linspace(T, 1, steps).round().astype(int)
    return seq[np.concatenate([[True], np.diff(seq) != 0])]


@torch.no_grad()
def ddim_sample(
    denoiser,
    c: torch.Tensor,
    sched: NoiseSchedule,
    steps: int,
    seed: int,
    size: int = 64,
) -> torch.Tensor:
    """Deterministic reverse process from pure noise, output in [0,1].

    At each selected step the current noise estimate gives
    x0_hat = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t) and the state jumps to
    x_prev = sqrt(ab_prev) x0_hat + sqrt(1-ab_prev) eps, with ab at step 0
    defined as 1 so the final jump lands on x0_hat itself. The only
    randomness is the seeded initial noise.
    """
    batch = c.shape[0]
    generator = torch.Generator().manual_seed(seed)
    x = torch.randn((batch, 1, size, size), generator=generator)
    seq = ddim_timesteps(sched.T, steps)
    prevs = np.concatenate([seq[1:], [0]])
    for t_cur, t_prev in zip(seq, prevs):
        ab_cur = sched.alpha_bar_at(int(t_cur))
        ab_prev = sched.alpha_bar_at(int(t_prev))
        t_batch = torch.full((batch,), int(t_cur))
        eps = denoiser(x, t_batch, c)
        x0_hat = (x - float(np.sqrt(1.0 - ab_cur)) * eps) / float(np.sqrt(ab_cur))
        x = float(np.sqrt(ab_prev)) * x0_hat + float(np.sqrt(1.0 - ab_prev)) * eps
    return torch.clamp((x + 1.0) / 2.0, 0.0, 1.0)
