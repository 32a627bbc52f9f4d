"""Denoising objective and the training loop for the conditional model."""

import torch

from ..exceptions import TrainingDivergedError
from .schedule import NoiseSchedule, forward_sample


def diffusion_loss(
    denoiser,
    x0: torch.Tensor,
    c: torch.Tensor,
    sched: NoiseSchedule,
    generator: torch.Generator,
) -> torch.Tensor:
    """Mean squared error between drawn and predicted noise.

    ``x0`` is a (B,1,H,W) image batch in [0,1]; it is rescaled to [-1,1]
    before noising. A step t is drawn uniformly from [1, T] per element and
    the closed-form marginal produces x_t. Differentiable in the denoiser
    parameters. Raises TrainingDivergedError if the loss is not finite.
    """
    if x0.ndim != 4:
        raise ValueError(f"x0 must be (B,1,H,W), got shape {tuple(x0.shape)}")
    x0s = x0 * 2.0 - 1.0
    t = torch.randint(1, sched.T + 1, (x0.shape[0],), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = forward_sample(x0s, t, eps.to(x0.device), sched)
    pred = denoiser(x_t, t.to(x0.device), c)
    loss = torch.mean((pred - eps.to(x0.device)) ** 2)
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            "diffusion loss is not finite",
            snapshot={"loss": float(loss.detach())},
        )
    return loss


def train_denoiser(
    denoiser,
    encoder,
    class_ids: torch.Tensor,
    masks: torch.Tensor,
    boxes: torch.Tensor,
    images: torch.Tensor,
    sched: NoiseSchedule,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    log_fn=None,
) -> list:
    """Joint optimization of encoder and denoiser; returns per-epoch losses."""
    params = list(denoiser.parameters()) + list(encoder.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    generator = torch.Generator().manual_seed(seed)
    n = len(class_ids)
    losses = []
    for epoch in range(epochs):
        order = torch.randperm(n, generator=generator)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            cond = encoder(class_ids[idx], masks[idx], boxes[idx])
            loss = diffusion_loss(denoiser, images[idx], cond.c, sched, generator)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            batches += 1
        losses.append(total / max(batches, 1))
        if log_fn is not None:
            log_fn(epoch, losses[-1])
    return losses
