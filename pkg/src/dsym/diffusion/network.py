"""Small convolutional noise-prediction network with condition modulation."""

import torch
from torch import nn

from .conditioning import sinusoidal_encoding


class FiLMBlock(nn.Module):
    """Two convolutions whose features are shifted/scaled by the condition."""

    def __init__(self, in_ch: int, out_ch: int, cond_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(4, out_ch)
        self.norm2 = nn.GroupNorm(4, out_ch)
        self.film = nn.Linear(cond_dim, 2 * out_ch)
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.act(self.norm1(self.conv1(x)))
        scale, shift = self.film(cond).chunk(2, dim=1)
        h = h * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
        return self.act(self.norm2(self.conv2(h)))


class Denoiser(nn.Module):
    """3-level encoder-decoder predicting the noise added to an image.

    Inputs: x_t (B,1,H,W) in the [-1,1] diffusion scale, 1-based step t
    (int or (B,) tensor), and the fused condition vector c (B,d). H and W
    must be divisible by 4.
    """

    def __init__(self, cond_dim: int = 64, base: int = 16, t_dim: int = 64):
        super().__init__()
        self.t_dim = t_dim
        self.t_mlp = nn.Sequential(nn.Linear(t_dim, cond_dim), nn.SiLU(), nn.Linear(cond_dim, cond_dim))
        self.enc1 = FiLMBlock(1, base, cond_dim)
        self.enc2 = FiLMBlock(base, base * 2, cond_dim)
        self.mid = FiLMBlock(base * 2, base * 4, cond_dim)
        self.dec2 = FiLMBlock(base * 4 + base * 2, base * 2, cond_dim)
        self.dec1 = FiLMBlock(base * 2 + base, base, cond_dim)
        self.out = nn.Conv2d(base, 1, 1)
        self.down = nn.AvgPool2d(2)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x_t: torch.Tensor, t, c: torch.Tensor) -> torch.Tensor:
        if not isinstance(t, torch.Tensor):
            t = torch.full((x_t.shape[0],), int(t), device=x_t.device)
        t_emb = sinusoidal_encoding(t, self.t_dim).to(x_t.dtype).to(x_t.device)
        cond = self.t_mlp(t_emb) + c
        h1 = self.enc1(x_t, cond)
        h2 = self.enc2(self.down(h1), cond)
        h3 = self.mid(self.down(h2), cond)
        d2 = self.dec2(torch.cat([self.up(h3), h2], dim=1), cond)
        d1 = self.dec1(torch.cat([self.up(d2), h1], dim=1), cond)
        return self.out(d1)
