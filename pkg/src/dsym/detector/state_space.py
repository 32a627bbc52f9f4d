"""Linear state-space sequence transformation and its gated block."""

from dataclasses import dataclass

import torch
from torch import nn

from ..exceptions import NonFiniteInputError


@dataclass
class SSMParams:
    """Recurrence h_t = A h_{t-1} + B x_t, output y_t = C h_t + D_skip x_t.

    A: (N,N), B: (N,D), C: (D,N), D_skip: (D,D). The state dimension N and
    feature dimension D are implied by the shapes.
    """

    A: torch.Tensor
    B: torch.Tensor
    C: torch.Tensor
    D_skip: torch.Tensor

    def __post_init__(self):
        N = self.A.shape[0]
        D = self.B.shape[1]
        if self.A.shape != (N, N):
            raise ValueError(f"A must be square, got {tuple(self.A.shape)}")
        if self.B.shape != (N, D):
            raise ValueError(f"B must be (N,D)=({N},{D}), got {tuple(self.B.shape)}")
        if self.C.shape != (D, N):
            raise ValueError(f"C must be (D,N)=({D},{N}), got {tuple(self.C.shape)}")
        if self.D_skip.shape != (D, D):
            raise ValueError(f"D_skip must be (D,D)=({D},{D}), got {tuple(self.D_skip.shape)}")

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def D(self) -> int:
        return self.B.shape[1]


def stabilized(A: torch.Tensor, radius: float = 0.95) -> torch.Tensor:
    """Rescale a square matrix so its spectral radius is at most ``radius``."""
    rho = torch.linalg.eigvals(A).abs().max().real
    if rho > radius:
        return A * (radius / rho)
    return A


def init_ssm_params(N: int, D: int, generator: torch.Generator = None) -> SSMParams:
    """Random parameters with the stability constraint on A."""
    def draw(*shape):
        return torch.randn(*shape, generator=generator) / (shape[-1] ** 0.5)

    return SSMParams(
        A=stabilized(draw(N, N)),
        B=draw(N, D),
        C=draw(D, N),
        D_skip=draw(D, D),
    )


def _scan_sequential(x_seq: torch.Tensor, params: SSMParams, h0: torch.Tensor) -> torch.Tensor:
    x64 = x_seq.double()
    h = h0.double()
    A, B = params.A.double(), params.B.double()
    states = []
    for t in range(x_seq.shape[-2]):
        h = h @ A.T + x64[..., t, :] @ B.T
        states.append(h)
    hs = torch.stack(states, dim=-2)
    y = hs @ params.C.double().T + x64 @ params.D_skip.double().T
    return y.to(x_seq.dtype)


def _scan_parallel(x_seq: torch.Tensor, params: SSMParams, h0: torch.Tensor) -> torch.Tensor:
    """Log-depth inclusive scan over affine maps h -> A h + b_t.

    Each position carries the pair (M, v) representing h_t = M h0 + v; pairs
    compose as (M2, v2) o (M1, v1) = (M2 M1, M2 v1 + v2), which is
    associative, so pointer-doubling combines them in ceil(log2 L) rounds.
    """
    L = x_seq.shape[-2]
    batch_shape = x_seq.shape[:-2]
    # both scan paths accumulate in float64 and round once on exit, so the
    # reordered products stay within one output ulp of the sequential path
    A = params.A.double()
    b = x_seq.double() @ params.B.double().T
    M = A.expand(*batch_shape, L, *A.shape).clone()
    v = b
    offset = 1
    while offset < L:
        M_prev = M[..., : L - offset, :, :]
        v_prev = v[..., : L - offset, :]
        M_new = M[..., offset:, :, :] @ M_prev
        v_new = (M[..., offset:, :, :] @ v_prev.unsqueeze(-1)).squeeze(-1) + v[..., offset:, :]
        M = torch.cat([M[..., :offset, :, :], M_new], dim=-3)
        v = torch.cat([v[..., :offset, :], v_new], dim=-2)
        offset *= 2
    hs = (M @ h0.double().unsqueeze(-1)).squeeze(-1) + v
    y = hs @ params.C.double().T + x_seq.double() @ params.D_skip.double().T
    return y.to(x_seq.dtype)


def ssm_scan(
    x_seq: torch.Tensor,
    params: SSMParams,
    h0: torch.Tensor = None,
    parallel: bool = False,
) -> torch.Tensor:
    """Run the recurrence over a (..., L, D) sequence; returns (..., L, D).

    The parallel path is algebraically identical to the sequential one and
    must agree with it to 1e-6.
    """
    if x_seq.ndim < 2 or x_seq.shape[-1] != params.D:
        raise ValueError(
            f"x_seq must be (..., L, {params.D}), got {tuple(x_seq.shape)}"
        )
    if x_seq.shape[-2] < 1:
        raise ValueError("sequence length must be at least 1")
    if not torch.isfinite(x_seq).all():
        raise NonFiniteInputError("x_seq contains non-finite values")
    if h0 is None:
        h0 = x_seq.new_zeros(params.N)
    elif not torch.isfinite(h0).all():
        raise NonFiniteInputError("h0 contains non-finite values")
    if parallel:
        return _scan_parallel(x_seq, params, h0)
    return _scan_sequential(x_seq, params, h0)


class GatedSSMBlock(nn.Module):
    """Input projection, state-space scan, multiplicative gate, residual."""

    def __init__(self, dim: int, state_dim: int = 8, parallel: bool = True):
        super().__init__()
        self.parallel = parallel
        self.in_proj = nn.Linear(dim, dim)
        self.gate_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        p = init_ssm_params(state_dim, dim)
        self.A = nn.Parameter(p.A)
        self.B = nn.Parameter(p.B)
        self.C = nn.Parameter(p.C)
        self.D_skip = nn.Parameter(p.D_skip)

    def ssm_params(self) -> SSMParams:
        return SSMParams(A=self.A, B=self.B, C=self.C, D_skip=self.D_skip)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (..., L, dim) -> same shape."""
        u = self.in_proj(x)
        y = ssm_scan(u, self.ssm_params(), parallel=self.parallel)
        gated = y * torch.nn.functional.silu(self.gate_proj(x))
        return x + self.out_proj(gated)
