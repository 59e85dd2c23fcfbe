"""Domain discrimination over retrieval queries with gradient reversal.

The reversal gate is identity on the forward pass and multiplies the
upstream gradient by a negative constant on backward, so one optimizer
step trains the discriminator while pushing the rest of the model
toward domain-invariant queries.
"""
from __future__ import annotations

import torch
from torch import nn

CLAMP_EPS = 1e-7


class _ReverseGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, scale):
        ctx.scale = scale
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.scale, None


def reverse_gradient(x: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
    if scale <= 0:
        raise ValueError("reversal scale must be positive")
    return _ReverseGrad.apply(x, scale)


class GradientReversal(nn.Module):
    def __init__(self, scale: float = 1.0):
        super().__init__()
        if scale <= 0:
            raise ValueError("reversal scale must be positive")
        self.scale = scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return _ReverseGrad.apply(x, self.scale)


class Discriminator(nn.Module):
    """Two linear layers with LeakyReLU; sigmoid output clamped into (0, 1)."""

    def __init__(self, hidden_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(hidden_dim, hidden_dim),
            nn.LeakyReLU(),
            nn.Linear(hidden_dim, 1),
        )

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        p = torch.sigmoid(self.net(q)).squeeze(-1)
        return p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)


def domain_loss(disc: Discriminator, q_src: torch.Tensor, q_tgt: torch.Tensor,
                reversal_scale: float | None = 1.0) -> torch.Tensor:
    """Binary cross-entropy with source labeled 1, target 0, per-city means summed.

    Queries pass through the reversal gate unless reversal_scale is None
    (useful for measuring the un-reversed gradient in tests).
    """
    if q_src.numel() == 0 or q_tgt.numel() == 0:
        raise ValueError("domain loss needs non-empty query batches for both cities")
    if reversal_scale is not None:
        q_src = reverse_gradient(q_src, reversal_scale)
        q_tgt = reverse_gradient(q_tgt, reversal_scale)
    p_src = disc(q_src)
    p_tgt = disc(q_tgt)
    return -torch.log(p_src).mean() - torch.log(1.0 - p_tgt).mean()
