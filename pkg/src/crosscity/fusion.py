"""Fuse per-semantic embeddings with calendar context; emit the momentary graph.

The fused embedding also reconstructs each static view, giving a
reconstruction loss that regularizes the fusion toward keeping
long-term structure.
"""
from __future__ import annotations

import torch
from torch import nn


class SemanticFusion(nn.Module):
    def __init__(self, n_views: int, hidden_dim: int, temporal_dim: int = 31):
        super().__init__()
        self.n_views = n_views
        self.hidden_dim = hidden_dim
        self.temporal_dim = temporal_dim
        self.fc1 = nn.Linear(n_views * hidden_dim + temporal_dim, hidden_dim)
        self.act = nn.LeakyReLU()
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.w_f = nn.Parameter(torch.empty(hidden_dim, hidden_dim))
        self.w_c = nn.Parameter(torch.empty(n_views, hidden_dim, hidden_dim))
        nn.init.xavier_uniform_(self.w_f)
        nn.init.xavier_uniform_(self.w_c)

    def fuse(self, z_views: list[torch.Tensor] | tuple[torch.Tensor, ...],
             temporal: torch.Tensor) -> torch.Tensor:
        """z_views: C tensors (N, D); temporal: (31,) -> fused (N, D)."""
        if len(z_views) != self.n_views:
            raise ValueError(f"expected {self.n_views} views, got {len(z_views)}")
        n = z_views[0].shape[0]
        for z in z_views:
            if z.shape != (n, self.hidden_dim):
                raise ValueError("all view embeddings must share (N, D)")
        t = temporal.reshape(1, -1).expand(n, -1)
        x = torch.cat([*z_views, t], dim=-1)
        return self.fc2(self.act(self.fc1(x)))

    def fused_adjacency(self, z_f: torch.Tensor) -> torch.Tensor:
        """Row-stochastic momentary graph: softmax(ReLU((ZW)(ZW)^T)) by rows."""
        zw = z_f @ self.w_f
        logits = torch.relu(zw @ zw.T)
        return torch.softmax(logits, dim=-1)

    def reconstruct_view(self, z_f: torch.Tensor, c: int) -> torch.Tensor:
        if not (0 <= c < self.n_views):
            raise ValueError(f"view index {c} outside 0..{self.n_views - 1}")
        return z_f @ self.w_c[c] @ z_f.T

    def reconstruct_all(self, z_f: torch.Tensor) -> torch.Tensor:
        """(C, N, N) stack of reconstructed views."""
        return torch.einsum("nd,cde,me->cnm", z_f, self.w_c, z_f)


def reconstruction_loss(a_true: torch.Tensor, a_hat: torch.Tensor) -> torch.Tensor:
    """Mean over views of squared Frobenius error, scaled by 1/N^2.

    The N^2 scaling keeps the term comparable across city sizes so a
    single weight works for both cities.
    """
    if a_true.shape != a_hat.shape or a_true.ndim != 3:
        raise ValueError("expected matching (C, N, N) stacks")
    n = a_true.shape[-1]
    per_view = ((a_true - a_hat) ** 2).sum(dim=(-2, -1)) / (n * n)
    return per_view.mean()
