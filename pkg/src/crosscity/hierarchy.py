"""Learned soft coarsening into a small hierarchy of graphs.

Assignments come from a graph-attention layer with row softmax; the
structural regularizer combines a link-reconstruction term with an
assignment-entropy term that pushes rows toward one-hot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .encoders import GraphAttention


@dataclass(frozen=True)
class ClusterConfig:
    """Node counts per coarsening level, finest first, strictly decreasing."""

    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        prev = None
        for s in self.sizes:
            if s < 1:
                raise ValueError("cluster sizes must be >= 1")
            if prev is not None and s >= prev:
                raise ValueError(f"cluster sizes must strictly decrease, got {self.sizes}")
            prev = s

    @property
    def n_levels(self) -> int:
        return len(self.sizes)

    @classmethod
    def paper_scale(cls) -> "ClusterConfig":
        return cls((100, 10))

    @classmethod
    def for_nodes(cls, n_nodes: int, levels: int = 2) -> "ClusterConfig":
        """Roughly 4x reduction per level: level l gets ceil(N / 4^(l+1))."""
        sizes = []
        for l in range(levels):
            size = math.ceil(n_nodes / 4 ** (l + 1))
            if sizes and size >= sizes[-1]:
                break
            sizes.append(size)
        return cls(tuple(sizes))


class AssignmentLayer(nn.Module):
    """Soft cluster assignment: row-softmaxed graph attention scores."""

    def __init__(self, hidden_dim: int, n_clusters: int, heads: int = 2):
        super().__init__()
        self.n_clusters = n_clusters
        self.gat = GraphAttention(hidden_dim, n_clusters, heads=heads)

    def forward(self, a: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.gat(a, z), dim=-1)


def coarsen(z: torch.Tensor, a: torch.Tensor,
            s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Aggregate embeddings and adjacency one level up: S^T Z and S^T A S."""
    if s.shape[0] != z.shape[0] or a.shape != (z.shape[0], z.shape[0]):
        raise ValueError("assignment, embeddings, and adjacency shapes disagree")
    return s.T @ z, s.T @ a @ s


def aggregate_labels(s: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Coarse labels as soft cluster sums: S^T Y (total mass preserved)."""
    if s.shape[0] != y.shape[0]:
        raise ValueError("assignment and labels disagree on node count")
    return s.T @ y


def assignment_entropy(s: torch.Tensor) -> torch.Tensor:
    """Mean Shannon entropy (natural log) of assignment rows; 0 for one-hot."""
    row_entropy = -torch.special.xlogy(s, s).sum(dim=-1)
    return row_entropy.mean()


def aux_loss(a: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """Structural penalty: ||A - S S^T||_F / N^2 + mean row entropy of S."""
    n = a.shape[0]
    link = torch.linalg.matrix_norm(a - s @ s.T) / (n * n)
    return link + assignment_entropy(s)
