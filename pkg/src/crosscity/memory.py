"""Shared meta-knowledge memories with attention retrieval, plus prediction heads.

A bank holds common slots (read by both cities, frozen after
pre-training) and optional private slots that only the target city
reads, concatenated to the common slots along the slot axis.
"""
from __future__ import annotations

import torch
from torch import nn

ROLES = ("source", "target")


class MemoryBank(nn.Module):
    def __init__(self, hidden_dim: int, common_slots: int = 3, private_slots: int = 3):
        super().__init__()
        if common_slots < 1:
            raise ValueError("need at least one common memory slot")
        if private_slots < 0:
            raise ValueError("private_slots must be >= 0")
        self.hidden_dim = hidden_dim
        self.common = nn.Parameter(torch.empty(common_slots, hidden_dim))
        nn.init.xavier_uniform_(self.common)
        if private_slots > 0:
            self.private = nn.Parameter(torch.empty(private_slots, hidden_dim))
            nn.init.xavier_uniform_(self.private)
        else:
            self.private = None
        self.query_proj = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.key_proj = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.value_proj = nn.Linear(hidden_dim, hidden_dim, bias=False)
        # Read counters let tests assert the source never touches private slots.
        self.common_reads = 0
        self.private_reads = 0

    def _slots(self, role: str) -> torch.Tensor:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}, expected one of {ROLES}")
        self.common_reads += 1
        if role == "target" and self.private is not None:
            self.private_reads += 1
            return torch.cat([self.common, self.private], dim=0)
        return self.common

    def n_slots(self, role: str) -> int:
        base = self.common.shape[0]
        if role == "target" and self.private is not None:
            return base + self.private.shape[0]
        return base

    def retrieve(self, z: torch.Tensor, role: str) -> tuple[torch.Tensor, torch.Tensor]:
        """z: (N, D) -> (retrieved (N, D), queries (N, D))."""
        slots = self._slots(role)
        q = self.query_proj(z)
        k = self.key_proj(slots)
        v = self.value_proj(slots)
        alpha = torch.softmax(q @ k.T, dim=-1)
        return alpha @ v, q

    def attention_weights(self, z: torch.Tensor, role: str) -> torch.Tensor:
        slots = self._slots(role)
        return torch.softmax(self.query_proj(z) @ self.key_proj(slots).T, dim=-1)


class PredictionHead(nn.Module):
    """Two linear layers with LeakyReLU, mapping retrieved features to demand."""

    def __init__(self, hidden_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(hidden_dim, hidden_dim),
            nn.LeakyReLU(),
            nn.Linear(hidden_dim, out_dim),
        )

    def forward(self, o: torch.Tensor) -> torch.Tensor:
        return self.net(o)


def prediction_loss(y_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared error per node-feature entry."""
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    return ((y_hat - y) ** 2).mean()
