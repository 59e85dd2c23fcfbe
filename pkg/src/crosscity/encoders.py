"""Per-semantic recurrent graph encoders and the attention layer reused downstream.

The recurrent cell is a gated update in which every linear map of the
input is preceded by one graph convolution with the symmetrically
normalized, self-looped adjacency.
"""
from __future__ import annotations

import torch
from torch import nn

ATTENTION_SLOPE = 0.2


def normalize_adjacency(a: torch.Tensor) -> torch.Tensor:
    """Symmetric normalization with self-loops: D^-1/2 (A + I) D^-1/2."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {tuple(a.shape)}")
    a_hat = a + torch.eye(a.shape[0], dtype=a.dtype, device=a.device)
    d = a_hat.sum(dim=1)
    inv_sqrt = d.pow(-0.5)
    inv_sqrt = torch.where(torch.isfinite(inv_sqrt), inv_sqrt, torch.zeros_like(inv_sqrt))
    return inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]


class TGCNCell(nn.Module):
    """Graph-convolutional gated recurrent cell over node features."""

    def __init__(self, in_dim: int, hidden_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        width = in_dim + hidden_dim
        self.gate_weight = nn.Parameter(torch.empty(width, 2 * hidden_dim))
        self.gate_bias = nn.Parameter(torch.zeros(2 * hidden_dim))
        self.cand_weight = nn.Parameter(torch.empty(width, hidden_dim))
        self.cand_bias = nn.Parameter(torch.zeros(hidden_dim))
        nn.init.xavier_uniform_(self.gate_weight)
        nn.init.xavier_uniform_(self.cand_weight)

    def step(self, a: torch.Tensor, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return self.step_normalized(normalize_adjacency(a), x, h)

    def step_normalized(self, a_hat: torch.Tensor, x: torch.Tensor,
                        h: torch.Tensor) -> torch.Tensor:
        conv = a_hat @ torch.cat([x, h], dim=-1)
        gates = torch.sigmoid(conv @ self.gate_weight + self.gate_bias)
        reset, update = gates.chunk(2, dim=-1)
        conv_c = a_hat @ torch.cat([x, reset * h], dim=-1)
        cand = torch.tanh(conv_c @ self.cand_weight + self.cand_bias)
        return update * h + (1.0 - update) * cand


def tgcn_step(cell: TGCNCell, a: torch.Tensor, x: torch.Tensor,
              h: torch.Tensor) -> torch.Tensor:
    return cell.step(a, x, h)


class SemanticEncoder(nn.Module):
    """Runs the recurrent cell over the 6-step history; returns the final state."""

    def __init__(self, feature_dim: int, hidden_dim: int):
        super().__init__()
        self.cell = TGCNCell(feature_dim, hidden_dim)
        self.hidden_dim = hidden_dim

    def forward(self, a: torch.Tensor, x_seq: torch.Tensor) -> torch.Tensor:
        """a: (N, N); x_seq: (N, T_in, F) -> (N, D)."""
        if x_seq.ndim != 3:
            raise ValueError(f"x_seq must be (N, T, F), got shape {tuple(x_seq.shape)}")
        a_hat = normalize_adjacency(a)
        n = x_seq.shape[0]
        h = x_seq.new_zeros(n, self.hidden_dim)
        for t in range(x_seq.shape[1]):
            h = self.cell.step_normalized(a_hat, x_seq[:, t, :], h)
        return h


class GraphAttention(nn.Module):
    """Multi-head attention over graph neighborhoods, concat heads then project.

    Attention is restricted to nonzero adjacency entries plus a self-loop.
    """

    def __init__(self, in_dim: int, out_dim: int, heads: int = 2):
        super().__init__()
        self.heads = heads
        self.out_dim = out_dim
        self.weight = nn.Parameter(torch.empty(heads, in_dim, out_dim))
        self.att_src = nn.Parameter(torch.empty(heads, out_dim))
        self.att_dst = nn.Parameter(torch.empty(heads, out_dim))
        self.proj = nn.Linear(heads * out_dim, out_dim)
        nn.init.xavier_uniform_(self.weight)
        nn.init.xavier_uniform_(self.att_src.unsqueeze(0))
        nn.init.xavier_uniform_(self.att_dst.unsqueeze(0))

    def forward(self, a: torch.Tensor, z: torch.Tensor, return_attention: bool = False):
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != z.shape[0]:
            raise ValueError("adjacency must be square and match the node count")
        zw = torch.einsum("ni,hio->hno", z, self.weight)     # (H, N, out)
        e_src = (zw * self.att_src[:, None, :]).sum(dim=-1)  # (H, N)
        e_dst = (zw * self.att_dst[:, None, :]).sum(dim=-1)
        logits = torch.nn.functional.leaky_relu(
            e_src[:, :, None] + e_dst[:, None, :], ATTENTION_SLOPE)
        mask = (a != 0) | torch.eye(a.shape[0], dtype=torch.bool, device=a.device)
        logits = logits.masked_fill(~mask[None, :, :], float("-inf"))
        alpha = torch.softmax(logits, dim=-1)                # (H, N, N)
        head_out = torch.nn.functional.leaky_relu(alpha @ zw, ATTENTION_SLOPE)
        out = self.proj(head_out.permute(1, 0, 2).reshape(z.shape[0], -1))
        if return_attention:
            return out, alpha
        return out


def gat_layer(layer: GraphAttention, a: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    return layer(a, z)
