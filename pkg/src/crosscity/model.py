"""Full transfer model: per-city extractors around shared memories and heads.

Each city owns its semantic encoders, fusion block, and cluster
assignment layers (feature spaces differ between cities), while the
per-level memory banks, prediction heads, and domain discriminators are
shared; the memories carry the transferable knowledge and the
discriminators align the two cities' query distributions.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .adversarial import Discriminator
from .encoders import SemanticEncoder
from .fusion import SemanticFusion, reconstruction_loss
from .hierarchy import (AssignmentLayer, aggregate_labels, aux_loss, coarsen)
from .memory import MemoryBank, PredictionHead, prediction_loss

ROLES = ("source", "target")


@dataclass(frozen=True)
class ModelConfig:
    n_views: int = 3
    feature_dim: int = 2
    hidden_dim: int = 32
    temporal_dim: int = 31
    history_steps: int = 6
    memory_slots: int = 3
    private_slots: int = 3
    attention_heads: int = 2
    cluster_levels: int = 2

    def __post_init__(self) -> None:
        if self.n_views < 1 or self.hidden_dim < 1 or self.memory_slots < 1:
            raise ValueError("n_views, hidden_dim, memory_slots must be >= 1")
        if self.private_slots < 0 or self.cluster_levels < 0:
            raise ValueError("private_slots and cluster_levels must be >= 0")

    @property
    def n_levels(self) -> int:
        return self.cluster_levels + 1


@dataclass(frozen=True)
class CitySpec:
    name: str
    n_nodes: int
    cluster_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        prev = self.n_nodes
        for s in self.cluster_sizes:
            if s >= prev:
                raise ValueError(
                    f"cluster sizes must strictly decrease from N={self.n_nodes}, "
                    f"got {self.cluster_sizes}")
            prev = s


@dataclass
class CityOutput:
    """Per-level artifacts from one forward pass over a single window."""

    predictions: list[torch.Tensor]   # level l: (N_l, F)
    labels: list[torch.Tensor]        # level l: (N_l, F)
    queries: list[torch.Tensor]       # level l: (N_l, D)
    pred_losses: list[torch.Tensor]   # level l: scalar
    rec: torch.Tensor                 # scalar
    aux: torch.Tensor                 # scalar


class CityBranch(nn.Module):
    """City-private feature extractor: encoders, fusion, and coarsening."""

    def __init__(self, cfg: ModelConfig, spec: CitySpec):
        super().__init__()
        if len(spec.cluster_sizes) != cfg.cluster_levels:
            raise ValueError(
                f"{spec.name}: expected {cfg.cluster_levels} cluster sizes, "
                f"got {spec.cluster_sizes}")
        self.spec = spec
        self.encoders = nn.ModuleList(
            SemanticEncoder(cfg.feature_dim, cfg.hidden_dim)
            for _ in range(cfg.n_views))
        self.fusion = SemanticFusion(cfg.n_views, cfg.hidden_dim, cfg.temporal_dim)
        self.assigners = nn.ModuleList(
            AssignmentLayer(cfg.hidden_dim, size, heads=cfg.attention_heads)
            for size in spec.cluster_sizes)

    def forward(self, adjacency: torch.Tensor, x: torch.Tensor,
                temporal: torch.Tensor, y: torch.Tensor,
                compute_rec: bool = True, compute_aux: bool = True):
        """adjacency: (C, N, N); x: (N, T, F); temporal: (31,); y: (N, F)."""
        z_views = [enc(adjacency[c], x) for c, enc in enumerate(self.encoders)]
        z_f = self.fusion.fuse(z_views, temporal)
        a_f = self.fusion.fused_adjacency(z_f)
        zero = z_f.new_zeros(())
        rec = (reconstruction_loss(adjacency, self.fusion.reconstruct_all(z_f))
               if compute_rec else zero)
        levels = [(z_f, a_f, y)]
        aux = zero
        z_l, a_l, y_l = z_f, a_f, y
        for assigner in self.assigners:
            s = assigner(a_l, z_l)
            if compute_aux:
                aux = aux + aux_loss(a_l, s)
            z_l, a_l = coarsen(z_l, a_l, s)
            y_l = aggregate_labels(s, y_l)
            levels.append((z_l, a_l, y_l))
        return levels, rec, aux


class TransferModel(nn.Module):
    def __init__(self, cfg: ModelConfig, source: CitySpec, target: CitySpec):
        super().__init__()
        self.cfg = cfg
        self.specs = {"source": source, "target": target}
        self.branches = nn.ModuleDict({
            "source": CityBranch(cfg, source),
            "target": CityBranch(cfg, target),
        })
        self.banks = nn.ModuleList(
            MemoryBank(cfg.hidden_dim, cfg.memory_slots, cfg.private_slots)
            for _ in range(cfg.n_levels))
        self.heads = nn.ModuleList(
            PredictionHead(cfg.hidden_dim, cfg.feature_dim)
            for _ in range(cfg.n_levels))
        self.discriminators = nn.ModuleList(
            Discriminator(cfg.hidden_dim) for _ in range(cfg.n_levels))

    def forward_city(self, role: str, adjacency: torch.Tensor, x: torch.Tensor,
                     temporal: torch.Tensor, y: torch.Tensor,
                     compute_rec: bool = True, compute_aux: bool = True) -> CityOutput:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}, expected one of {ROLES}")
        levels, rec, aux = self.branches[role](
            adjacency, x, temporal, y, compute_rec=compute_rec, compute_aux=compute_aux)
        predictions, labels, queries, pred_losses = [], [], [], []
        for l, (z_l, _, y_l) in enumerate(levels):
            o, q = self.banks[l].retrieve(z_l, role)
            y_hat = self.heads[l](o)
            predictions.append(y_hat)
            labels.append(y_l)
            queries.append(q)
            pred_losses.append(prediction_loss(y_hat, y_l))
        return CityOutput(predictions, labels, queries, pred_losses, rec, aux)

    def frozen_common_names(self) -> list[str]:
        """State-dict names of the common memory slots (frozen at fine-tune)."""
        return [f"banks.{l}.common" for l in range(self.cfg.n_levels)]


def count_parameters(model: nn.Module) -> tuple[int, dict[str, int]]:
    """Total trainable parameters plus a per-top-level-child breakdown."""
    total = sum(p.numel() for p in model.parameters() if p.requires_grad)
    breakdown = {
        name: sum(p.numel() for p in child.parameters() if p.requires_grad)
        for name, child in model.named_children()
    }
    return total, breakdown


def paper_scale_specs() -> tuple[CitySpec, CitySpec]:
    return (CitySpec("source", 400, (100, 10)),
            CitySpec("target", 400, (100, 10)))


def paper_scale_model(seed: int = 0) -> TransferModel:
    torch.manual_seed(seed)
    source, target = paper_scale_specs()
    return TransferModel(ModelConfig(), source, target)
