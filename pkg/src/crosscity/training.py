"""Two-stage optimization: joint adversarial pre-training, then fine-tuning
on the target city with the common memories frozen.

Both stages share the loss composition
    city loss = sum_l L_pred^(l) + lambda_rec * L_rec + lambda_aux * L_aux
and pre-training adds
    total = L_source + beta_target * L_target + beta_domain * sum_l L_dom^(l).
A single optimizer updates everything; the gradient-reversal gate inside
the domain loss supplies the adversarial direction.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .adversarial import domain_loss
from .data import (DemandSeries, Normalizer, SplitResult, SplitSpec,
                   fit_normalizer, split, windows_for_span)
from .graphs import MultiViewGraph
from .model import CityOutput, CitySpec, ModelConfig, TransferModel

SUPPORTED_OPTIMIZERS = ("adam",)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    lambda_rec: float = 1.0
    lambda_aux: float = 1.0
    beta_target: float = 0.5
    beta_domain: float = 1.0
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 10
    reversal_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("lambda_rec", "lambda_aux", "beta_target", "beta_domain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.optimizer not in SUPPORTED_OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {SUPPORTED_OPTIMIZERS}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class EpochLog:
    """One metrics-log record; key order is part of the log schema."""

    epoch: int
    stage: str
    L_S: float
    L_T: float
    L_dom: float
    L_rec: float
    L_aux: float
    val_mae: float
    val_rmse: float

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch, "stage": self.stage,
            "L_S": self.L_S, "L_T": self.L_T, "L_dom": self.L_dom,
            "L_rec": self.L_rec, "L_aux": self.L_aux,
            "val_mae": self.val_mae, "val_rmse": self.val_rmse,
        })


@dataclass
class CityTensors:
    """Ready-to-train tensors for one city."""

    name: str
    role: str
    adjacency: torch.Tensor                     # (C, N, N)
    train: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    val: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    test: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    normalizer: Normalizer
    splits: SplitResult
    test_times: np.ndarray = field(default_factory=lambda: np.array([], dtype="datetime64[h]"))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[-1]

    def n_windows(self, which: str) -> int:
        return getattr(self, which)[0].shape[0]


def _stack_windows(windows, dtype) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    if not windows:
        z = torch.zeros(0, dtype=dtype)
        return z, z, z
    x = torch.as_tensor(np.stack([w.x for w in windows]), dtype=dtype)
    t = torch.as_tensor(np.stack([w.temporal for w in windows]), dtype=dtype)
    y = torch.as_tensor(np.stack([w.y for w in windows]), dtype=dtype)
    return x, t, y


def prepare_city(series: DemandSeries, graph: MultiViewGraph, spec: SplitSpec,
                 role: str, name: str | None = None,
                 dtype: torch.dtype = torch.float32) -> CityTensors:
    """Split, normalize on the train span only, window, and tensorize."""
    splits = split(series, spec, role=role)
    norm = fit_normalizer(series, splits.train)
    train_w = windows_for_span(series, norm, splits.train, history_within_span=True)
    val_w = windows_for_span(series, norm, splits.val)
    test_w = windows_for_span(series, norm, splits.test)
    if not train_w:
        raise ValueError(f"{role} city has no training windows")
    return CityTensors(
        name=name or role,
        role=role,
        adjacency=torch.as_tensor(graph.adjacency_stack(), dtype=dtype),
        train=_stack_windows(train_w, dtype),
        val=_stack_windows(val_w, dtype),
        test=_stack_windows(test_w, dtype),
        normalizer=norm,
        splits=splits,
        test_times=np.array([w.label_time for w in test_w], dtype="datetime64[h]"),
    )


def combine_city_loss(out: CityOutput, cfg: TrainConfig) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted city loss plus its unweighted components for logging."""
    pred = out.pred_losses[0]
    for extra in out.pred_losses[1:]:
        pred = pred + extra
    total = pred + cfg.lambda_rec * out.rec + cfg.lambda_aux * out.aux
    parts = {"pred": float(pred.detach()), "rec": float(out.rec.detach()),
             "aux": float(out.aux.detach())}
    return total, parts


def _forward_batch(model: TransferModel, city: CityTensors, idx: np.ndarray,
                   cfg: TrainConfig, collect_queries: bool):
    """Mean city loss over a window batch; queries concatenated per level."""
    x, t, y = city.train
    totals = []
    parts_sum = {"pred": 0.0, "rec": 0.0, "aux": 0.0}
    queries: list[list[torch.Tensor]] = [[] for _ in range(model.cfg.n_levels)]
    for i in idx:
        out = model.forward_city(
            city.role, city.adjacency, x[i], t[i], y[i],
            compute_rec=cfg.lambda_rec > 0, compute_aux=cfg.lambda_aux > 0)
        total, parts = combine_city_loss(out, cfg)
        totals.append(total)
        for k in parts_sum:
            parts_sum[k] += parts[k]
        if collect_queries:
            for l, q in enumerate(out.queries):
                queries[l].append(q)
    mean_total = torch.stack(totals).mean()
    parts_mean = {k: v / len(idx) for k, v in parts_sum.items()}
    q_cat = [torch.cat(qs, dim=0) for qs in queries] if collect_queries else []
    return mean_total, parts_mean, q_cat


class _BatchStream:
    """Endless deterministic batches; reshuffles whenever a pass completes."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch_size > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        batch = self.order[self.pos:self.pos + self.batch_size]
        self.pos += self.batch_size
        return batch


def evaluate_split(model: TransferModel, city: CityTensors,
                   which: str = "val") -> tuple[float, float]:
    """(MAE, RMSE) in demand units over level-0 predictions; NaN if empty."""
    x, t, y = getattr(city, which)
    if x.shape[0] == 0:
        return math.nan, math.nan
    abs_sum, sq_sum, count = 0.0, 0.0, 0
    with torch.no_grad():
        for i in range(x.shape[0]):
            out = model.forward_city(city.role, city.adjacency, x[i], t[i], y[i],
                                     compute_rec=False, compute_aux=False)
            pred = city.normalizer.invert(out.predictions[0].numpy())
            true = city.normalizer.invert(y[i].numpy())
            res = pred - true
            abs_sum += np.abs(res).sum()
            sq_sum += (res ** 2).sum()
            count += res.size
    return abs_sum / count, math.sqrt(sq_sum / count)


def predict_split(model: TransferModel, city: CityTensors,
                  which: str = "test") -> tuple[np.ndarray, np.ndarray]:
    """(pred, true) de-normalized arrays of shape (W, N, F)."""
    x, t, y = getattr(city, which)
    preds, trues = [], []
    with torch.no_grad():
        for i in range(x.shape[0]):
            out = model.forward_city(city.role, city.adjacency, x[i], t[i], y[i],
                                     compute_rec=False, compute_aux=False)
            preds.append(city.normalizer.invert(out.predictions[0].numpy()))
            trues.append(city.normalizer.invert(y[i].numpy()))
    if not preds:
        n = city.n_nodes
        return np.zeros((0, n, 0)), np.zeros((0, n, 0))
    return np.stack(preds), np.stack(trues)


def _make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(params, lr=cfg.learning_rate)


def _check_finite(loss: torch.Tensor, stage: str, epoch: int, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss {loss.item()!r} in {stage} at epoch {epoch}, step {step}")


def _append_log(log: EpochLog, logs: list[EpochLog], path: str | Path | None) -> None:
    logs.append(log)
    if path is not None:
        with Path(path).open("a") as fh:
            fh.write(log.to_json() + "\n")


@dataclass
class StageResult:
    logs: list[EpochLog]
    best_val_mae: float
    best_epoch: int
    epochs_run: int
    grad_audit: dict[str, bool] | None = None


def pretrain(model: TransferModel, source: CityTensors, target: CityTensors,
             cfg: TrainConfig, metrics_path: str | Path | None = None,
             audit_gradients: bool = False) -> StageResult:
    """Joint source+target training with per-level domain adversaries.

    Early stopping and checkpoint selection use target validation MAE;
    the model is left holding the best-validation parameters.
    """
    torch.set_num_threads(1)
    opt = _make_optimizer(model.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    tgt_stream = _BatchStream(target.n_windows("train"), cfg.batch_size, rng)
    use_domain = cfg.beta_domain > 0
    logs: list[EpochLog] = []
    best = math.inf
    best_epoch = -1
    best_state: dict[str, torch.Tensor] | None = None
    stall = 0
    audit: dict[str, bool] | None = None

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(source.n_windows("train"))
        n_batches = max(1, len(order) // cfg.batch_size)
        sums = {"L_S": 0.0, "L_T": 0.0, "L_dom": 0.0, "L_rec": 0.0, "L_aux": 0.0}
        for step in range(n_batches):
            src_idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            tgt_idx = tgt_stream.next()
            l_src, src_parts, q_src = _forward_batch(model, source, src_idx, cfg, use_domain)
            l_tgt, tgt_parts, q_tgt = _forward_batch(model, target, tgt_idx, cfg, use_domain)
            if use_domain:
                l_dom = sum(domain_loss(model.discriminators[l], q_src[l], q_tgt[l],
                                        cfg.reversal_scale)
                            for l in range(model.cfg.n_levels))
            else:
                l_dom = torch.zeros(())
            total = l_src + cfg.beta_target * l_tgt + cfg.beta_domain * l_dom
            _check_finite(total, "pretrain", epoch, step)
            opt.zero_grad()
            total.backward()
            if audit_gradients and audit is None:
                audit = {name: p.grad is not None and bool(p.grad.abs().sum() > 0)
                         for name, p in model.named_parameters() if p.requires_grad}
            opt.step()
            sums["L_S"] += float(l_src.detach())
            sums["L_T"] += float(l_tgt.detach())
            sums["L_dom"] += float(l_dom.detach()) if use_domain else 0.0
            sums["L_rec"] += src_parts["rec"] + tgt_parts["rec"]
            sums["L_aux"] += src_parts["aux"] + tgt_parts["aux"]
        val_mae, val_rmse = evaluate_split(model, target, "val")
        _append_log(EpochLog(epoch, "pretrain",
                             sums["L_S"] / n_batches, sums["L_T"] / n_batches,
                             sums["L_dom"] / n_batches, sums["L_rec"] / n_batches,
                             sums["L_aux"] / n_batches, val_mae, val_rmse),
                    logs, metrics_path)
        if math.isnan(val_mae) or val_mae < best:
            if not math.isnan(val_mae):
                best = val_mae
                best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    return StageResult(logs, best, best_epoch, len(logs), audit)


def _freeze_common(model: TransferModel) -> dict[str, torch.Tensor]:
    frozen = {}
    state = model.state_dict()
    for name in model.frozen_common_names():
        frozen[name] = state[name].detach().clone()
    for bank in model.banks:
        bank.common.requires_grad_(False)
    return frozen


def train_on_target(model: TransferModel, target: CityTensors, cfg: TrainConfig,
                    freeze_common: bool = False, stage: str = "finetune",
                    metrics_path: str | Path | None = None) -> StageResult:
    """Target-only training; optionally freezes the common memory slots."""
    torch.set_num_threads(1)
    frozen = _freeze_common(model) if freeze_common else {}
    params = [p for p in model.parameters() if p.requires_grad]
    opt = _make_optimizer(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    logs: list[EpochLog] = []
    best = math.inf
    best_epoch = -1
    best_state = None
    stall = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(target.n_windows("train"))
        n_batches = max(1, len(order) // cfg.batch_size)
        sums = {"L_T": 0.0, "L_rec": 0.0, "L_aux": 0.0}
        for step in range(n_batches):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            if len(idx) == 0:
                idx = order
            l_tgt, parts, _ = _forward_batch(model, target, idx, cfg, False)
            _check_finite(l_tgt, stage, epoch, step)
            opt.zero_grad()
            l_tgt.backward()
            opt.step()
            sums["L_T"] += float(l_tgt.detach())
            sums["L_rec"] += parts["rec"]
            sums["L_aux"] += parts["aux"]
        val_mae, val_rmse = evaluate_split(model, target, "val")
        _append_log(EpochLog(epoch, stage, 0.0,
                             sums["L_T"] / n_batches, 0.0,
                             sums["L_rec"] / n_batches, sums["L_aux"] / n_batches,
                             val_mae, val_rmse),
                    logs, metrics_path)
        if math.isnan(val_mae) or val_mae < best:
            if not math.isnan(val_mae):
                best = val_mae
                best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    for name, saved in frozen.items():
        current = model.state_dict()[name]
        if not torch.equal(current, saved):
            raise RuntimeError(f"frozen parameter {name} changed during {stage}")
    return StageResult(logs, best, best_epoch, len(logs))


def finetune(model: TransferModel, target: CityTensors, cfg: TrainConfig,
             metrics_path: str | Path | None = None) -> StageResult:
    return train_on_target(model, target, cfg, freeze_common=True,
                           stage="finetune", metrics_path=metrics_path)


def build_model(model_cfg: ModelConfig, source_spec: CitySpec,
                target_spec: CitySpec, seed: int) -> TransferModel:
    """Seeded construction so two builds with equal seeds match bitwise."""
    torch.manual_seed(seed)
    return TransferModel(model_cfg, source_spec, target_spec)


def save_checkpoint(path: str | Path, model: TransferModel,
                    meta: dict | None = None) -> None:
    """Archive of named tensors plus the frozen-common manifest."""
    payload = {
        "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "frozen_common": model.frozen_common_names(),
        "meta_json": json.dumps(meta or {}, sort_keys=True),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, weights_only=True)
    for key in ("state", "frozen_common", "meta_json"):
        if key not in payload:
            raise ValueError(f"checkpoint missing {key!r}")
    missing = [n for n in payload["frozen_common"] if n not in payload["state"]]
    if missing:
        raise ValueError(f"frozen-common manifest names absent from state: {missing}")
    return payload


def apply_checkpoint(model: TransferModel, payload: dict) -> None:
    try:
        model.load_state_dict(payload["state"])
    except RuntimeError as exc:
        raise ValueError(f"checkpoint does not fit this model: {exc}") from exc
    if payload["frozen_common"] != model.frozen_common_names():
        raise ValueError("frozen-common manifest disagrees with the model")


def checkpoint_meta(payload: dict) -> dict:
    return json.loads(payload["meta_json"])


def gradient_flow_audit(model: TransferModel, source: CityTensors,
                        target: CityTensors, cfg: TrainConfig) -> dict[str, bool]:
    """One joint batch; reports which trainable parameters got a nonzero grad."""
    model.zero_grad()
    idx_s = np.arange(min(cfg.batch_size, source.n_windows("train")))
    idx_t = np.arange(min(cfg.batch_size, target.n_windows("train")))
    l_src, _, q_src = _forward_batch(model, source, idx_s, cfg, cfg.beta_domain > 0)
    l_tgt, _, q_tgt = _forward_batch(model, target, idx_t, cfg, cfg.beta_domain > 0)
    total = l_src + cfg.beta_target * l_tgt
    if cfg.beta_domain > 0:
        total = total + cfg.beta_domain * sum(
            domain_loss(model.discriminators[l], q_src[l], q_tgt[l], cfg.reversal_scale)
            for l in range(model.cfg.n_levels))
    total.backward()
    report = {name: p.grad is not None and bool(p.grad.abs().sum() > 0)
              for name, p in model.named_parameters() if p.requires_grad}
    model.zero_grad()
    return report


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
