"""Demand series ingestion, normalization, windowing, and chronological splits.

All demand tensors are (N, T, F) with F = 2 (pickup, dropoff) hourly counts.
A "month" is fixed at 30 days throughout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

HOURS_PER_DAY = 24
HOURS_PER_WEEK = 168
HOURS_PER_MONTH = 720
HISTORY_STEPS = 6
TEMPORAL_DIM = 31  # 7 day-of-week slots + 24 hour-of-day slots
FEATURE_NAMES = ("pickup", "dropoff")

TARGET_TRAIN_DAY_CHOICES = (1, 3, 7)


@dataclass
class DemandSeries:
    """Hourly demand counts per cell: values (N, T, F), timestamps (T,)."""

    values: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        if self.values.ndim != 3:
            raise ValueError(f"values must be (N, T, F), got shape {self.values.shape}")
        if self.timestamps.shape != (self.values.shape[1],):
            raise ValueError("timestamps length must match the time axis of values")
        if self.values.shape[1] >= 2:
            gaps = np.diff(self.timestamps).astype("timedelta64[h]").astype(int)
            if not np.all(gaps == 1):
                raise ValueError("timestamps must be strictly increasing and hourly spaced")
        if np.any(self.values < 0):
            raise ValueError("raw demand values must be nonnegative")

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class Span:
    """Half-open index range [start, stop) over the time axis."""

    start: int
    stop: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.stop < self.start:
            raise ValueError(f"invalid span [{self.start}, {self.stop})")

    def __len__(self) -> int:
        return self.stop - self.start

    def __contains__(self, t: int) -> bool:
        return self.start <= t < self.stop


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split sizes: few-shot train days, then val and test months."""

    target_train_days: int = 7
    val_months: float = 2.0
    test_months: float = 2.0

    def __post_init__(self) -> None:
        if self.target_train_days not in TARGET_TRAIN_DAY_CHOICES:
            raise ValueError(
                f"target_train_days must be one of {TARGET_TRAIN_DAY_CHOICES}, "
                f"got {self.target_train_days}")
        if self.val_months <= 0 or self.test_months <= 0:
            raise ValueError("val_months and test_months must be positive")


@dataclass(frozen=True)
class SplitResult:
    train: Span
    val: Span
    test: Span


@dataclass
class Normalizer:
    """Per-feature min-max scaler fitted on a training span only."""

    lo: np.ndarray
    hi: np.ndarray
    fit_span: Span
    degenerate: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D per-feature arrays of equal length")
        if np.any(self.hi < self.lo):
            raise ValueError("per-feature max must be >= min")
        self.degenerate = self.hi == self.lo

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        scale = np.where(self.degenerate, 1.0, self.hi - self.lo)
        out = (values - self.lo) / scale
        if np.any(self.degenerate):
            out = np.where(self.degenerate, 0.0, out)
        return out

    def invert(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        scale = np.where(self.degenerate, 1.0, self.hi - self.lo)
        out = values * scale + self.lo
        if np.any(self.degenerate):
            out = np.where(self.degenerate, self.lo, out)
        return out


@dataclass
class Window:
    """One training instance: 6 history steps, calendar encoding, next-step label."""

    x: np.ndarray          # (N, HISTORY_STEPS, F), normalized
    temporal: np.ndarray   # (TEMPORAL_DIM,)
    y: np.ndarray          # (N, F), normalized
    label_index: int
    label_time: np.datetime64


def day_of_week(ts: np.ndarray | np.datetime64) -> np.ndarray | int:
    """0 = Monday ... 6 = Sunday."""
    days = np.asarray(ts, dtype="datetime64[D]").astype("int64")
    out = (days + 3) % 7  # Unix epoch (1970-01-01) was a Thursday
    return out if out.ndim else int(out)


def hour_of_day(ts: np.ndarray | np.datetime64) -> np.ndarray | int:
    hours = np.asarray(ts, dtype="datetime64[h]").astype("int64")
    out = hours % 24
    return out if out.ndim else int(out)


def temporal_encoding(ts: np.datetime64) -> np.ndarray:
    """31-dim one-hot pair: day-of-week slot then hour-of-day slot."""
    enc = np.zeros(TEMPORAL_DIM)
    enc[day_of_week(ts)] = 1.0
    enc[7 + hour_of_day(ts)] = 1.0
    return enc


def fit_normalizer(series: DemandSeries, fit_span: Span) -> Normalizer:
    """Per-feature min/max over the given span only (no val/test leakage)."""
    if len(fit_span) == 0:
        raise ValueError("normalizer fit range must be non-empty")
    if fit_span.stop > series.n_steps:
        raise ValueError("fit span exceeds series length")
    chunk = series.values[:, fit_span.start:fit_span.stop, :]
    lo = chunk.min(axis=(0, 1))
    hi = chunk.max(axis=(0, 1))
    return Normalizer(lo, hi, fit_span)


def _window_at(normalized: np.ndarray, series: DemandSeries, t: int) -> Window:
    return Window(
        x=normalized[:, t - HISTORY_STEPS:t, :],
        temporal=temporal_encoding(series.timestamps[t]),
        y=normalized[:, t, :],
        label_index=t,
        label_time=series.timestamps[t],
    )


def make_windows(series: DemandSeries, normalizer: Normalizer) -> list[Window]:
    """All sliding windows: label indices HISTORY_STEPS .. T-1, stride 1."""
    if series.n_steps < HISTORY_STEPS + 1:
        raise ValueError(
            f"series too short for windowing: {series.n_steps} < {HISTORY_STEPS + 1}")
    normalized = normalizer.apply(series.values)
    return [_window_at(normalized, series, t)
            for t in range(HISTORY_STEPS, series.n_steps)]


def windows_for_span(series: DemandSeries, normalizer: Normalizer, span: Span,
                     history_within_span: bool = False) -> list[Window]:
    """Windows whose label falls inside `span`.

    By default the 6-step history may reach back before the span start
    (appropriate for val/test, where earlier data is legitimately past).
    With `history_within_span` the window must lie entirely inside the
    span, which models few-shot training where nothing earlier exists.
    """
    lo = span.start + HISTORY_STEPS if history_within_span else max(span.start, HISTORY_STEPS)
    hi = min(span.stop, series.n_steps)
    normalized = normalizer.apply(series.values)
    return [_window_at(normalized, series, t) for t in range(lo, hi)]


def split(series: DemandSeries, spec: SplitSpec, role: str = "target") -> SplitResult:
    """Chronological split: [... | train | val | test] ending at the series end.

    Target cities get `target_train_days` of training data immediately
    before validation. Source cities train on the whole series (their val
    and test spans are empty).
    """
    t_total = series.n_steps
    if role == "source":
        return SplitResult(Span(0, t_total), Span(t_total, t_total), Span(t_total, t_total))
    if role != "target":
        raise ValueError(f"unknown role {role!r}, expected 'source' or 'target'")
    test_steps = round(spec.test_months * HOURS_PER_MONTH)
    val_steps = round(spec.val_months * HOURS_PER_MONTH)
    train_steps = spec.target_train_days * HOURS_PER_DAY
    train_start = t_total - test_steps - val_steps - train_steps
    if train_start < 0:
        raise ValueError(
            f"series of {t_total} steps cannot host train({train_steps}) + "
            f"val({val_steps}) + test({test_steps})")
    train = Span(train_start, train_start + train_steps)
    val = Span(train.stop, train.stop + val_steps)
    test = Span(val.stop, t_total)
    return SplitResult(train, val, test)


def add_gaussian_noise(series: DemandSeries, sd: float, seed: int) -> DemandSeries:
    """Add N(0, sd^2) noise to raw demand, clipped at 0; deterministic per seed."""
    if sd < 0:
        raise ValueError("noise standard deviation must be >= 0")
    if sd == 0:
        return DemandSeries(series.values.copy(), series.timestamps.copy())
    rng = np.random.default_rng(seed)
    noisy = series.values + rng.normal(0.0, sd, size=series.values.shape)
    return DemandSeries(np.clip(noisy, 0.0, None), series.timestamps.copy())


def truncate_to_recent(series: DemandSeries, months: float) -> DemandSeries:
    """Keep only the most recent `months` of data (30-day months)."""
    steps = round(months * HOURS_PER_MONTH)
    if steps <= 0 or steps > series.n_steps:
        raise ValueError(f"cannot truncate {series.n_steps}-step series to {steps} steps")
    return DemandSeries(series.values[:, -steps:, :].copy(),
                        series.timestamps[-steps:].copy())


def save_demand_csv(series: DemandSeries, path: str | Path,
                    sidecar_config: dict | None = None) -> None:
    """Write `timestamp,cell_id,pickup,dropoff` rows, one per cell-hour.

    If `sidecar_config` is given it is written next to the file as
    `<path>.json` recording the generator configuration.
    """
    path = Path(path)
    n, t_total, f = series.values.shape
    ts_str = [str(ts) + ":00" for ts in series.timestamps.astype("datetime64[h]")]
    with path.open("w") as fh:
        fh.write("timestamp,cell_id," + ",".join(FEATURE_NAMES[:f]) + "\n")
        for t in range(t_total):
            for i in range(n):
                vals = ",".join(repr(float(v)) for v in series.values[i, t])
                fh.write(f"{ts_str[t]},{i},{vals}\n")
    if sidecar_config is not None:
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(sidecar_config, sort_keys=True, indent=2) + "\n")


def load_demand_csv(path: str | Path, n_nodes: int | None = None) -> DemandSeries:
    """Read the cell-hour format back; missing cell-hours become zero demand."""
    df = pd.read_csv(path, float_precision="round_trip")
    required = {"timestamp", "cell_id"}
    if not required <= set(df.columns):
        raise ValueError(f"demand file must have columns {sorted(required)} plus features")
    feature_cols = [c for c in df.columns if c not in required]
    if not feature_cols:
        raise ValueError("demand file has no feature columns")
    ts = df["timestamp"].to_numpy(dtype="datetime64[h]")
    ids = df["cell_id"].to_numpy(dtype=int)
    n = n_nodes if n_nodes is not None else int(ids.max()) + 1
    t0, t1 = ts.min(), ts.max()
    t_total = int((t1 - t0).astype("timedelta64[h]").astype(int)) + 1
    timestamps = t0 + np.arange(t_total).astype("timedelta64[h]")
    values = np.zeros((n, t_total, len(feature_cols)))
    t_idx = (ts - t0).astype("timedelta64[h]").astype(int)
    values[ids, t_idx, :] = df[feature_cols].to_numpy(dtype=float)
    return DemandSeries(values, timestamps)
