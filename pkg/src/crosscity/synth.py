"""Synthetic city pairs with a controllable transfer signal.

Each node carries a latent "land-use" vector drawn from a small set of
prototypes shared across cities. The latent drives both the demand
curve (through a shared bank of daily/weekly sinusoids) and the POI
profile, so POI similarity correlates with demand similarity. A
city-private daily pattern and Gaussian noise are layered on top with
separate amplitude knobs, which makes the transferable share of the
signal an explicit dial.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import HOURS_PER_MONTH, DemandSeries, save_demand_csv
from .graphs import (GridSpec, MultiViewGraph, poi_graph, proximity_graph,
                     road_graph, write_poi_counts, write_road_segments)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SynthConfig:
    n_source: int = 36
    n_target: int = 36
    months: float = 2.0
    shared_amp: float = 1.0
    private_amp: float = 0.1
    noise_sd: float = 0.05
    seed: int = 0
    n_prototypes: int = 6
    latent_dim: int = 4
    poi_categories: int = 8
    base_scale: float = 10.0
    n_features: int = 2
    start: str = "2016-01-04T00"  # a Monday, so weekly structure aligns

    def __post_init__(self) -> None:
        if min(self.n_source, self.n_target) < 9:
            raise ValueError("need at least 9 cells per city for a nontrivial proximity graph")
        if self.months <= 0:
            raise ValueError("months must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")

    @property
    def n_steps(self) -> int:
        return round(self.months * HOURS_PER_MONTH)


@dataclass
class CityData:
    name: str
    series: DemandSeries
    graph: MultiViewGraph
    latents: np.ndarray                     # (N, latent_dim)
    poi_counts: np.ndarray                  # (N, poi_categories)
    road_segments: list[tuple[int, int, str]]


def grid_shape(n_cells: int) -> tuple[int, int]:
    """Most-square factorization: rows = largest divisor <= sqrt(n)."""
    if n_cells < 9:
        raise ValueError("need at least 9 cells")
    for rows in range(int(np.sqrt(n_cells)), 0, -1):
        if n_cells % rows == 0:
            return rows, n_cells // rows
    raise AssertionError("unreachable: 1 divides everything")


def _make_grid(n_cells: int) -> GridSpec:
    rows, cols = grid_shape(n_cells)
    # Synthetic 1 km cells anchored at an arbitrary mid-latitude origin.
    lat_min, lon_min = 40.0, -74.0
    lat_span = rows / 111.32
    lon_span = cols / (111.32 * np.cos(np.radians(lat_min)))
    return GridSpec(lat_min, lat_min + lat_span, lon_min, lon_min + lon_span,
                    1.0, rows, cols)


def _shared_components(cfg: SynthConfig, rng: np.random.Generator) -> dict:
    k, f = cfg.latent_dim, cfg.n_features
    return {
        # Prototype land-use mixtures; nodes in both cities sample from these.
        "prototypes": rng.dirichlet(np.ones(cfg.latent_dim), size=cfg.n_prototypes),
        "offset": rng.uniform(0.8, 1.2, size=(k, f)),
        "daily_amp": rng.uniform(0.6, 1.0, size=(k, f)),
        "daily_phase": rng.uniform(0.0, TWO_PI, size=(k, f)),
        "weekly_amp": rng.uniform(0.2, 0.4, size=(k, f)),
        "weekly_phase": rng.uniform(0.0, TWO_PI, size=(k, f)),
        "poi_map": rng.dirichlet(np.ones(cfg.poi_categories), size=cfg.latent_dim),
    }


def _latent_basis(shared: dict, t_steps: int) -> np.ndarray:
    """Per-latent-dimension curves, shape (latent_dim, T, F)."""
    t = np.arange(t_steps)[None, :, None]
    daily = shared["daily_amp"][:, None, :] * np.sin(
        TWO_PI * t / 24.0 + shared["daily_phase"][:, None, :])
    weekly = shared["weekly_amp"][:, None, :] * np.sin(
        TWO_PI * t / 168.0 + shared["weekly_phase"][:, None, :])
    return shared["offset"][:, None, :] + daily + weekly


def _random_walk_roads(grid: GridSpec, rng: np.random.Generator) -> list[tuple[int, int, str]]:
    """Highways as random lattice walks; each walk is one highway id."""
    n_walks = max(2, grid.n_cells // 6)
    segments: list[tuple[int, int, str]] = []
    for w in range(n_walks):
        r = int(rng.integers(0, grid.rows))
        c = int(rng.integers(0, grid.cols))
        length = int(rng.integers(4, 9))
        for _ in range(length):
            dr, dc = [(-1, 0), (1, 0), (0, -1), (0, 1)][rng.integers(0, 4)]
            rr, cc = r + dr, c + dc
            if not (0 <= rr < grid.rows and 0 <= cc < grid.cols):
                continue
            segments.append((grid.cell_index(r, c), grid.cell_index(rr, cc), f"hwy{w}"))
            r, c = rr, cc
    return segments


def _synth_city(name: str, n_cells: int, cfg: SynthConfig, shared: dict,
                city_ss: np.random.SeedSequence) -> CityData:
    ss_assign, ss_private, ss_noise, ss_roads, ss_poi = city_ss.spawn(5)
    grid = _make_grid(n_cells)
    t_steps = cfg.n_steps

    assign_rng = np.random.default_rng(ss_assign)
    proto_idx = assign_rng.integers(0, cfg.n_prototypes, size=n_cells)
    latents = shared["prototypes"][proto_idx]  # exact reuse keeps curves comparable

    basis = _latent_basis(shared, t_steps)                 # (K, T, F)
    shared_part = np.einsum("nk,ktf->ntf", latents, basis)  # (N, T, F)

    private_rng = np.random.default_rng(ss_private)
    phase = private_rng.uniform(0.0, TWO_PI, size=(n_cells, 1, cfg.n_features))
    t = np.arange(t_steps)[None, :, None]
    private_part = 0.5 * (1.0 + np.sin(TWO_PI * t / 24.0 + phase))

    demand = cfg.base_scale * (cfg.shared_amp * shared_part
                               + cfg.private_amp * private_part)
    if cfg.noise_sd > 0:
        noise_rng = np.random.default_rng(ss_noise)
        demand = demand + noise_rng.normal(0.0, cfg.noise_sd, size=demand.shape)
    demand = np.clip(demand, 0.0, None)

    timestamps = np.datetime64(cfg.start, "h") + np.arange(t_steps)
    series = DemandSeries(demand, timestamps)

    segments = _random_walk_roads(grid, np.random.default_rng(ss_roads))
    poi_rng = np.random.default_rng(ss_poi)
    poi_intensity = 1.0 + 40.0 * latents @ shared["poi_map"]
    poi_counts = poi_rng.poisson(poi_intensity).astype(float)

    graph = MultiViewGraph(grid, (
        proximity_graph(grid),
        road_graph(segments, grid),
        poi_graph(poi_counts),
    ))
    return CityData(name, series, graph, latents, poi_counts, segments)


def synth_city_pair(cfg: SynthConfig) -> tuple[CityData, CityData]:
    """Generate a (source, target) pair; fully deterministic under cfg.seed."""
    root = np.random.SeedSequence(cfg.seed)
    ss_shared, ss_source, ss_target = root.spawn(3)
    shared = _shared_components(cfg, np.random.default_rng(ss_shared))
    source = _synth_city("source", cfg.n_source, cfg, shared, ss_source)
    target = _synth_city("target", cfg.n_target, cfg, shared, ss_target)
    return source, target


def save_city_inputs(city: CityData, out_dir: str | Path,
                     cfg: SynthConfig | None = None) -> dict[str, Path]:
    """Persist raw inputs (demand csv + sidecar, roads csv, poi csv)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "demand": out / f"{city.name}_demand.csv",
        "roads": out / f"{city.name}_roads.csv",
        "poi": out / f"{city.name}_poi.csv",
    }
    sidecar = None
    if cfg is not None:
        sidecar = {"generator": dataclasses.asdict(cfg), "city": city.name,
                   "grid_rows": city.graph.grid.rows, "grid_cols": city.graph.grid.cols}
    save_demand_csv(city.series, paths["demand"], sidecar_config=sidecar)
    write_road_segments(city.road_segments, paths["roads"])
    write_poi_counts(city.poi_counts, paths["poi"])
    return paths


def load_sidecar(demand_path: str | Path) -> dict:
    p = Path(str(demand_path) + ".json")
    return json.loads(p.read_text())
