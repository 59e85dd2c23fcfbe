"""Static semantic graphs over a grid-partitioned city.

Three long-term views are supported: 8-neighbour proximity, highway
connectivity, and POI-profile cosine similarity. All builders return
symmetric, zero-diagonal, nonnegative adjacency matrices over the same
row-major cell ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

KM_PER_DEG_LAT = 111.32

VIEW_KINDS = ("proximity", "road", "poi")


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid of square cells covering a lat/lon bounding box.

    Cells are indexed row-major: index = row * cols + col.
    """

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    cell_size_km: float
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must have at least one cell, got {self.rows}x{self.cols}")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def cell_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValueError(f"cell ({row}, {col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col

    def cell_rc(self, index: int) -> tuple[int, int]:
        if not (0 <= index < self.n_cells):
            raise ValueError(f"cell index {index} outside grid with {self.n_cells} cells")
        return divmod(index, self.cols)


@dataclass(frozen=True)
class SemanticGraph:
    """One adjacency matrix encoding a single relation between cells."""

    kind: str
    adjacency: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in VIEW_KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}, expected one of {VIEW_KINDS}")
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class MultiViewGraph:
    """A city's node set with one adjacency matrix per semantic view."""

    grid: GridSpec
    views: tuple[SemanticGraph, ...]

    def __post_init__(self) -> None:
        if len(self.views) < 1:
            raise ValueError("need at least one semantic view")
        n = self.grid.n_cells
        for v in self.views:
            if v.n_nodes != n:
                raise ValueError(f"view {v.kind!r} has {v.n_nodes} nodes, grid has {n}")

    @property
    def n_nodes(self) -> int:
        return self.grid.n_cells

    @property
    def n_views(self) -> int:
        return len(self.views)

    def adjacency_stack(self) -> np.ndarray:
        """All view adjacencies as one (C, N, N) array."""
        return np.stack([v.adjacency for v in self.views])


def build_grid(lat_min: float, lat_max: float, lon_min: float, lon_max: float,
               cell_size_km: float) -> GridSpec:
    """Partition a bounding box into square cells of the given size.

    Uses a fixed spherical-earth conversion: 111.32 km per degree of
    latitude, scaled by cos(mid-latitude) for longitude. Cell counts
    round up so the grid covers the whole box.
    """
    if lat_max <= lat_min or lon_max <= lon_min:
        raise ValueError("degenerate bounding box")
    if cell_size_km <= 0:
        raise ValueError("cell_size_km must be positive")
    ns_km = (lat_max - lat_min) * KM_PER_DEG_LAT
    mid_lat = math.radians(0.5 * (lat_min + lat_max))
    ew_km = (lon_max - lon_min) * KM_PER_DEG_LAT * math.cos(mid_lat)
    rows = math.ceil(ns_km / cell_size_km)
    cols = math.ceil(ew_km / cell_size_km)
    return GridSpec(lat_min, lat_max, lon_min, lon_max, cell_size_km, rows, cols)


def proximity_graph(grid: GridSpec) -> SemanticGraph:
    """Binary adjacency linking each cell with its 8 surrounding cells."""
    n = grid.n_cells
    a = np.zeros((n, n))
    for idx in range(n):
        r, c = grid.cell_rc(idx)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                rr, cc = r + dr, c + dc
                if 0 <= rr < grid.rows and 0 <= cc < grid.cols:
                    a[idx, grid.cell_index(rr, cc)] = 1.0
    return SemanticGraph("proximity", a)


def road_graph(segments: list[tuple[int, int, str]], grid: GridSpec) -> SemanticGraph:
    """Adjacency weighted by the number of distinct highways linking two cells.

    A segment is (cell_i, cell_j, highway_id); duplicate segments of the
    same highway between the same pair count once, in either direction.
    """
    n = grid.n_cells
    pairs: dict[tuple[int, int], set[str]] = {}
    for i, j, hwy in segments:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"segment cell index ({i}, {j}) outside grid with {n} cells")
        if i == j:
            continue
        key = (min(i, j), max(i, j))
        pairs.setdefault(key, set()).add(str(hwy))
    a = np.zeros((n, n))
    for (i, j), hwys in pairs.items():
        a[i, j] = a[j, i] = float(len(hwys))
    return SemanticGraph("road", a)


def poi_graph(poi_counts: np.ndarray) -> SemanticGraph:
    """Pairwise cosine similarity of per-cell POI category counts.

    Cells with an all-zero POI profile get similarity 0 to everything.
    The diagonal is zeroed.
    """
    counts = np.asarray(poi_counts, dtype=float)
    if counts.ndim != 2 or counts.shape[1] < 1:
        raise ValueError(f"poi_counts must be (N, K) with K >= 1, got shape {counts.shape}")
    if np.any(counts < 0):
        raise ValueError("poi counts must be nonnegative")
    norms = np.linalg.norm(counts, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = counts / safe[:, None]
    a = unit @ unit.T
    a = np.clip(a, 0.0, 1.0)
    a[norms == 0, :] = 0.0
    a[:, norms == 0] = 0.0
    np.fill_diagonal(a, 0.0)
    return SemanticGraph("poi", a)


def read_road_segments(path: str | Path) -> list[tuple[int, int, str]]:
    """Read `cell_i,cell_j,highway_id` rows (with header) from delimited text."""
    df = pd.read_csv(path, dtype={"cell_i": int, "cell_j": int, "highway_id": str})
    missing = {"cell_i", "cell_j", "highway_id"} - set(df.columns)
    if missing:
        raise ValueError(f"road segment file missing columns: {sorted(missing)}")
    return [(int(r.cell_i), int(r.cell_j), str(r.highway_id)) for r in df.itertuples()]


def read_poi_counts(path: str | Path, n_cells: int | None = None) -> np.ndarray:
    """Read `cell_id,cat_1,...,cat_K` rows (with header) into an (N, K) array.

    Cells missing from the file get all-zero counts. N defaults to
    max(cell_id) + 1.
    """
    df = pd.read_csv(path)
    if "cell_id" not in df.columns or df.shape[1] < 2:
        raise ValueError("poi file must have a cell_id column and at least one category column")
    ids = df["cell_id"].to_numpy(dtype=int)
    values = df.drop(columns=["cell_id"]).to_numpy(dtype=float)
    n = n_cells if n_cells is not None else int(ids.max()) + 1
    if np.any(ids < 0) or np.any(ids >= n):
        raise ValueError(f"cell_id outside [0, {n})")
    counts = np.zeros((n, values.shape[1]))
    counts[ids] = values
    return counts


def write_road_segments(segments: list[tuple[int, int, str]], path: str | Path) -> None:
    pd.DataFrame(segments, columns=["cell_i", "cell_j", "highway_id"]).to_csv(path, index=False)


def write_poi_counts(counts: np.ndarray, path: str | Path) -> None:
    counts = np.asarray(counts)
    cols = [f"cat_{k + 1}" for k in range(counts.shape[1])]
    df = pd.DataFrame(counts, columns=cols)
    df.insert(0, "cell_id", np.arange(counts.shape[0]))
    df.to_csv(path, index=False)


def save_multi_view(graph: MultiViewGraph, path: str | Path) -> None:
    """Persist grid metadata plus all view adjacencies in one .npz archive."""
    g = graph.grid
    np.savez(
        path,
        grid=np.array([g.lat_min, g.lat_max, g.lon_min, g.lon_max, g.cell_size_km]),
        shape=np.array([g.rows, g.cols]),
        kinds=np.array([v.kind for v in graph.views]),
        adjacency=graph.adjacency_stack(),
    )


def load_multi_view(path: str | Path) -> MultiViewGraph:
    with np.load(path, allow_pickle=False) as data:
        lat_min, lat_max, lon_min, lon_max, cell = (float(x) for x in data["grid"])
        rows, cols = (int(x) for x in data["shape"])
        kinds = [str(k) for k in data["kinds"]]
        stack = data["adjacency"]
    grid = GridSpec(lat_min, lat_max, lon_min, lon_max, cell, rows, cols)
    views = tuple(SemanticGraph(k, stack[i]) for i, k in enumerate(kinds))
    return MultiViewGraph(grid, views)
