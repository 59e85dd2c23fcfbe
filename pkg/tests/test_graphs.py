import numpy as np
import pytest

from crosscity.graphs import (GridSpec, MultiViewGraph, SemanticGraph,
                              build_grid, load_multi_view, poi_graph,
                              proximity_graph, road_graph, read_poi_counts,
                              read_road_segments, save_multi_view,
                              write_poi_counts, write_road_segments)


def test_build_grid_dc_bbox():
    # Washington DC box at 1 km cells: ~19x18 under the fixed conversion.
    g = build_grid(38.80, 38.97, -77.13, -76.93, 1.0)
    assert (g.rows, g.cols) == (19, 18)
    assert 19 <= g.rows <= 21 and 17 <= g.cols <= 20


def test_build_grid_single_cell():
    g = build_grid(0.0, 0.008, 0.0, 0.008, 1.0)
    assert (g.rows, g.cols) == (1, 1)
    a = proximity_graph(g).adjacency
    np.testing.assert_array_equal(a, np.zeros((1, 1)))


def test_build_grid_equator_square():
    # 0.036 deg at the equator is ~4.0 km, so 5 cells at 1 km with ceil.
    g = build_grid(0.0, 0.036, 0.0, 0.036, 1.0)
    assert (g.rows, g.cols) == (5, 5)


def test_build_grid_rejects_degenerate():
    with pytest.raises(ValueError):
        build_grid(1.0, 1.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        build_grid(0.0, 1.0, 0.0, 1.0, 0.0)


def test_grid_indexing_roundtrip():
    g = GridSpec(0.0, 1.0, 0.0, 1.0, 1.0, 3, 4)
    assert g.n_cells == 12
    assert g.cell_index(1, 2) == 6
    assert g.cell_rc(6) == (1, 2)
    with pytest.raises(ValueError):
        g.cell_index(3, 0)
    with pytest.raises(ValueError):
        g.cell_rc(12)


def test_proximity_graph_neighbour_counts():
    g = GridSpec(0.0, 1.0, 0.0, 1.0, 1.0, 3, 3)
    a = proximity_graph(g).adjacency
    assert a.shape == (9, 9)
    np.testing.assert_array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    degree = a.sum(axis=1)
    # corners 3, edges 5, centre 8
    assert degree[g.cell_index(0, 0)] == 3
    assert degree[g.cell_index(0, 1)] == 5
    assert degree[g.cell_index(1, 1)] == 8


def test_road_graph_distinct_highways():
    g = GridSpec(0.0, 1.0, 0.0, 1.0, 1.0, 2, 2)
    segments = [(0, 1, "a"), (1, 0, "a"), (0, 1, "b"), (2, 2, "c"), (1, 3, "a")]
    a = road_graph(segments, g).adjacency
    assert a[0, 1] == a[1, 0] == 2.0  # highways a and b, duplicate a counted once
    assert a[1, 3] == 1.0
    assert np.all(np.diag(a) == 0)  # self-segment ignored


def test_road_graph_rejects_out_of_range():
    g = GridSpec(0.0, 1.0, 0.0, 1.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        road_graph([(0, 4, "a")], g)


def test_poi_graph_cosine():
    counts = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
    a = poi_graph(counts).adjacency
    assert a[0, 1] == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-12)
    assert np.all(a[2, :] == 0) and np.all(a[:, 2] == 0)
    assert np.all(np.diag(a) == 0)
    np.testing.assert_array_equal(a, a.T)
    assert np.all((a >= 0) & (a <= 1))


def test_poi_graph_rejects_negative():
    with pytest.raises(ValueError):
        poi_graph(np.array([[1.0, -1.0]]))


def test_multi_view_requires_matching_sizes():
    g = GridSpec(0.0, 1.0, 0.0, 1.0, 1.0, 2, 2)
    prox = proximity_graph(g)
    bad = SemanticGraph("poi", np.zeros((3, 3)))
    with pytest.raises(ValueError):
        MultiViewGraph(g, (prox, bad))


def test_csv_roundtrips(tmp_path):
    segments = [(0, 1, "a"), (1, 3, "b")]
    write_road_segments(segments, tmp_path / "roads.csv")
    assert read_road_segments(tmp_path / "roads.csv") == segments

    counts = np.array([[1.0, 2.0], [0.0, 5.0], [3.0, 0.0]])
    write_poi_counts(counts, tmp_path / "poi.csv")
    np.testing.assert_array_equal(read_poi_counts(tmp_path / "poi.csv"), counts)


def test_poi_csv_missing_cells_zero_filled(tmp_path):
    (tmp_path / "poi.csv").write_text("cell_id,cat_1,cat_2\n0,1,2\n2,3,4\n")
    counts = read_poi_counts(tmp_path / "poi.csv", n_cells=4)
    np.testing.assert_array_equal(
        counts, [[1.0, 2.0], [0.0, 0.0], [3.0, 4.0], [0.0, 0.0]])


def test_multi_view_npz_roundtrip(tmp_path):
    g = GridSpec(0.0, 0.1, 0.0, 0.1, 1.0, 3, 3)
    counts = np.arange(18, dtype=float).reshape(9, 2)
    mv = MultiViewGraph(g, (proximity_graph(g),
                            road_graph([(0, 1, "a")], g),
                            poi_graph(counts)))
    save_multi_view(mv, tmp_path / "graphs.npz")
    back = load_multi_view(tmp_path / "graphs.npz")
    assert back.grid == g
    assert [v.kind for v in back.views] == ["proximity", "road", "poi"]
    np.testing.assert_array_equal(back.adjacency_stack(), mv.adjacency_stack())
