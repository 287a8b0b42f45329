import numpy as np
import pytest
from scipy.sparse.csgraph import floyd_warshall

from lesiontrack.errors import DisconnectedLesions, InvalidVertex
from lesiontrack.geodesic import (_triangle_update, euclidean_matrix, multi_source, pairwise_matrix, single_source,
                                  topology, vertex_distance_matrix)
from lesiontrack.mesh import TexturedMesh

from _builders import grid_index, plane_grid, two_triangles


def test_dijkstra_matches_floyd_warshall():
    rng = np.random.default_rng(0)
    m = plane_grid(5)
    m = TexturedMesh(m.vertices + [0, 0, 1] * rng.random((m.n_vertices, 1)) * 0.3, m.faces, m.uv)
    ref = floyd_warshall(topology(m).graph, directed=False)
    d = multi_source(m, range(m.n_vertices))
    assert np.allclose(d, ref)


def test_dijkstra_on_grid_is_manhattan_like():
    n = 4
    d = single_source(plane_grid(n), grid_index(n, 0, 0)).distances
    # the anti-diagonal never helps along the main diagonal: L1 path length
    assert d[grid_index(n, n, n)] == pytest.approx(2.0)


@pytest.mark.parametrize("n", [16, 40])
def test_fast_marching_beats_dijkstra_on_plane(n):
    m = plane_grid(n)
    fm = single_source(m, grid_index(n, 0, 0), "fast_marching").distances
    dj = single_source(m, grid_index(n, 0, 0)).distances
    exact = np.linalg.norm(m.vertices - m.vertices[0], axis=1)
    assert (fm >= exact - 1e-9).all()
    assert np.abs(fm - exact).max() < np.abs(dj - exact).max()


def test_fast_marching_exact_along_edges():
    n = 10
    fm = single_source(plane_grid(n), 0, "fast_marching").distances
    assert fm[grid_index(n, n, 0)] == pytest.approx(1.0)
    assert fm[grid_index(n, 0, n)] == pytest.approx(1.0)


def test_triangle_update_plane_wave():
    # wave travelling along +x: times equal x
    t = _triangle_update(np.array([0.0, 0, 0]), 0.0, np.array([0.0, 1, 0]), 0.0, np.array([1.0, 0.5, 0]))
    assert t == pytest.approx(1.0)
    # characteristic misses segment AB
    t = _triangle_update(np.array([0.0, 0, 0]), 0.0, np.array([0.0, 1, 0]), 0.0, np.array([1.0, 5.0, 0]))
    assert t == np.inf


@pytest.mark.parametrize("method", ["dijkstra", "fast_marching"])
def test_chord_bound_and_triangle_inequality(method):
    rng = np.random.default_rng(1)
    n = 8
    m = plane_grid(n)
    bumped = m.vertices.copy()
    bumped[:, 2] = 0.2 * np.sin(3 * bumped[:, 0]) * np.cos(2 * bumped[:, 1])
    m = TexturedMesh(bumped, m.faces, m.uv)
    d = multi_source(m, range(m.n_vertices), method)
    chord = euclidean_matrix(m.vertices, m.vertices)
    assert (d >= chord - 1e-9).all()
    assert np.allclose(np.diag(d), 0)
    tol = 1e-9 if method == "dijkstra" else 0.05  # fast marching is only approximately metric
    for i, j, k in rng.integers(0, m.n_vertices, (500, 3)):
        assert d[i, k] <= d[i, j] + d[j, k] + tol


def test_seam_copies_share_distances():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    uv = np.array([[0, 0], [0.5, 0], [0.5, 1], [0, 1], [1, 1]])
    m = TexturedMesh(v, [[0, 1, 2], [0, 4, 3]], uv)
    d = single_source(m, 1).distances
    assert d[2] == d[4]
    assert d[3] == pytest.approx(2.0)
    assert single_source(m, 4).distances[1] == pytest.approx(1.0)


def test_disconnected_components():
    m = two_triangles()
    with pytest.raises(DisconnectedLesions) as exc:
        vertex_distance_matrix(m, [0], [3])
    assert exc.value.components == (0, 1)
    d = vertex_distance_matrix(m, [0], [3], permissive=True)
    assert d[0, 0] == np.inf


def test_invalid_source():
    with pytest.raises(InvalidVertex):
        single_source(plane_grid(2), 99)
    with pytest.raises(ValueError):
        single_source(plane_grid(2), 0, "heat")


def test_pairwise_matrix_symmetric():
    m = plane_grid(6)
    d = pairwise_matrix(m, [0, 5, 17, 40], "fast_marching")
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)
