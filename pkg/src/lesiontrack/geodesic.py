"""Geodesic distances on triangle meshes.

Two solvers are provided: Dijkstra on the edge graph (exact shortest edge
paths, overestimates surface distance) and first-order fast marching with
the acute-triangle update of Kimmel and Sethian. Both operate on the
seam-welded topology (see :attr:`TexturedMesh.weld_map`).
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import DisconnectedLesions, InvalidVertex
from .mesh import TexturedMesh

logger = logging.getLogger(__name__)

METHODS = ("dijkstra", "fast_marching")


@dataclass(frozen=True, eq=False)
class DistanceField:
    source: int
    distances: np.ndarray
    method: str

    def __post_init__(self):
        self.distances.setflags(write=False)


class _Topology:
    """Welded faces, edge graph and vertex-to-face incidence of one mesh."""

    def __init__(self, mesh: TexturedMesh):
        self.rep = mesh.weld_map
        self.points = mesh.vertices
        faces = self.rep[mesh.faces]
        ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
        self.faces = faces[ok]
        n = mesh.n_vertices
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        e = np.unique(e, axis=0)
        w = np.linalg.norm(self.points[e[:, 0]] - self.points[e[:, 1]], axis=1)
        self.graph = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
        self.n = n
        self._incidence = None

    @property
    def components(self) -> np.ndarray:
        _, labels = csgraph.connected_components(self.graph, directed=False)
        return labels[self.rep]

    def incidence(self):
        """CSR (indptr, face ids) listing the faces around each welded vertex."""
        if self._incidence is None:
            f = self.faces.ravel()
            order = np.argsort(f, kind="stable")
            indptr = np.searchsorted(f[order], np.arange(self.n + 1))
            self._incidence = (indptr, order // 3)
        return self._incidence


_TOPOLOGY_CACHE: dict[int, tuple[TexturedMesh, _Topology]] = {}


def topology(mesh: TexturedMesh) -> _Topology:
    hit = _TOPOLOGY_CACHE.get(id(mesh))
    if hit is not None and hit[0] is mesh:
        return hit[1]
    if len(_TOPOLOGY_CACHE) > 16:
        _TOPOLOGY_CACHE.clear()
    topo = _Topology(mesh)
    _TOPOLOGY_CACHE[id(mesh)] = (mesh, topo)
    return topo


def _check_source(mesh, source):
    if not 0 <= int(source) < mesh.n_vertices:
        raise InvalidVertex(f"vertex {source} not in mesh with {mesh.n_vertices} vertices")
    return int(source)


def _triangle_update(pa, ta, pb, tb, pc):
    """Plane-wave arrival time at C from known times at A and B, or inf.

    Returns inf when the characteristic through C does not cross segment AB
    (non-causal update, e.g. at obtuse angles); the caller then relies on
    edge updates.
    """
    ax, ay, az = pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]
    bx, by, bz = pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]
    la = math.sqrt(ax * ax + ay * ay + az * az)
    e1 = (ax / la, ay / la, az / la)
    cx = bx * e1[0] + by * e1[1] + bz * e1[2]
    ox, oy, oz = bx - cx * e1[0], by - cx * e1[1], bz - cx * e1[2]
    cy = math.sqrt(ox * ox + oy * oy + oz * oz)
    if cy == 0.0:
        return math.inf
    g = (tb - ta) / la
    if abs(g) >= 1.0:
        return math.inf
    n1, n2 = g, math.sqrt(1.0 - g * g)
    lam = (cx - cy * n1 / n2) / la
    if lam < 0.0 or lam > 1.0:
        return math.inf
    return ta + n1 * cx + n2 * cy


def _fast_marching(topo: _Topology, source: int) -> np.ndarray:
    pts = topo.points
    faces = topo.faces
    indptr, inc = topo.incidence()
    graph = topo.graph
    sym = graph + graph.T
    nbr_ptr, nbr_idx, nbr_w = sym.indptr, sym.indices, sym.data
    t = np.full(topo.n, np.inf)
    done = np.zeros(topo.n, dtype=bool)
    t[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        ta, a = heapq.heappop(heap)
        if done[a] or ta > t[a]:
            continue
        done[a] = True
        for k in range(nbr_ptr[a], nbr_ptr[a + 1]):
            c = nbr_idx[k]
            if not done[c]:
                cand = ta + nbr_w[k]
                if cand < t[c]:
                    t[c] = cand
                    heapq.heappush(heap, (cand, c))
        for fi in inc[indptr[a]:indptr[a + 1]]:
            tri = faces[fi]
            for j in range(3):
                c = tri[j]
                if done[c]:
                    continue
                b = tri[(j + 1) % 3] if tri[(j + 1) % 3] != a else tri[(j + 2) % 3]
                if not done[b]:
                    continue
                cand = _triangle_update(pts[a], ta, pts[b], t[b], pts[c])
                if cand < t[c]:
                    t[c] = cand
                    heapq.heappush(heap, (cand, c))
    return t


def _solve(topo: _Topology, sources, method: str) -> np.ndarray:
    reps = topo.rep[np.asarray(sources, dtype=np.int64)]
    if method == "dijkstra":
        d = csgraph.dijkstra(topo.graph, directed=False, indices=reps)
    elif method == "fast_marching":
        d = np.array([_fast_marching(topo, int(r)) for r in reps])
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return np.atleast_2d(d)[:, topo.rep]


def single_source(mesh: TexturedMesh, source: int, method: str = "dijkstra") -> DistanceField:
    """Distances from ``source`` to every vertex (inf where unreachable)."""
    source = _check_source(mesh, source)
    d = _solve(topology(mesh), [source], method)[0]
    return DistanceField(source, d, method)


def multi_source(mesh: TexturedMesh, sources, method: str = "dijkstra") -> np.ndarray:
    """(len(sources), N) distance array, one row per source vertex."""
    sources = [_check_source(mesh, s) for s in sources]
    if not sources:
        return np.zeros((0, mesh.n_vertices))
    unique, inverse = np.unique(sources, return_inverse=True)
    return _solve(topology(mesh), unique, method)[inverse]


def vertex_distance_matrix(mesh: TexturedMesh, rows, cols, method: str = "dijkstra",
                           permissive: bool = False) -> np.ndarray:
    """Geodesic distances between vertex lists ``rows`` and ``cols``.

    Unreachable pairs raise DisconnectedLesions unless ``permissive``, in
    which case they are +inf.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    d = multi_source(mesh, rows, method)[:, cols] if len(rows) else np.zeros((0, len(cols)))
    if not permissive and np.isinf(d).any():
        labels = topology(mesh).components
        i, j = map(int, np.argwhere(np.isinf(d))[0])
        raise DisconnectedLesions(
            f"vertex {rows[i]} (component {labels[rows[i]]}) and vertex {cols[j]} "
            f"(component {labels[cols[j]]}) are not connected on mesh {mesh.id!r}",
            components=(int(labels[rows[i]]), int(labels[cols[j]])),
        )
    return d


def pairwise_matrix(mesh: TexturedMesh, lesions, method: str = "dijkstra", permissive: bool = False) -> np.ndarray:
    """Symmetric lesion-to-lesion geodesic matrix with zero diagonal.

    ``lesions`` is a LesionSet3D or a sequence of vertex indices. Runs one
    single-source solve per lesion and averages the two directions.
    """
    verts = np.asarray(getattr(lesions, "vertices", lesions), dtype=np.int64)
    d = vertex_distance_matrix(mesh, verts, verts, method, permissive)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def euclidean_matrix(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def save_matrix_csv(matrix, path):
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt="%.10g")
    return path

