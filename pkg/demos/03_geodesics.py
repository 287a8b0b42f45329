"""
Edge paths versus fast marching
===============================

On a flat grid the true geodesic is the straight line, so both solvers can
be checked against it. Dijkstra is confined to mesh edges and overshoots
diagonals; fast marching crosses triangles and converges as the grid
refines.
"""

import numpy as np

from lesiontrack.geodesic import single_source
from lesiontrack.mesh import TexturedMesh


def plane(n):
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    v = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    faces = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = i * (n + 1) + j, (i + 1) * (n + 1) + j, (i + 1) * (n + 1) + j + 1, i * (n + 1) + j + 1
            faces += [(a, b, d), (b, c, d)]
    return TexturedMesh(v, np.array(faces), v[:, :2])


print(f"{'n':>4} {'dijkstra err':>14} {'fast marching err':>18}")
for n in (10, 20, 40, 80):
    mesh = plane(n)
    exact = np.linalg.norm(mesh.vertices - mesh.vertices[0], axis=1)
    errs = [np.abs(single_source(mesh, 0, m).distances - exact).max() / np.sqrt(2)
            for m in ("dijkstra", "fast_marching")]
    print(f"{n:>4} {errs[0]:>14.2%} {errs[1]:>18.2%}")
