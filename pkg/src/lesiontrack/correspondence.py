"""Vertex correspondence between two scans of the same subject."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import MeshMismatch, NoConvergence, SchemaError, TemplateSizeMismatch
from .mesh import SpatialIndex, TexturedMesh
from .uvmap import Lesion3D, LesionSet3D

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ReconstructedVertices:
    """Template-ordered points fitted to one scan; row j is template vertex j."""

    mesh_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise SchemaError(f"reconstructed vertices must be (N_A, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise SchemaError("reconstructed vertices contain non-finite values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


def load_reconstructed(path, mesh_id: str | None = None) -> ReconstructedVertices:
    """Read whitespace-delimited ``x y z`` lines."""
    path = Path(path)
    try:
        pts = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return ReconstructedVertices(path.stem if mesh_id is None else mesh_id, pts)


def save_reconstructed(recon: ReconstructedVertices, path) -> Path:
    np.savetxt(path, recon.points, fmt="%.17g")
    return Path(path)


@dataclass(frozen=True, eq=False)
class CorrespondenceMap:
    """Total map from source-mesh vertex index to target-mesh vertex index."""

    source_id: str
    target_id: str
    indices: np.ndarray
    residual: float | None = None
    converged: bool = True

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __getitem__(self, v):
        return self.indices[v]

    def compose(self, other: "CorrespondenceMap") -> "CorrespondenceMap":
        """``other`` after ``self``: source of self -> target of other."""
        return CorrespondenceMap(self.source_id, other.target_id, other.indices[self.indices])

    def check(self, source: TexturedMesh, target: TexturedMesh):
        if len(self.indices) != source.n_vertices:
            raise MeshMismatch(f"map covers {len(self.indices)} vertices, source mesh has {source.n_vertices}")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= target.n_vertices):
            raise MeshMismatch("map points outside the target mesh")

    def to_json(self) -> dict:
        return {"source": self.source_id, "target": self.target_id, "map": self.indices.tolist()}

    @classmethod
    def from_json(cls, data) -> "CorrespondenceMap":
        if isinstance(data, list):
            return cls("", "", np.asarray(data, dtype=np.int64))
        return cls(data.get("source", ""), data.get("target", ""), np.asarray(data["map"], dtype=np.int64))


def save_correspondence(corr: CorrespondenceMap, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(corr.to_json()))
    return path


def load_correspondence(path) -> CorrespondenceMap:
    return CorrespondenceMap.from_json(json.loads(Path(path).read_text()))


def chain_correspondence(mesh_t: TexturedMesh, recon_t, mesh_t1: TexturedMesh, recon_t1) -> CorrespondenceMap:
    """Map vertices of ``mesh_t`` to ``mesh_t1`` through a shared template.

    Each source vertex takes the index of its closest reconstructed point of
    scan t; the reconstructed point with that template index in scan t+1 is
    then snapped to its closest vertex of ``mesh_t1``. Ties go to the lowest
    index.
    """
    r_t = np.asarray(getattr(recon_t, "points", recon_t), dtype=float)
    r_t1 = np.asarray(getattr(recon_t1, "points", recon_t1), dtype=float)
    if r_t.shape != r_t1.shape:
        raise TemplateSizeMismatch(
            f"reconstructed arrays differ in template size: {len(r_t)} vs {len(r_t1)}"
        )
    template_idx, _ = SpatialIndex(r_t).query(mesh_t.vertices)
    target_idx, _ = mesh_t1.vertex_index.query(r_t1[template_idx])
    return CorrespondenceMap(mesh_t.id, mesh_t1.id, target_idx)


def identity_correspondence(mesh: TexturedMesh) -> CorrespondenceMap:
    return CorrespondenceMap(mesh.id, mesh.id, np.arange(mesh.n_vertices))


@dataclass(frozen=True)
class ICPConfig:
    max_iters: int = 100
    # RMS nearest-vertex residual (mesh units) required for convergence
    tol: float = 1e-3
    max_points: int = 20000
    seed: int = 0


def kabsch(src: np.ndarray, dst: np.ndarray):
    """Rotation R and translation t minimising ||src @ R.T + t - dst||."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, mu_d - mu_s @ r.T


def rigid_align(src_points, dst_points, config: ICPConfig = ICPConfig()):
    """Point-to-point ICP started from centroid alignment.

    Returns (rotation, translation, rms_residual).
    """
    src = np.asarray(src_points, dtype=float)
    dst = np.asarray(dst_points, dtype=float)
    if len(src) > config.max_points:
        rng = np.random.default_rng(config.seed)
        src = src[np.sort(rng.choice(len(src), config.max_points, replace=False))]
    tree = cKDTree(dst)
    rot = np.eye(3)
    trans = dst.mean(axis=0) - src.mean(axis=0)
    prev = np.inf
    residual = np.inf
    for it in range(config.max_iters):
        moved = src @ rot.T + trans
        dist, nn = tree.query(moved)
        residual = float(np.sqrt(np.mean(dist ** 2)))
        if residual == 0.0 or prev - residual < 1e-12:
            break
        prev = residual
        rot, trans = kabsch(src, dst[nn])
    logger.debug("ICP stopped after %d iterations, residual %.3g", it + 1, residual)
    return rot, trans, residual


def rigid_align_correspondence(mesh_t: TexturedMesh, mesh_t1: TexturedMesh, config: ICPConfig = ICPConfig(),
                               strict: bool = True) -> CorrespondenceMap:
    """Rigidly align ``mesh_t`` onto ``mesh_t1`` and map each vertex to its nearest target vertex.

    If the residual stays above ``config.tol`` the map is flagged
    ``converged=False``; with ``strict`` NoConvergence is raised carrying it.
    """
    rot, trans, residual = rigid_align(mesh_t.vertices, mesh_t1.vertices, config)
    idx, _ = mesh_t1.vertex_index.query(mesh_t.vertices @ rot.T + trans)
    converged = residual <= config.tol
    corr = CorrespondenceMap(mesh_t.id, mesh_t1.id, idx, residual=residual, converged=converged)
    if not converged and strict:
        raise NoConvergence(f"ICP residual {residual:.4g} above tolerance {config.tol:.4g}", corr)
    return corr


def map_lesions(corr: CorrespondenceMap, lesions: LesionSet3D, target: TexturedMesh) -> LesionSet3D:
    """Move lesions to the target mesh through ``corr``, keeping ids and box references."""
    if lesions.mesh_id and corr.source_id and lesions.mesh_id != corr.source_id:
        raise MeshMismatch(f"lesions live on {lesions.mesh_id!r}, map starts from {corr.source_id!r}")
    if corr.target_id and target.id and corr.target_id != target.id:
        raise MeshMismatch(f"map ends on {corr.target_id!r}, target mesh is {target.id!r}")
    out = []
    for l in lesions:
        if not 0 <= l.vertex < len(corr):
            raise MeshMismatch(f"lesion vertex {l.vertex} outside correspondence of size {len(corr)}")
        v = int(corr[l.vertex])
        out.append(Lesion3D(v, tuple(float(c) for c in target.vertices[v]), l.box_ref, l.track_id))
    return LesionSet3D(target.id, tuple(out))
