"""Textured triangle meshes: container, OBJ I/O and nearest-neighbour index."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyIndex, EmptyMesh, LesionTrackError, ParseError, UVMismatch

logger = logging.getLogger(__name__)

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class InvalidMesh(LesionTrackError):
    pass


@dataclass(frozen=True)
class Texture:
    """Reference to a texture image; pixels are decoded on first access."""

    path: str | None
    width: int
    height: int
    _pixels: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_file(cls, path) -> "Texture":
        from PIL import Image

        try:
            with Image.open(path) as im:
                width, height = im.size
        except (OSError, ValueError) as exc:
            raise ParseError(f"cannot decode texture {path}: {exc}") from exc
        return cls(str(path), width, height)

    @classmethod
    def from_array(cls, pixels: np.ndarray, path=None) -> "Texture":
        pixels = np.asarray(pixels)
        return cls(None if path is None else str(path), pixels.shape[1], pixels.shape[0], pixels)

    def load(self) -> np.ndarray:
        """Return an (H, W, 3) uint8 array."""
        if self._pixels is not None:
            return self._pixels
        if self.path is None:
            raise LesionTrackError("texture has neither pixels nor a path")
        from PIL import Image

        with Image.open(self.path) as im:
            pixels = np.asarray(im.convert("RGB"))
        object.__setattr__(self, "_pixels", pixels)
        return pixels


@dataclass(frozen=True, eq=False)
class TexturedMesh:
    """Triangle mesh with one UV coordinate per vertex.

    Parameters
    ----------
    vertices : (N, 3) float array
    faces : (F, 3) int array of vertex indices
    uv : (N, 2) float array in [0, 1]; row j belongs to vertex j
    texture : Texture or None
    id, subject_id, pose_tag : str
    """

    vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray
    texture: Texture | None = None
    id: str = ""
    subject_id: str = ""
    pose_tag: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        uv = np.ascontiguousarray(self.uv, dtype=np.float64)
        if f.size == 0:
            f = f.reshape(0, 3)
        for name, arr in (("vertices", v), ("faces", f), ("uv", uv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _validate(v, f, uv)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array with ``e[:, 0] < e[:, 1]``."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def weld_map(self) -> np.ndarray:
        """Map each vertex to the lowest-index vertex at exactly the same position.

        UV seams are stored as coincident duplicate vertices; surface
        computations run on the welded topology so paths may cross seams.
        """
        _, first, inverse = np.unique(self.vertices, axis=0, return_index=True, return_inverse=True)
        return first[inverse.ravel()]

    @cached_property
    def vertex_index(self) -> "SpatialIndex":
        return SpatialIndex(self.vertices, p=2)

    @cached_property
    def uv_index(self) -> "SpatialIndex":
        """L1 index over the UV coordinates."""
        return SpatialIndex(self.uv, p=1)

    def with_texture(self, texture: Texture | None) -> "TexturedMesh":
        return TexturedMesh(self.vertices, self.faces, self.uv, texture, self.id, self.subject_id, self.pose_tag)

    def transformed(self, rotation=None, translation=None) -> "TexturedMesh":
        """Copy with vertices mapped by ``x @ rotation.T + translation``."""
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return TexturedMesh(v, self.faces, self.uv, self.texture, self.id, self.subject_id, self.pose_tag)


def _validate(v, f, uv):
    if v.ndim != 2 or v.shape[1] != 3:
        raise InvalidMesh(f"vertices must have shape (N, 3), got {v.shape}")
    if len(v) == 0:
        raise EmptyMesh("mesh has no vertices")
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v).all(axis=1))[0])
        raise InvalidMesh(f"vertex {bad} has non-finite coordinates")
    if f.ndim != 2 or f.shape[1] != 3:
        raise InvalidMesh(f"faces must be triangles, got shape {f.shape}")
    if uv.shape != (len(v), 2):
        raise UVMismatch(f"expected {len(v)} uv rows (one per vertex), got {uv.shape}")
    if len(f):
        out = (f < 0) | (f >= len(v))
        if out.any():
            k = int(np.flatnonzero(out.any(axis=1))[0])
            raise InvalidMesh(f"face {k} {f[k].tolist()} references a vertex outside [0, {len(v)})")
        degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if degenerate.any():
            k = int(np.flatnonzero(degenerate)[0])
            raise InvalidMesh(f"face {k} {f[k].tolist()} is degenerate")
    bad_uv = ~((uv >= 0.0) & (uv <= 1.0)).all(axis=1)
    if bad_uv.any():
        k = int(np.flatnonzero(bad_uv)[0])
        raise InvalidMesh(f"uv {k} {uv[k].tolist()} lies outside [0, 1]^2")


def _parse_index(token: str, count: int, lineno: int, kind: str) -> int:
    try:
        i = int(token)
    except ValueError:
        raise ParseError(f"line {lineno}: bad {kind} index {token!r}") from None
    # OBJ indices are 1-based; negative ones count back from the latest record
    i = i - 1 if i > 0 else count + i
    if i < 0:
        raise ParseError(f"line {lineno}: {kind} index {token} out of range")
    return i


def read_obj(path):
    """Parse ``v``/``vt``/``f`` records.

    Returns (vertices, texcoords, corner_vertex, corner_uv) where the corner
    arrays are (F, 3); ``corner_uv`` is None when faces carry no vt indices.
    Polygons are fan-triangulated.
    """
    verts, tex, fv, ft = [], [], [], []
    has_vt = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError
                elif tag == "vt":
                    tex.append([float(x) for x in parts[1:3]])
                    if len(parts) < 3:
                        raise ValueError
            except ValueError:
                raise ParseError(f"line {lineno}: malformed {tag} record {line.strip()!r}") from None
            if tag != "f":
                continue
            corners = parts[1:]
            if len(corners) < 3:
                raise ParseError(f"line {lineno}: face with fewer than 3 corners")
            vi, ti = [], []
            for c in corners:
                fields = c.split("/")
                vi.append(_parse_index(fields[0], len(verts), lineno, "vertex"))
                this_vt = len(fields) > 1 and fields[1] != ""
                if has_vt is None:
                    has_vt = this_vt
                elif has_vt != this_vt:
                    raise ParseError(f"line {lineno}: faces mix corners with and without vt indices")
                if this_vt:
                    ti.append(_parse_index(fields[1], len(tex), lineno, "texcoord"))
            for k in range(1, len(vi) - 1):
                fv.append([vi[0], vi[k], vi[k + 1]])
                if has_vt:
                    ft.append([ti[0], ti[k], ti[k + 1]])
    vertices = np.array(verts, dtype=np.float64).reshape(-1, 3)
    texcoords = np.array(tex, dtype=np.float64).reshape(-1, 2)
    corner_vertex = np.array(fv, dtype=np.int64).reshape(-1, 3)
    corner_uv = np.array(ft, dtype=np.int64).reshape(-1, 3) if has_vt else None
    return vertices, texcoords, corner_vertex, corner_uv


def collapse_corner_uv(vertices, texcoords, faces, corner_uv):
    """Convert per-corner UV indexing into one UV per vertex.

    A vertex used with several distinct UV values is split into one copy per
    value; the first value seen keeps the original index and copies are
    appended. Returns (vertices, uv, faces).
    """
    n = len(vertices)
    uv = np.full((n, 2), np.nan)
    extra_pos, extra_uv = [], []
    copies: dict[tuple[int, float, float], int] = {}
    new_faces = faces.copy()
    flat_v = faces.ravel()
    flat_t = corner_uv.ravel()
    out = new_faces.ravel()
    for k in range(len(flat_v)):
        vi = flat_v[k]
        t = texcoords[flat_t[k]]
        key = (int(vi), float(t[0]), float(t[1]))
        idx = copies.get(key)
        if idx is None:
            if np.isnan(uv[vi, 0]):
                idx = int(vi)
                uv[vi] = t
            else:
                idx = n + len(extra_pos)
                extra_pos.append(vertices[vi])
                extra_uv.append(t)
            copies[key] = idx
        out[k] = idx
    if extra_pos:
        logger.debug("split %d seam vertices into per-UV copies", len(extra_pos))
        vertices = np.vstack([vertices, np.array(extra_pos)])
        uv = np.vstack([uv, np.array(extra_uv)])
    return vertices, uv, new_faces


def _find_texture(geometry_path: Path):
    for suffix in _IMAGE_SUFFIXES:
        cand = geometry_path.with_suffix(suffix)
        if cand.exists():
            return cand
    return None


def load_mesh(geometry_path, texture_path=None, *, id=None, subject_id="", pose_tag="") -> TexturedMesh:
    """Load an OBJ file and its texture image.

    When ``texture_path`` is None an image next to the OBJ with the same stem
    is used if present; otherwise the mesh has no texture.
    """
    geometry_path = Path(geometry_path)
    if not geometry_path.exists():
        raise FileNotFoundError(geometry_path)
    vertices, texcoords, faces, corner_uv = read_obj(geometry_path)
    if len(vertices) == 0 or len(faces) == 0:
        raise EmptyMesh(f"{geometry_path}: no vertices or no faces")
    bad = np.flatnonzero((faces >= len(vertices)).any(axis=1))
    if len(bad):
        k = int(bad[0])
        raise ParseError(
            f"{geometry_path}: face {k} references vertex {int(faces[k].max())} "
            f"but the file has {len(vertices)} vertices"
        )
    if corner_uv is not None:
        if (corner_uv >= len(texcoords)).any():
            k = int(np.flatnonzero((corner_uv >= len(texcoords)).any(axis=1))[0])
            raise ParseError(f"{geometry_path}: face {k} references a missing texcoord")
        vertices, uv, faces = collapse_corner_uv(vertices, texcoords, faces, corner_uv)
    elif len(texcoords) == len(vertices):
        uv = texcoords
    else:
        raise UVMismatch(
            f"{geometry_path}: {len(texcoords)} texcoords for {len(vertices)} vertices and no per-corner indices"
        )
    missing = np.flatnonzero(np.isnan(uv[:, 0]))
    if len(missing):
        raise UVMismatch(f"{geometry_path}: vertex {int(missing[0])} has no uv (not referenced by any face)")

    if texture_path is None:
        texture_path = _find_texture(geometry_path)
    texture = Texture.from_file(texture_path) if texture_path is not None else None
    try:
        return TexturedMesh(
            vertices, faces, uv, texture,
            id=geometry_path.stem if id is None else id,
            subject_id=subject_id, pose_tag=pose_tag,
        )
    except InvalidMesh as exc:
        raise ParseError(f"{geometry_path}: {exc}") from exc


def save_mesh(mesh: TexturedMesh, path, *, texture_filename=None, precision=17):
    """Write the mesh as OBJ with per-vertex ``vt`` records.

    With the default precision of 17 significant digits a reload is
    bit-identical.
    """
    path = Path(path)
    fmt = f"%.{precision}g"
    with open(path, "w") as fh:
        if texture_filename:
            fh.write(f"# texture {texture_filename}\n")
        for x, y, z in mesh.vertices:
            fh.write(f"v {fmt % x} {fmt % y} {fmt % z}\n")
        for u, v in mesh.uv:
            fh.write(f"vt {fmt % u} {fmt % v}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a}/{a} {b}/{b} {c}/{c}\n")
    return path


class SpatialIndex:
    """Exact nearest-neighbour queries under the L2 (p=2) or L1 (p=1) metric.

    Ties are broken toward the lowest point index, so results equal a
    linear-scan ``argmin``.
    """

    def __init__(self, points, p: int = 2, k: int = 8):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or len(points) == 0:
            raise EmptyIndex("spatial index needs at least one point")
        if p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        self.points = points
        self.p = p
        self._k = k
        self._tree = cKDTree(points)

    def __len__(self):
        return len(self.points)

    def _exact(self, cand_idx, queries):
        diff = self.points[cand_idx] - queries[:, None, :]
        if self.p == 1:
            return np.abs(diff).sum(axis=2)
        return np.sqrt((diff * diff).sum(axis=2))

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return (index, distance) of the nearest point for each query row."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(self.points)
        out_idx = np.empty(len(queries), dtype=np.int64)
        out_dist = np.empty(len(queries))
        todo = np.arange(len(queries))
        k = min(self._k, n)
        while len(todo):
            _, cand = self._tree.query(queries[todo], k=k, p=self.p)
            cand = cand.reshape(len(todo), k)
            dist = self._exact(cand, queries[todo])
            best = dist.min(axis=1)
            # all k candidates tied with the minimum: more ties may exist beyond k
            saturated = (dist.max(axis=1) <= best) & (k < n)
            masked = np.where(dist <= best[:, None], cand, n)
            out_idx[todo] = masked.min(axis=1)
            out_dist[todo] = best
            todo = todo[saturated]
            k = min(2 * k, n)
        return out_idx, out_dist

    def nearest(self, point) -> int:
        return int(self.query(np.asarray(point, dtype=float)[None, :])[0][0])


def nearest_vertex(index: SpatialIndex, point) -> int:
    """Index of the indexed point closest to ``point``; ties go to the lowest index."""
    return index.nearest(point)
