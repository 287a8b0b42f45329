"""Map 2D lesion boxes to mesh vertices through the UV parametrisation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .boxes import AnnotationSet, BoundingBox2D
from .errors import EmptyMesh, MeshMismatch, SchemaError
from .mesh import TexturedMesh
from .metrics import centroid_match


@dataclass(frozen=True)
class Lesion3D:
    vertex: int
    xyz: tuple[float, float, float]
    box_ref: int | None = None
    track_id: str | None = None


@dataclass(frozen=True)
class LesionSet3D:
    """Lesion centres snapped to vertices of one mesh."""

    mesh_id: str
    lesions: tuple[Lesion3D, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lesions", tuple(self.lesions))

    def __len__(self):
        return len(self.lesions)

    def __iter__(self):
        return iter(self.lesions)

    def __getitem__(self, i):
        return self.lesions[i]

    @property
    def vertices(self) -> np.ndarray:
        return np.array([l.vertex for l in self.lesions], dtype=np.int64)

    @property
    def points(self) -> np.ndarray:
        return np.array([l.xyz for l in self.lesions], dtype=float).reshape(-1, 3)

    @property
    def track_ids(self) -> list[str | None]:
        return [l.track_id for l in self.lesions]

    @classmethod
    def from_vertices(cls, mesh: TexturedMesh, vertices, track_ids=None, box_refs=None) -> "LesionSet3D":
        vertices = [int(v) for v in vertices]
        for v in vertices:
            if not 0 <= v < mesh.n_vertices:
                raise MeshMismatch(f"vertex {v} not in mesh {mesh.id!r} ({mesh.n_vertices} vertices)")
        track_ids = track_ids if track_ids is not None else [None] * len(vertices)
        box_refs = box_refs if box_refs is not None else [None] * len(vertices)
        return cls(mesh.id, tuple(
            Lesion3D(v, tuple(float(c) for c in mesh.vertices[v]), b, t)
            for v, t, b in zip(vertices, track_ids, box_refs)
        ))

    def subset(self, indices) -> "LesionSet3D":
        return LesionSet3D(self.mesh_id, tuple(self.lesions[i] for i in indices))

    def check_mesh(self, mesh: TexturedMesh):
        """Raise MeshMismatch unless every lesion is a vertex of ``mesh``."""
        for k, l in enumerate(self.lesions):
            if not 0 <= l.vertex < mesh.n_vertices or not np.array_equal(mesh.vertices[l.vertex], l.xyz):
                raise MeshMismatch(f"lesion {k} (vertex {l.vertex}) does not belong to mesh {mesh.id!r}")

    def to_json(self) -> dict:
        out = []
        for l in self.lesions:
            d = {"vertex": l.vertex, "xyz": list(l.xyz), "box_ref": l.box_ref}
            if l.track_id is not None:
                d["track_id"] = l.track_id
            out.append(d)
        return {"mesh": self.mesh_id, "lesions": out}

    @classmethod
    def from_json(cls, d: dict) -> "LesionSet3D":
        try:
            return cls(str(d["mesh"]), tuple(
                Lesion3D(int(l["vertex"]), tuple(float(c) for c in l["xyz"]), l.get("box_ref"), l.get("track_id"))
                for l in d["lesions"]
            ))
        except KeyError as exc:
            raise SchemaError(f"lesion JSON missing key {exc}") from None


def save_lesions(lesions: LesionSet3D, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(lesions.to_json(), indent=1) + "\n")
    return path


def load_lesions(path) -> LesionSet3D:
    return LesionSet3D.from_json(json.loads(Path(path).read_text()))


def box_center_to_uv(box: BoundingBox2D, width: int, height: int, vflip: bool = True) -> tuple[float, float]:
    """Pixel centre of ``box`` as UV; v is flipped because image rows grow downwards."""
    cx, cy = box.center
    u = cx / width
    v = cy / height
    return (u, 1.0 - v if vflip else v)


def uv_to_vertex(mesh: TexturedMesh, uv) -> int:
    """Vertex whose UV is closest in L1; ties go to the lowest index."""
    if mesh.n_vertices == 0:
        raise EmptyMesh("mesh has no vertices")
    return mesh.uv_index.nearest(uv)


def lesions_to_3d(mesh: TexturedMesh, annotations: AnnotationSet, vflip: bool = True) -> LesionSet3D:
    """Snap every box centre to the nearest-UV vertex of ``mesh``."""
    if mesh.n_vertices == 0:
        raise EmptyMesh("mesh has no vertices")
    if not len(annotations):
        return LesionSet3D(mesh.id, ())
    uv = np.array([box_center_to_uv(b, annotations.width, annotations.height, vflip) for b in annotations])
    idx, _ = mesh.uv_index.query(uv)
    return LesionSet3D.from_vertices(
        mesh, idx,
        track_ids=[b.track_id for b in annotations],
        box_refs=list(range(len(annotations))),
    )


# -- texture embedding ------------------------------------------------------

def border_mask(box: BoundingBox2D, width: int, height: int, stroke: int = 2) -> np.ndarray:
    """Boolean (H, W) mask of the ``stroke``-pixel frame just inside ``box``."""
    c0 = max(int(np.floor(box.x1)), 0)
    r0 = max(int(np.floor(box.y1)), 0)
    c1 = min(int(np.ceil(box.x2)) - 1, width - 1)
    r1 = min(int(np.ceil(box.y2)) - 1, height - 1)
    mask = np.zeros((height, width), dtype=bool)
    if c1 < c0 or r1 < r0:
        return mask
    mask[r0:r1 + 1, c0:c1 + 1] = True
    inner = mask[r0 + stroke:r1 + 1 - stroke, c0 + stroke:c1 + 1 - stroke]
    inner[...] = False
    return mask


def embed_boxes(texture, sets: Sequence[tuple[AnnotationSet, tuple]], overlap_color=(255, 255, 0),
                stroke: int = 2) -> np.ndarray:
    """Return a copy of ``texture`` with box frames drawn in each set's colour.

    Boxes that match a box of another set under the centroid criterion are
    drawn in ``overlap_color``.
    """
    out = np.array(texture, copy=True)
    height, width = out.shape[:2]
    overlapping = [np.zeros(len(s), dtype=bool) for s, _ in sets]
    for a in range(len(sets)):
        for b in range(a + 1, len(sets)):
            for i, box_a in enumerate(sets[a][0]):
                for j, box_b in enumerate(sets[b][0]):
                    if centroid_match(box_a, box_b):
                        overlapping[a][i] = overlapping[b][j] = True
    # overlap frames last so they stay visible
    for draw_overlap in (False, True):
        for (annotations, color), flags in zip(sets, overlapping):
            for box, is_overlap in zip(annotations, flags):
                if is_overlap != draw_overlap:
                    continue
                mask = border_mask(box, width, height, stroke)
                out[mask] = overlap_color if is_overlap else color
    return out


def save_png(pixels: np.ndarray, path) -> Path:
    from PIL import Image

    path = Path(path)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
    return path
