"""Synthetic scan pairs with planted lesions and known correspondence.

The body is a closed lat-long ellipsoid about 1.7 units tall. Scan t+1 is
sampled on a different grid and smoothly deformed (twist, bend, rigid
motion). Lesions are dark spots painted into each texture at the pixel of
their vertex; some exist only in one scan. Noisy template-ordered
reconstructions stand in for a shape-registration network.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .boxes import AnnotationSet, BoundingBox2D, filter_topk, save_annotations
from .correspondence import (CorrespondenceMap, ReconstructedVertices, chain_correspondence, save_correspondence,
                             save_reconstructed)
from .mesh import Texture, TexturedMesh, save_mesh
from .metrics import link_ground_truth, tracking_accuracy
from .tracking import MatchConfig, track
from .uvmap import lesions_to_3d, save_png

SEMI_AXES = (0.22, 0.15, 0.85)
SKIN = np.array([224, 172, 140], dtype=float)
SPOT = np.array([92, 58, 42], dtype=float)


@dataclass(frozen=True)
class SyntheticConfig:
    n_lesions: int = 20
    n_appear: int = 2
    n_disappear: int = 2
    deformation: float = 1.0
    recon_noise: float = 0.01
    resample: bool = True
    n_lat: int = 64
    n_lon: int = 128
    template_lat: int = 48
    template_lon: int = 96
    texture_size: int = 1024
    min_separation: float = 0.08
    detection_jitter: float = 1.0
    n_false_positives: int = 0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SyntheticPair:
    config: SyntheticConfig
    mesh_t: TexturedMesh
    mesh_t1: TexturedMesh
    recon_t: ReconstructedVertices
    recon_t1: ReconstructedVertices
    gt_map: CorrespondenceMap
    annotations_t: AnnotationSet
    annotations_t1: AnnotationSet
    detections_t: AnnotationSet
    detections_t1: AnnotationSet
    vertices_t: np.ndarray
    vertices_t1: np.ndarray

    @property
    def manifest(self) -> dict:
        ids_t = [b.track_id for b in self.annotations_t]
        ids_t1 = [b.track_id for b in self.annotations_t1]
        shared = [i for i in ids_t if i in set(ids_t1)]
        return {
            "config": asdict(self.config),
            "n_lesions_t": len(ids_t),
            "n_lesions_t1": len(ids_t1),
            "persistent": shared,
            "disappearing": [i for i in ids_t if i not in set(ids_t1)],
            "appearing": [i for i in ids_t1 if i not in set(ids_t)],
            "vertices_t": self.vertices_t.tolist(),
            "vertices_t1": self.vertices_t1.tolist(),
        }

    def save(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for tag, mesh in (("t", self.mesh_t), ("t1", self.mesh_t1)):
            paths[f"mesh_{tag}"] = save_mesh(mesh, out / f"scan_{tag}.obj", texture_filename=f"scan_{tag}.png")
            paths[f"texture_{tag}"] = save_png(mesh.texture.load(), out / f"scan_{tag}.png")
        paths["recon_t"] = save_reconstructed(self.recon_t, out / "recon_t.txt")
        paths["recon_t1"] = save_reconstructed(self.recon_t1, out / "recon_t1.txt")
        paths["gt_correspondence"] = save_correspondence(self.gt_map, out / "gt_correspondence.json")
        for name in ("annotations_t", "annotations_t1", "detections_t", "detections_t1"):
            paths[name] = save_annotations(getattr(self, name), out / f"{name}.json")
        (out / "manifest.json").write_text(json.dumps(self.manifest, indent=1) + "\n")
        paths["manifest"] = out / "manifest.json"
        return {k: str(v) for k, v in paths.items()}


def rest_point(theta, phi) -> np.ndarray:
    a, b, c = SEMI_AXES
    theta, phi = np.asarray(theta, dtype=float), np.asarray(phi, dtype=float)
    return np.stack([a * np.sin(theta) * np.cos(phi), b * np.sin(theta) * np.sin(phi),
                     c + c * np.cos(theta)], axis=-1)


def latlong_grid(n_lat: int, n_lon: int, phase: float = 0.0):
    """Lat-long mesh of the rest body; the seam column and pole rows are coincident duplicates.

    Returns (vertices, faces, uv).
    """
    k, j = np.meshgrid(np.arange(n_lat + 1), np.arange(n_lon + 1), indexing="ij")
    theta = np.pi * k / n_lat
    phi = 2 * np.pi * (j + phase) / n_lon
    verts = rest_point(theta, phi).reshape(-1, 3)
    # exact duplicates, so seams and poles weld
    verts[k.ravel() == 0] = rest_point(0.0, 0.0)
    verts[k.ravel() == n_lat] = rest_point(np.pi, 0.0)
    seam = (j == n_lon).ravel()
    verts[seam] = verts[(k * (n_lon + 1)).ravel()[seam]]
    uv = np.stack([j / n_lon, 1.0 - k / n_lat], axis=-1).reshape(-1, 2)

    def vid(kk, jj):
        return kk * (n_lon + 1) + jj

    faces = []
    for kk in range(n_lat):
        for jj in range(n_lon):
            a, b, c, d = vid(kk, jj), vid(kk + 1, jj), vid(kk + 1, jj + 1), vid(kk, jj + 1)
            if kk < n_lat - 1:
                faces.append((a, b, c))
            if kk > 0:
                faces.append((a, c, d))
    faces = np.array(faces, dtype=np.int64)
    # drop pole duplicates no face uses
    used = np.unique(faces)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return verts[used], remap[faces], uv[used]


def deform(points, amount: float) -> np.ndarray:
    """Smooth non-rigid twist and bend followed by a rigid motion, all scaled by ``amount``."""
    p = np.asarray(points, dtype=float)
    if amount == 0:
        return p.copy()
    c = SEMI_AXES[2]
    s = (p[:, 2] - c) / c
    twist = 0.25 * amount * s
    x = p[:, 0] * np.cos(twist) - p[:, 1] * np.sin(twist)
    y = p[:, 0] * np.sin(twist) + p[:, 1] * np.cos(twist)
    y = y + 0.08 * amount * s ** 2
    q = np.stack([x, y, p[:, 2]], axis=1)
    g = 0.3 * amount
    rot = np.array([[np.cos(g), -np.sin(g), 0.0], [np.sin(g), np.cos(g), 0.0], [0.0, 0.0, 1.0]])
    return q @ rot.T + amount * np.array([0.15, 0.10, 0.02])


def _sample_sites(rng, count: int, min_sep: float):
    sites, params = [], []
    tries = 0
    while len(sites) < count:
        tries += 1
        if tries > 100000:
            raise RuntimeError("could not place lesions; lower min_separation")
        theta = np.arccos(rng.uniform(-0.85, 0.85))
        phi = rng.uniform(0.15, 2 * np.pi - 0.15)
        p = rest_point(theta, phi)
        if all(np.linalg.norm(p - q) >= min_sep for q in sites):
            sites.append(p)
            params.append((theta, phi))
    return np.array(sites).reshape(-1, 3)


def _nearest_interior(rest_vertices, uv, sites, margin: float = 0.02):
    """Nearest vertex to each site among vertices at least ``margin`` from the UV border."""
    lo, hi = margin, 1.0 - margin
    ok = np.flatnonzero((uv[:, 0] > lo) & (uv[:, 0] < hi) & (uv[:, 1] > lo) & (uv[:, 1] < hi))
    _, k = cKDTree(rest_vertices[ok]).query(sites)
    return ok[k]


def _paint(rng, size: int, centers, radii) -> np.ndarray:
    img = SKIN[None, None, :] + rng.normal(0.0, 4.0, (size, size, 1))
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    for (cx, cy), r in zip(centers, radii):
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        w = np.clip(1.5 - np.sqrt(d2) / r, 0.0, 1.0)[..., None]
        img = img * (1 - w) + SPOT * w
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _boxes(rng, uv, vertices, size, track_ids, half_sizes):
    boxes, centers = [], []
    for v, tid, h in zip(vertices, track_ids, half_sizes):
        cx, cy = uv[v, 0] * size, (1.0 - uv[v, 1]) * size
        centers.append((cx, cy))
        boxes.append(BoundingBox2D(cx - h, cy - h, cx + h, cy + h, track_id=tid, annotator="synthetic"))
    return boxes, centers


def _detections(rng, image, boxes, size, jitter, n_fp):
    out = []
    for b in boxes:
        dx, dy = rng.uniform(-jitter, jitter, 2)
        s = rng.uniform(0.9, 1.1)
        cx, cy = b.center
        hw, hh = b.width / 2 * s, b.height / 2 * s
        out.append(BoundingBox2D(max(cx + dx - hw, 0.0), max(cy + dy - hh, 0.0), min(cx + dx + hw, size),
                                 min(cy + dy + hh, size), confidence=float(rng.uniform(0.6, 1.0))))
    for _ in range(n_fp):
        cx, cy = rng.uniform(0.05 * size, 0.95 * size, 2)
        out.append(BoundingBox2D(cx - 6, cy - 6, cx + 6, cy + 6, confidence=float(rng.uniform(0.5, 0.9))))
    return AnnotationSet(image, size, size, tuple(out))


def generate_pair(config: SyntheticConfig = SyntheticConfig()) -> SyntheticPair:
    cfg = config
    if cfg.n_disappear > cfg.n_lesions:
        raise ValueError("more disappearing lesions than lesions")
    rng = np.random.default_rng(cfg.seed)
    size = cfg.texture_size

    rest_t, faces_t, uv_t = latlong_grid(cfg.n_lat, cfg.n_lon)
    if cfg.resample:
        rest_t1, faces_t1, uv_t1 = latlong_grid(cfg.n_lat + 4, cfg.n_lon + 8, phase=0.5)
    else:
        rest_t1, faces_t1, uv_t1 = rest_t.copy(), faces_t, uv_t
    verts_t1 = deform(rest_t1, cfg.deformation)

    n_persist = cfg.n_lesions - cfg.n_disappear
    sites = _sample_sites(rng, cfg.n_lesions + cfg.n_appear, cfg.min_separation)
    ids = [f"L{k:02d}" for k in range(n_persist)] + [f"D{k}" for k in range(cfg.n_disappear)] + \
          [f"A{k}" for k in range(cfg.n_appear)]
    idx_t = np.arange(cfg.n_lesions)
    idx_t1 = np.concatenate([np.arange(n_persist), np.arange(cfg.n_lesions, len(sites))]).astype(int)
    # keep whole boxes (half size up to 9 px plus jitter) inside the texture
    margin = max(0.02, (10.0 + cfg.detection_jitter) / size)
    v_t = _nearest_interior(rest_t, uv_t, sites[idx_t], margin)
    v_t1 = _nearest_interior(rest_t1, uv_t1, sites[idx_t1], margin)
    half = rng.uniform(5.0, 9.0, len(sites))

    boxes_t, centers_t = _boxes(rng, uv_t, v_t, size, [ids[i] for i in idx_t], half[idx_t])
    boxes_t1, centers_t1 = _boxes(rng, uv_t1, v_t1, size, [ids[i] for i in idx_t1], half[idx_t1])
    tex_t = _paint(rng, size, centers_t, 0.6 * half[idx_t])
    tex_t1 = _paint(rng, size, centers_t1, 0.6 * half[idx_t1])

    mesh_t = TexturedMesh(rest_t, faces_t, uv_t, Texture.from_array(tex_t), id="scan_t",
                          subject_id="synthetic", pose_tag="t")
    mesh_t1 = TexturedMesh(verts_t1, faces_t1, uv_t1, Texture.from_array(tex_t1), id="scan_t1",
                           subject_id="synthetic", pose_tag="t1")

    template, _, _ = latlong_grid(cfg.template_lat, cfg.template_lon, phase=0.37)
    recon_t = template + rng.normal(0.0, cfg.recon_noise, template.shape)
    recon_t1 = deform(template, cfg.deformation) + rng.normal(0.0, cfg.recon_noise, template.shape)

    _, gt = cKDTree(rest_t1).query(rest_t)
    ann_t = AnnotationSet("scan_t", size, size, tuple(boxes_t))
    ann_t1 = AnnotationSet("scan_t1", size, size, tuple(boxes_t1))
    return SyntheticPair(
        config=cfg, mesh_t=mesh_t, mesh_t1=mesh_t1,
        recon_t=ReconstructedVertices("scan_t", recon_t), recon_t1=ReconstructedVertices("scan_t1", recon_t1),
        gt_map=CorrespondenceMap("scan_t", "scan_t1", gt),
        annotations_t=ann_t, annotations_t1=ann_t1,
        detections_t=_detections(rng, "scan_t", boxes_t, size, cfg.detection_jitter, cfg.n_false_positives),
        detections_t1=_detections(rng, "scan_t1", boxes_t1, size, cfg.detection_jitter, cfg.n_false_positives),
        vertices_t=v_t, vertices_t1=v_t1,
    )


def evaluate_tracking(pair: SyntheticPair, config: MatchConfig = MatchConfig(), score_threshold: float = 0.5):
    """Run detections through mapping, correspondence and matching; score against the planted ids.

    Returns (matching_accuracy, longitudinal_accuracy, MatchResult).
    """
    det_t, det_t1 = filter_topk(pair.detections_t, pair.detections_t1, score_threshold)
    lesions_t = lesions_to_3d(pair.mesh_t, det_t)
    lesions_t1 = lesions_to_3d(pair.mesh_t1, det_t1)
    corr = chain_correspondence(pair.mesh_t, pair.recon_t, pair.mesh_t1, pair.recon_t1)
    result = track(pair.mesh_t, lesions_t, pair.mesh_t1, lesions_t1, corr, config)
    gt_pairs, maps = link_ground_truth(pair.annotations_t, det_t, pair.annotations_t1, det_t1)
    m, l = tracking_accuracy(result, gt_pairs, maps)
    return m, l, result
