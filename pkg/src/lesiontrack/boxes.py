"""Pixel-space lesion boxes: data model, annotation I/O, IoU, NMS, tiling, top-k."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import MissingConfidence, RangeError, SchemaError


@dataclass(frozen=True)
class BoundingBox2D:
    """Axis-aligned box in continuous pixel coordinates, y pointing down."""

    x1: float
    y1: float
    x2: float
    y2: float
    confidence: float | None = None
    track_id: str | None = None
    annotator: str | None = None

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise RangeError(f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise RangeError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def coords(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def contains(self, x: float, y: float) -> bool:
        """Closed-interval point test."""
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2

    def translated(self, dx: float, dy: float) -> "BoundingBox2D":
        return replace(self, x1=self.x1 + dx, y1=self.y1 + dy, x2=self.x2 + dx, y2=self.y2 + dy)

    def to_dict(self) -> dict:
        d = {"x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2}
        for key in ("confidence", "track_id", "annotator"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox2D":
        try:
            return cls(
                float(d["x1"]), float(d["y1"]), float(d["x2"]), float(d["y2"]),
                confidence=None if d.get("confidence") is None else float(d["confidence"]),
                track_id=None if d.get("track_id") is None else str(d["track_id"]),
                annotator=d.get("annotator"),
            )
        except KeyError as exc:
            raise SchemaError(f"box record missing key {exc}") from None


@dataclass(frozen=True)
class AnnotationSet:
    """Boxes on one texture image of size ``width`` x ``height``."""

    image: str
    width: int
    height: int
    boxes: tuple[BoundingBox2D, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for k, b in enumerate(self.boxes):
            if b.x1 < 0 or b.y1 < 0 or b.x2 > self.width or b.y2 > self.height:
                raise RangeError(
                    f"{self.image}: box {k} {b.coords} outside image {self.width}x{self.height}"
                )

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def __getitem__(self, i):
        return self.boxes[i]

    def with_boxes(self, boxes: Iterable[BoundingBox2D]) -> "AnnotationSet":
        return AnnotationSet(self.image, self.width, self.height, tuple(boxes))

    def coords(self) -> np.ndarray:
        return np.array([b.coords for b in self.boxes], dtype=float).reshape(-1, 4)

    def confidences(self) -> np.ndarray:
        if any(b.confidence is None for b in self.boxes):
            raise MissingConfidence(f"{self.image}: some boxes carry no confidence")
        return np.array([b.confidence for b in self.boxes], dtype=float)

    def with_default_confidence(self, value: float = 1.0) -> "AnnotationSet":
        """Fill missing confidences (manual annotations count as certain)."""
        return self.with_boxes(
            b if b.confidence is not None else replace(b, confidence=value) for b in self.boxes
        )

    def to_json(self) -> dict:
        return {
            "image": self.image,
            "width": self.width,
            "height": self.height,
            "boxes": [b.to_dict() for b in self.boxes],
        }

    @classmethod
    def from_json(cls, d: dict) -> "AnnotationSet":
        try:
            return cls(
                str(d["image"]), int(d["width"]), int(d["height"]),
                tuple(BoundingBox2D.from_dict(b) for b in d["boxes"]),
            )
        except KeyError as exc:
            raise SchemaError(f"annotation JSON missing key {exc}") from None


def save_annotations(annotations: AnnotationSet, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(annotations.to_json(), fh, indent=1)
        fh.write("\n")
    return path


# -- annotation tables ------------------------------------------------------

CORNER_KEYS = ("x1", "y1", "x2", "y2")
SIZE_KEYS = ("x", "y", "width", "height")
OPTIONAL_KEYS = ("confidence", "track_id", "annotator")


def _read_rows(path: Path, mapping: dict) -> list[dict]:
    """Rows of a delimited file keyed by the mapping's column names or positions."""
    positional = all(isinstance(v, int) for v in mapping.values())
    with open(path, newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",;\t")
        except csv.Error:
            dialect = csv.excel
        if positional:
            return [
                {key: row[col] if col < len(row) else None for key, col in mapping.items()}
                for row in csv.reader(fh, dialect)
                if row
            ]
        reader = csv.DictReader(fh, dialect=dialect)
        header = reader.fieldnames or []
        for key, col in mapping.items():
            if key in ("confidence", "track_id", "annotator", "image_width", "image_height"):
                continue
            if col not in header:
                raise SchemaError(f"{path}: mapped column {col!r} (for {key}) not in header {header}")
        return [
            {key: row.get(col) for key, col in mapping.items()}
            for row in reader
        ]


def _default_mapping(path: Path) -> dict:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    cols = {h.strip() for h in header}
    if set(CORNER_KEYS) <= cols:
        mapping = {k: k for k in CORNER_KEYS}
    elif set(SIZE_KEYS) <= cols:
        mapping = {k: k for k in SIZE_KEYS}
    else:
        raise SchemaError(f"{path}: cannot infer box columns from header {header}; pass a mapping")
    for key in ("image",) + OPTIONAL_KEYS:
        if key in cols:
            mapping[key] = key
    return mapping


def _row_to_box(row: dict, where: str) -> BoundingBox2D:
    def num(key):
        val = row.get(key)
        if val is None or str(val).strip() == "":
            raise SchemaError(f"{where}: missing value for {key}")
        try:
            return float(val)
        except ValueError:
            raise SchemaError(f"{where}: non-numeric {key} {val!r}") from None

    if "x1" in row:
        x1, y1, x2, y2 = num("x1"), num("y1"), num("x2"), num("y2")
    elif "x" in row:
        x1, y1 = num("x"), num("y")
        x2, y2 = x1 + num("width"), y1 + num("height")
    else:
        raise SchemaError(f"{where}: mapping names neither corners nor x/y/width/height")

    def opt(key):
        val = row.get(key)
        return None if val is None or str(val).strip() == "" else str(val).strip()

    conf = opt("confidence")
    return BoundingBox2D(
        x1, y1, x2, y2,
        confidence=None if conf is None else float(conf),
        track_id=opt("track_id"),
        annotator=opt("annotator"),
    )


def read_box_records(path, schema_mapping: dict | None = None) -> list[tuple[str, BoundingBox2D]]:
    """All (image id, box) records of a CSV annotation table, without image-bounds checks."""
    path = Path(path)
    mapping = dict(schema_mapping) if schema_mapping else _default_mapping(path)
    records = []
    for lineno, row in enumerate(_read_rows(path, mapping), 1):
        box = _row_to_box(row, f"{path} record {lineno}")
        image = row.get("image")
        records.append((path.stem if image is None else str(image), box))
    return records


def load_annotation_table(path, schema_mapping: dict | None = None, image_sizes=None) -> dict[str, AnnotationSet]:
    """Load a CSV or JSON annotation file holding one or more images.

    Parameters
    ----------
    path : str or Path
        CSV (header or positional columns) or canonical JSON (one object or a list).
    schema_mapping : dict, optional
        Maps the keys ``image``, ``x1 y1 x2 y2`` or ``x y width height``,
        ``confidence``, ``track_id``, ``annotator``, ``image_width`` and
        ``image_height`` to column names (or 0-based positions for headerless
        files).
    image_sizes : (W, H) tuple or dict image -> (W, H), optional
        Needed unless the table carries image size columns.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            data = json.load(fh)
        items = data if isinstance(data, list) else [data]
        sets = [AnnotationSet.from_json(d) for d in items]
        return {s.image: s for s in sets}

    mapping = dict(schema_mapping) if schema_mapping else _default_mapping(path)
    rows = _read_rows(path, mapping)
    grouped: dict[str, list[BoundingBox2D]] = {}
    sizes: dict[str, tuple[int, int]] = {}
    for lineno, row in enumerate(rows, 1):
        where = f"{path} record {lineno}"
        image = row.get("image")
        image = path.stem if image is None else str(image).strip()
        grouped.setdefault(image, []).append(_row_to_box(row, where))
        if row.get("image_width") is not None and row.get("image_height") is not None:
            sizes[image] = (int(float(row["image_width"])), int(float(row["image_height"])))
    result = {}
    for image, boxes in grouped.items():
        if image in sizes:
            w, h = sizes[image]
        elif isinstance(image_sizes, dict) and image in image_sizes:
            w, h = image_sizes[image]
        elif isinstance(image_sizes, tuple):
            w, h = image_sizes
        else:
            raise SchemaError(f"{path}: image size unknown for {image!r}")
        result[image] = AnnotationSet(image, w, h, tuple(boxes))
    return result


def load_annotations(path, schema_mapping: dict | None = None, *, width=None, height=None, image=None) -> AnnotationSet:
    """Load the annotations of a single image.

    ``width``/``height`` give the image size for CSV inputs; ``image`` selects
    one image out of a multi-image table.
    """
    sizes = (int(width), int(height)) if width is not None and height is not None else None
    table = load_annotation_table(path, schema_mapping, sizes)
    if image is not None:
        if image not in table:
            raise SchemaError(f"{path}: no annotations for image {image!r}")
        return table[image]
    if len(table) == 1:
        return next(iter(table.values()))
    if not table:
        if sizes is None:
            raise SchemaError(f"{path}: empty table and no image size given")
        return AnnotationSet(Path(path).stem, sizes[0], sizes[1], ())
    raise SchemaError(f"{path}: {len(table)} images in file; pass image=")


# -- geometry ---------------------------------------------------------------

def iou(a: BoundingBox2D, b: BoundingBox2D) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) corner arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _confidence_order(boxes: Sequence[BoundingBox2D]) -> list[int]:
    for k, b in enumerate(boxes):
        if b.confidence is None:
            raise MissingConfidence(f"box {k} has no confidence")
    return sorted(range(len(boxes)), key=lambda k: (-boxes[k].confidence, boxes[k].coords))


def nms(boxes: Sequence[BoundingBox2D], iou_threshold: float = 0.01) -> list[BoundingBox2D]:
    """Greedy non-maximum suppression.

    Returns boxes in descending confidence; a box is dropped when its IoU
    with an already kept box exceeds ``iou_threshold``. Equal confidences are
    ordered by coordinates so the output does not depend on input order.
    """
    boxes = list(boxes)
    order = _confidence_order(boxes)
    if not order:
        return []
    coords = np.array([boxes[k].coords for k in order], dtype=float)
    overlaps = iou_matrix(coords, coords)
    suppressed = np.zeros(len(order), dtype=bool)
    keep = []
    for r in range(len(order)):
        if suppressed[r]:
            continue
        keep.append(boxes[order[r]])
        suppressed |= overlaps[r] > iou_threshold
    return keep


def filter_topk(set_a: AnnotationSet, set_b: AnnotationSet, score_threshold: float = 0.5, k_cap: int = 100):
    """Keep the k best boxes of each set, k = min(|a|, |b|, k_cap) after thresholding."""
    kept = []
    for s in (set_a, set_b):
        order = _confidence_order(s.boxes)
        kept.append([s.boxes[i] for i in order if s.boxes[i].confidence > score_threshold])
    k = min(len(kept[0]), len(kept[1]), k_cap)
    return set_a.with_boxes(kept[0][:k]), set_b.with_boxes(kept[1][:k])


# -- tiling -----------------------------------------------------------------

@dataclass(frozen=True)
class Tile:
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0


def tile_split(width: int, height: int, tile_size: int) -> list[Tile]:
    """Row-major non-overlapping tiles; the last row/column is truncated if needed."""
    if tile_size <= 0:
        raise ValueError("tile_size must be positive")
    return [
        Tile(x, y, min(x + tile_size, width), min(y + tile_size, height))
        for y in range(0, height, tile_size)
        for x in range(0, width, tile_size)
    ]


def tile_to_global(tile: Tile, box: BoundingBox2D) -> BoundingBox2D:
    return box.translated(tile.x0, tile.y0)


def global_to_tile(tile: Tile, box: BoundingBox2D) -> BoundingBox2D:
    return box.translated(-tile.x0, -tile.y0)


def split_annotations(annotations: AnnotationSet, tile_size: int) -> list[tuple[Tile, AnnotationSet]]:
    """Distribute boxes to the tile containing their center, clipped to that tile."""
    tiles = tile_split(annotations.width, annotations.height, tile_size)
    per_row = math.ceil(annotations.width / tile_size)
    buckets: list[list[BoundingBox2D]] = [[] for _ in tiles]
    for b in annotations.boxes:
        cx, cy = b.center
        col = min(int(cx // tile_size), per_row - 1)
        row = min(int(cy // tile_size), len(tiles) // per_row - 1)
        t = tiles[row * per_row + col]
        clipped = replace(b, x1=max(b.x1, t.x0), y1=max(b.y1, t.y0), x2=min(b.x2, t.x1), y2=min(b.y2, t.y1))
        buckets[row * per_row + col].append(global_to_tile(t, clipped))
    return [
        (t, AnnotationSet(f"{annotations.image}@{t.x0},{t.y0}", t.width, t.height, tuple(bs)))
        for t, bs in zip(tiles, buckets)
    ]


def merge_tiles(image: str, width: int, height: int, tiled: Iterable[tuple[Tile, AnnotationSet]],
                iou_threshold: float | None = 0.01) -> AnnotationSet:
    """Inverse of :func:`split_annotations`; NMS removes duplicates along tile borders."""
    boxes = [tile_to_global(t, b) for t, s in tiled for b in s.boxes]
    if iou_threshold is not None and boxes and all(b.confidence is not None for b in boxes):
        boxes = nms(boxes, iou_threshold)
    return AnnotationSet(image, width, height, tuple(boxes))


def box_statistics(boxes: Iterable[BoundingBox2D]) -> dict:
    widths, heights = [], []
    for b in boxes:
        widths.append(b.width)
        heights.append(b.height)
    n = len(widths)
    return {
        "count": n,
        "mean_width": float(np.mean(widths)) if n else float("nan"),
        "mean_height": float(np.mean(heights)) if n else float("nan"),
    }


__all__ = [
    "AnnotationSet", "BoundingBox2D", "Tile", "box_statistics", "filter_topk", "global_to_tile",
    "iou", "iou_matrix", "load_annotation_table", "load_annotations", "merge_tiles", "nms",
    "read_box_records", "save_annotations", "split_annotations", "tile_split", "tile_to_global",
]
