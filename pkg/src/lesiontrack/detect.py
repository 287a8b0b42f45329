"""Classical dark-blob detector used in place of a trained network.

Any detector producing an :class:`AnnotationSet` with confidences can be
swapped in; real network outputs are read with ``load_annotations``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .boxes import AnnotationSet, BoundingBox2D, nms


@dataclass(frozen=True)
class BlobConfig:
    radii: tuple[float, ...] = (2.0, 4.0, 8.0, 16.0)
    # minimum center-surround darkness contrast, in [0, 1] luminance units
    response_threshold: float = 0.05
    nms_iou: float = 0.01


def darkness(pixels: np.ndarray) -> np.ndarray:
    """1 - luminance, scaled to [0, 1]; lesions are darker than the skin around them."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
    if img.max(initial=0.0) > 1.0:
        img = img / 255.0
    return 1.0 - img


def blob_responses(dark: np.ndarray, radii) -> np.ndarray:
    """Stack of center-surround responses, one (H, W) slice per radius."""
    out = np.empty((len(radii),) + dark.shape)
    for k, r in enumerate(radii):
        center = ndimage.gaussian_filter(dark, r / 2.0, mode="nearest")
        surround = ndimage.gaussian_filter(dark, 1.5 * r, mode="nearest")
        out[k] = center - surround
    return out


def detect_blobs(image, config: BlobConfig = BlobConfig(), image_id: str = "image") -> AnnotationSet:
    """Detect dark blobs as boxes with per-image normalised confidence.

    Parameters
    ----------
    image : (H, W) or (H, W, 3) array
    config : BlobConfig
    image_id : str
        Stored on the returned set.
    """
    pixels = np.asarray(image)
    height, width = pixels.shape[:2]
    dark = darkness(pixels)
    radii = tuple(float(r) for r in config.radii)
    resp = blob_responses(dark, radii)
    peaks = (resp == ndimage.maximum_filter(resp, size=3, mode="nearest")) & (resp > config.response_threshold)
    ks, ys, xs = np.nonzero(peaks)
    if len(ks) == 0:
        return AnnotationSet(image_id, width, height, ())
    values = resp[ks, ys, xs]
    top = values.max()
    boxes = []
    for k, y, x, val in zip(ks, ys, xs, values):
        cx, cy = float(x) + 0.5, float(y) + 0.5
        half = radii[k] + 1.0
        x1, y1 = max(cx - half, 0.0), max(cy - half, 0.0)
        x2, y2 = min(cx + half, float(width)), min(cy + half, float(height))
        boxes.append(BoundingBox2D(x1, y1, x2, y2, confidence=float(val / top)))
    return AnnotationSet(image_id, width, height, tuple(nms(boxes, config.nms_iou)))
