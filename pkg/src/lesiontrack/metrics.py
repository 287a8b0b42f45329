"""Detection and tracking evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .boxes import AnnotationSet, BoundingBox2D, iou
from .errors import EmptyGroundTruth, MissingConfidence

CRITERIA = ("iou_0.5", "centroid")


def centroid_match(a: BoundingBox2D, b: BoundingBox2D) -> bool:
    """True when each box contains the other's centre (closed bounds)."""
    return a.contains(*b.center) and b.contains(*a.center)


def is_match(gt: BoundingBox2D, pred: BoundingBox2D, criterion: str) -> bool:
    if criterion == "centroid":
        return centroid_match(gt, pred)
    if criterion == "iou_0.5":
        return iou(gt, pred) >= 0.5
    raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")


def _conf(b: BoundingBox2D) -> float:
    return 1.0 if b.confidence is None else b.confidence


@dataclass(frozen=True)
class MatchOutcome:
    pairs: tuple[tuple[int, int], ...]  # (gt index, pred index)
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]
    kept_pred: tuple[int, ...]  # predictions at or above the confidence threshold

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)


def _greedy(gt: Sequence[BoundingBox2D], pred: Sequence[BoundingBox2D], order, criterion):
    taken = np.zeros(len(gt), dtype=bool)
    pairs = []
    for p in order:
        pb = pred[p]
        best, best_key = None, None
        pcx, pcy = pb.center
        for g, gb in enumerate(gt):
            if taken[g] or not is_match(gb, pb, criterion):
                continue
            gcx, gcy = gb.center
            key = (-iou(gb, pb), (gcx - pcx) ** 2 + (gcy - pcy) ** 2, g)
            if best_key is None or key < best_key:
                best, best_key = g, key
        if best is not None:
            taken[best] = True
            pairs.append((best, p))
    return pairs


def _prediction_order(pred: Sequence[BoundingBox2D]) -> list[int]:
    return sorted(range(len(pred)), key=lambda k: (-_conf(pred[k]), pred[k].coords, k))


def match_sets(gt: AnnotationSet, pred: AnnotationSet, criterion: str = "centroid",
               conf_threshold: float = 0.5) -> MatchOutcome:
    """One-to-one greedy matching in descending prediction confidence.

    Predictions below ``conf_threshold`` are discarded (missing confidence
    counts as 1). Each prediction takes the unmatched ground-truth box it
    matches with the highest IoU, then the nearest centre, then lowest index.
    """
    gt_boxes, pred_boxes = list(gt), list(pred)
    kept = [k for k in _prediction_order(pred_boxes) if _conf(pred_boxes[k]) >= conf_threshold]
    pairs = _greedy(gt_boxes, pred_boxes, kept, criterion)
    matched_gt = {g for g, _ in pairs}
    matched_pred = {p for _, p in pairs}
    return MatchOutcome(
        pairs=tuple(sorted(pairs)),
        unmatched_gt=tuple(g for g in range(len(gt_boxes)) if g not in matched_gt),
        unmatched_pred=tuple(p for p in sorted(kept) if p not in matched_pred),
        kept_pred=tuple(sorted(kept)),
    )


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def precision_recall(gt: AnnotationSet, pred: AnnotationSet, criterion: str = "centroid",
                     conf_threshold: float = 0.5) -> tuple[float, float, float]:
    m = match_sets(gt, pred, criterion, conf_threshold)
    n_pred, n_gt = len(m.kept_pred), len(gt)
    if n_gt == 0 and n_pred == 0:
        return 1.0, 1.0, 1.0
    precision = m.tp / n_pred if n_pred else 0.0
    recall = m.tp / n_gt if n_gt else 1.0
    return precision, recall, f1_score(precision, recall)


def precision_recall_curve(gt: AnnotationSet, pred: AnnotationSet, criterion: str = "centroid"):
    """Precision and recall at every distinct confidence used as threshold.

    Returns (thresholds, precision, recall), thresholds descending.
    """
    pred_boxes = list(pred)
    if any(b.confidence is None for b in pred_boxes):
        raise MissingConfidence("average precision needs prediction confidences")
    order = _prediction_order(pred_boxes)
    pairs = _greedy(list(gt), pred_boxes, order, criterion)
    hit = np.zeros(len(pred_boxes), dtype=bool)
    for _, p in pairs:
        hit[p] = True
    conf = np.array([pred_boxes[k].confidence for k in order])
    tp = np.cumsum(hit[order])
    n = np.arange(1, len(order) + 1)
    # a threshold admits the whole group of equal confidences at once
    last_of_group = np.r_[conf[1:] != conf[:-1], True] if len(order) else np.zeros(0, dtype=bool)
    thresholds = conf[last_of_group]
    precision = tp[last_of_group] / n[last_of_group]
    recall = tp[last_of_group] / max(len(gt), 1)
    return thresholds, precision, recall


def average_precision(gt: AnnotationSet, pred: AnnotationSet, criterion: str = "centroid",
                      method: str = "all_point") -> float:
    """Area under the interpolated precision-recall curve.

    ``method`` is ``"all_point"`` (default) or ``"11_point"``. With no
    ground truth the AP is 1 if there are no predictions and 0 otherwise.
    """
    _, precision, recall = precision_recall_curve(gt, pred, criterion)
    if len(gt) == 0:
        return 1.0 if len(pred) == 0 else 0.0
    if len(precision) == 0:
        return 0.0
    if method == "11_point":
        return float(np.mean([precision[recall >= t].max(initial=0.0) for t in np.linspace(0, 1, 11)]))
    if method != "all_point":
        raise ValueError(f"unknown AP method {method!r}")
    mrec = np.r_[0.0, recall, 1.0]
    mpre = np.r_[0.0, precision, 0.0]
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


# -- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class ScanScores:
    image: str
    precision: float
    recall: float
    f1: float
    ap: float


@dataclass(frozen=True)
class DetectionReport:
    criterion: str
    conf_threshold: float
    scans: tuple[ScanScores, ...]
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["scans"] = [asdict(s) for s in self.scans]
        return d


def evaluate_detection(gt_sets: Sequence[AnnotationSet], pred_sets: Sequence[AnnotationSet],
                       criterion: str = "centroid", conf_threshold: float = 0.5) -> DetectionReport:
    """Per-scan precision/recall/F1/AP, then mean and standard deviation over scans.

    The aggregate F1 is the harmonic mean of the aggregate precision and recall.
    """
    preds = {p.image: p for p in pred_sets}
    scans = []
    for g in gt_sets:
        p = preds.get(g.image, AnnotationSet(g.image, g.width, g.height, ()))
        pr, rc, f1 = precision_recall(g, p, criterion, conf_threshold)
        ap = average_precision(g, p.with_default_confidence(), criterion)
        scans.append(ScanScores(g.image, pr, rc, f1, ap))
    table = np.array([[s.precision, s.recall, s.ap] for s in scans]).reshape(-1, 3)
    mean = table.mean(axis=0) if len(scans) else np.zeros(3)
    std = table.std(axis=0) if len(scans) else np.zeros(3)
    f1s = np.array([s.f1 for s in scans])
    return DetectionReport(
        criterion, conf_threshold, tuple(scans),
        mean={"precision": float(mean[0]), "recall": float(mean[1]), "ap": float(mean[2]),
              "f1": f1_score(float(mean[0]), float(mean[1]))},
        std={"precision": float(std[0]), "recall": float(std[1]), "ap": float(std[2]),
             "f1": float(f1s.std()) if len(f1s) else 0.0},
    )


def pairwise_annotator_matrix(sets: Sequence[Sequence[AnnotationSet]], criterion: str = "centroid",
                              conf_threshold: float = 0.5) -> np.ndarray:
    """(K, K, 3) array of per-scan-averaged (precision, recall, F1).

    Entry ``[g, p]`` uses annotator ``g`` as ground truth and ``p`` as
    prediction; every annotator covers the same images.
    """
    k = len(sets)
    out = np.zeros((k, k, 3))
    for g in range(k):
        for p in range(k):
            if g == p:
                out[g, p] = 1.0
                continue
            preds = {s.image: s for s in sets[p]}
            rows = [precision_recall(gs, preds[gs.image], criterion, conf_threshold) for gs in sets[g]]
            out[g, p] = np.mean(rows, axis=0) if rows else 0.0
    return out


def format_detection_table(reports: Mapping[str, Sequence[DetectionReport]]) -> str:
    """Aligned text table keyed by ground-truth label, one row per criterion."""
    header = f"{'GT':<6}{'Match':<10}{'Precision':<14}{'Recall':<14}{'Avg. Precision':<14}"
    lines = [header, "-" * len(header)]
    names = {"iou_0.5": "IoU", "centroid": "Centroid"}
    for label, reps in reports.items():
        for r in reps:
            cells = [f"{r.mean[key]:.2f} ({r.std[key]:.2f})" for key in ("precision", "recall", "ap")]
            lines.append(f"{label:<6}{names.get(r.criterion, r.criterion):<10}"
                         f"{cells[0]:<14}{cells[1]:<14}{cells[2]:<14}")
    return "\n".join(lines)


# -- tracking ---------------------------------------------------------------

def tracking_accuracy(result, gt_pairs: Sequence[tuple[int, int]],
                      detected_map: tuple[Mapping[int, int | None], Mapping[int, int | None]]):
    """Matching and longitudinal accuracy of one scan pair.

    Parameters
    ----------
    result : MatchResult
        Tracking output over detected lesions.
    gt_pairs : sequence of (gt lesion in t, gt lesion in t+1)
    detected_map : (map_t, map_t1)
        Ground-truth lesion index -> detected lesion index, or None when undetected.

    Returns
    -------
    (matching_accuracy, longitudinal_accuracy)
        A correctly tracked pair has both endpoints detected and those
        detections paired in ``result``. Matching accuracy divides by the
        pairs with both endpoints detected (0 if there are none),
        longitudinal accuracy by all pairs.
    """
    if not gt_pairs:
        raise EmptyGroundTruth("no ground-truth lesion pairs")
    map_t, map_t1 = detected_map
    matched = set(map(tuple, result.pairs))
    both = correct = 0
    for a, b in gt_pairs:
        da, db = map_t.get(a), map_t1.get(b)
        if da is None or db is None:
            continue
        both += 1
        correct += (da, db) in matched
    matching = correct / both if both else 0.0
    return matching, correct / len(gt_pairs)


def link_ground_truth(gt_t: AnnotationSet, det_t: AnnotationSet, gt_t1: AnnotationSet, det_t1: AnnotationSet):
    """Ground-truth pairs via shared track ids and GT-to-detection maps via the centroid criterion.

    Returns (gt_pairs, (map_t, map_t1)).
    """
    ids_t1 = {}
    for k, b in enumerate(gt_t1):
        if b.track_id is not None:
            ids_t1.setdefault(b.track_id, k)
    gt_pairs = [(k, ids_t1[b.track_id]) for k, b in enumerate(gt_t) if b.track_id in ids_t1]
    maps = []
    for gt, det in ((gt_t, det_t), (gt_t1, det_t1)):
        m = match_sets(gt, det, "centroid", conf_threshold=0.0)
        linked = {g: None for g in range(len(gt))}
        linked.update(dict(m.pairs))
        maps.append(linked)
    return gt_pairs, (maps[0], maps[1])


@dataclass(frozen=True)
class TrackingReport:
    subjects: tuple[str, ...]
    matching_accuracy: tuple[float, ...]
    longitudinal_accuracy: tuple[float, ...]

    @property
    def mean(self) -> dict:
        return {"matching_accuracy": float(np.mean(self.matching_accuracy)) if self.subjects else 0.0,
                "longitudinal_accuracy": float(np.mean(self.longitudinal_accuracy)) if self.subjects else 0.0}

    @property
    def std(self) -> dict:
        return {"matching_accuracy": float(np.std(self.matching_accuracy)) if self.subjects else 0.0,
                "longitudinal_accuracy": float(np.std(self.longitudinal_accuracy)) if self.subjects else 0.0}

    def to_json(self) -> dict:
        return {
            "subjects": [
                {"subject": s, "matching_accuracy": m, "longitudinal_accuracy": l}
                for s, m, l in zip(self.subjects, self.matching_accuracy, self.longitudinal_accuracy)
            ],
            "mean": self.mean,
            "std": self.std,
        }


def format_tracking_table(rows: Sequence[tuple[float, str, TrackingReport]]) -> str:
    header = f"{'alpha':<7}{'Distance':<11}{'Match Acc.':<14}{'Long. Acc.':<14}"
    lines = [header, "-" * len(header)]
    for alpha, kind, rep in rows:
        m, s = rep.mean, rep.std
        lines.append(
            f"{alpha:<7g}{kind.capitalize():<11}"
            f"{m['matching_accuracy']:.2f} ({s['matching_accuracy']:.2f})  "
            f"{m['longitudinal_accuracy']:.2f} ({s['longitudinal_accuracy']:.2f})"
        )
    return "\n".join(lines)


def dumps(report) -> str:
    payload = report.to_json() if hasattr(report, "to_json") else report
    return json.dumps(payload, indent=1, sort_keys=True)
