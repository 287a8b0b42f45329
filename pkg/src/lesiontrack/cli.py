"""Command-line entry point.

Subcommands: detect, map3d, track, eval, partition, gen-synthetic. Every
command writes under ``--out``; options may also come from a ``key=value``
file given with ``--config`` (command-line flags win).

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .boxes import AnnotationSet, filter_topk, load_annotation_table, load_annotations, nms, save_annotations
from .correspondence import (ICPConfig, chain_correspondence, identity_correspondence, load_correspondence,
                             load_reconstructed, rigid_align_correspondence, save_correspondence)
from .dataset import load_subject_metadata, partition_subjects
from .detect import BlobConfig, detect_blobs
from .errors import LesionTrackError, MissingCorrespondence, RangeError
from .mesh import load_mesh
from .metrics import (TrackingReport, dumps, evaluate_detection, format_detection_table, format_tracking_table,
                      link_ground_truth, pairwise_annotator_matrix, tracking_accuracy)
from .synthetic import SyntheticConfig, generate_pair
from .tracking import MatchConfig, MatchResult, track
from .uvmap import LesionSet3D, embed_boxes, lesions_to_3d, load_lesions, save_lesions, save_png

logger = logging.getLogger("lesiontrack")

GREEN, RED = (0, 200, 0), (220, 0, 0)


class UsageError(LesionTrackError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_config(path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment. Keys use dashes or underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def _load_single(path, width=None, height=None) -> AnnotationSet:
    return load_annotations(path, width=width, height=height)


# -- commands -----------------------------------------------------------------

def cmd_detect(args) -> int:
    out = _out_dir(args)
    image_path = Path(args.image)
    if args.external:
        from PIL import Image

        with Image.open(image_path) as im:
            w, h = im.size
        ann = load_annotations(args.external, width=w, height=h, image=args.image_id)
        ann = AnnotationSet(image_path.stem, w, h, ann.boxes)
        if all(b.confidence is not None for b in ann):
            kept = [b for b in ann if b.confidence >= args.min_confidence]
            ann = ann.with_boxes(nms(kept, args.nms_iou))
    else:
        from PIL import Image

        with Image.open(image_path) as im:
            pixels = np.asarray(im.convert("RGB"))
        cfg = BlobConfig(response_threshold=args.response_threshold, nms_iou=args.nms_iou)
        ann = detect_blobs(pixels, cfg, image_id=image_path.stem)
        ann = ann.with_boxes([b for b in ann if b.confidence >= args.min_confidence])
    path = save_annotations(ann, out / f"{image_path.stem}.json")
    logger.info("%d boxes -> %s", len(ann), path)
    return 0


def cmd_map3d(args) -> int:
    out = _out_dir(args)
    mesh = load_mesh(args.mesh, args.texture)
    size = (mesh.texture.width, mesh.texture.height) if mesh.texture is not None else (None, None)
    ann = _load_single(args.annotations, *size)
    if mesh.texture is not None and (ann.width, ann.height) != (mesh.texture.width, mesh.texture.height):
        raise RangeError(f"annotations are for a {ann.width}x{ann.height} image, texture is "
                         f"{mesh.texture.width}x{mesh.texture.height}")
    lesions = lesions_to_3d(mesh, ann, vflip=not args.no_vflip)
    save_lesions(lesions, out / f"{mesh.id}_lesions.json")
    if mesh.texture is not None:
        sets = [(ann, RED)]
        if args.gt_annotations:
            sets.insert(0, (_load_single(args.gt_annotations, ann.width, ann.height), GREEN))
        save_png(embed_boxes(mesh.texture.load(), sets, stroke=args.stroke), out / f"{mesh.id}_boxes.png")
    logger.info("%d lesions on %s", len(lesions), mesh.id)
    return 0


def _lesions_for(mesh, lesions_path, ann, original=None):
    """Lesions from a file, or mapped from ``ann`` with box_ref indexing ``original``."""
    if lesions_path:
        lesions = load_lesions(lesions_path)
        lesions.check_mesh(mesh)
        return lesions
    lesions = lesions_to_3d(mesh, ann)
    if original is None:
        return lesions
    where = {id(b): k for k, b in enumerate(original)}
    refs = [where[id(b)] for b in ann]
    return LesionSet3D(lesions.mesh_id, tuple(replace(l, box_ref=r) for l, r in zip(lesions, refs)))


def _correspondence(args, mesh_a, mesh_b):
    if args.corr:
        corr = load_correspondence(args.corr)
        corr.check(mesh_a, mesh_b)
        return corr
    if args.recon_a and args.recon_b:
        return chain_correspondence(mesh_a, load_reconstructed(args.recon_a), mesh_b, load_reconstructed(args.recon_b))
    if args.icp:
        return rigid_align_correspondence(mesh_a, mesh_b, ICPConfig(tol=args.icp_tol), strict=False)
    if mesh_a.n_vertices == mesh_b.n_vertices and np.array_equal(mesh_a.vertices, mesh_b.vertices):
        return identity_correspondence(mesh_a)
    return None


def cmd_track(args) -> int:
    out = _out_dir(args)
    mesh_a, mesh_b = load_mesh(args.mesh_a), load_mesh(args.mesh_b)
    ann_a = ann_b = orig_a = orig_b = None
    if args.annotations_a or args.annotations_b:
        if not (args.annotations_a and args.annotations_b):
            raise UsageError("--annotations-a and --annotations-b go together")
        ann_a, ann_b = _load_single(args.annotations_a), _load_single(args.annotations_b)
        orig_a, orig_b = ann_a.boxes, ann_b.boxes
        if all(b.confidence is not None for b in ann_a) and all(b.confidence is not None for b in ann_b):
            ann_a, ann_b = filter_topk(ann_a, ann_b, args.score_threshold, args.k_cap)
    elif not (args.lesions_a and args.lesions_b):
        raise UsageError("give --lesions-a/--lesions-b or --annotations-a/--annotations-b")
    lesions_a = _lesions_for(mesh_a, args.lesions_a, ann_a, orig_a)
    lesions_b = _lesions_for(mesh_b, args.lesions_b, ann_b, orig_b)
    corr = _correspondence(args, mesh_a, mesh_b)
    if corr is None and args.distance == "geodesic":
        raise MissingCorrespondence("geodesic tracking needs --corr, --recon-a/--recon-b or --icp")
    if corr is not None:
        save_correspondence(corr, out / "correspondence.json")
    config = MatchConfig(alpha=args.alpha, distance_kind=args.distance, dummy_unary_cost=args.dummy_u,
                         dummy_binary_cost=args.dummy_b, solver=args.solver, geodesic_method=args.geodesic_method,
                         normalize_by_diameter=args.normalize_by_diameter, permissive=args.permissive)
    result = track(mesh_a, lesions_a, mesh_b, lesions_b, corr, config)
    save_lesions(lesions_a, out / "lesions_a.json")
    save_lesions(lesions_b, out / "lesions_b.json")
    (out / "match.json").write_text(result.dumps() + "\n")
    logger.info("%d pairs, %d disappearing, %d appearing, loss %.6g",
                len(result.pairs), len(result.disappearing), len(result.appearing), result.loss)
    return 0


def _load_sets(paths) -> list[AnnotationSet]:
    sets = []
    for p in paths:
        sets.extend(load_annotation_table(p).values())
    return sorted(sets, key=lambda s: s.image)


def _by_box_ref(lesions_path, det: AnnotationSet) -> AnnotationSet:
    """Reorder detections to follow lesion order when a lesion file is given."""
    if not lesions_path:
        return det
    refs = [l.box_ref for l in load_lesions(lesions_path)]
    return det.with_boxes([det.boxes[r] for r in refs])


def cmd_eval(args) -> int:
    out = _out_dir(args)
    if args.mode == "detect":
        if not (args.gt and args.pred):
            raise UsageError("detect mode needs --gt and --pred")
        gt = {s.image: s for s in _load_sets(args.gt)}
        pred = {s.image: s for s in _load_sets(args.pred)}
        images = sorted(gt)
        pred_sets = [pred.get(i, AnnotationSet(i, gt[i].width, gt[i].height)) for i in images]
        reports = [evaluate_detection([gt[i] for i in images], pred_sets, c, args.conf_threshold)
                   for c in args.criteria]
        _write_json(out / "detection_report.json", [r.to_json() for r in reports])
        (out / "detection_table.txt").write_text(format_detection_table({args.label: reports}) + "\n")
        print(format_detection_table({args.label: reports}))
    elif args.mode == "track":
        if not (args.result and args.gt_a and args.gt_b and args.det_a and args.det_b):
            raise UsageError("track mode needs --result, --gt-a, --gt-b, --det-a and --det-b")
        result = MatchResult.from_json(json.loads(Path(args.result).read_text()))
        det_a = _by_box_ref(args.lesions_a, _load_single(args.det_a))
        det_b = _by_box_ref(args.lesions_b, _load_single(args.det_b))
        gt_pairs, maps = link_ground_truth(_load_single(args.gt_a), det_a, _load_single(args.gt_b), det_b)
        m, l = tracking_accuracy(result, gt_pairs, maps)
        report = TrackingReport((args.label,), (m,), (l,))
        (out / "tracking_report.json").write_text(dumps(report) + "\n")
        alpha = result.config.alpha if result.config else float("nan")
        kind = result.config.distance_kind if result.config else "?"
        print(format_tracking_table([(alpha, kind, report)]))
    elif args.mode == "annotator-matrix":
        if not args.sets or len(args.sets) < 2:
            raise UsageError("annotator-matrix mode needs at least two --sets")
        sets = [_load_sets([p]) for p in args.sets]
        mat = pairwise_annotator_matrix(sets, args.criteria[0], args.conf_threshold)
        names = [Path(p).stem for p in args.sets]
        _write_json(out / "annotator_matrix.json", {"annotators": names, "precision": mat[..., 0].tolist(),
                                                    "recall": mat[..., 1].tolist(), "f1": mat[..., 2].tolist()})
        for g, row in zip(names, mat):
            print(g, " ".join(f"{v[2]:.2f}" for v in row))
    return 0


def cmd_partition(args) -> int:
    out = _out_dir(args)
    manifest = partition_subjects(load_subject_metadata(args.metadata), seed=args.seed,
                                  extra_train_meshes=args.extra_train_meshes)
    _write_json(out / "partition.json", manifest)
    print(" ".join(f"{k}={len(v)}" for k, v in manifest["meshes"].items()))
    return 0


def cmd_gen_synthetic(args) -> int:
    out = _out_dir(args)
    cfg = SyntheticConfig(n_lesions=args.n_lesions, n_appear=args.n_appear, n_disappear=args.n_disappear,
                          deformation=args.deformation, recon_noise=args.recon_noise, resample=not args.no_resample,
                          texture_size=args.texture_size, seed=args.seed)
    paths = generate_pair(cfg).save(out)
    logger.info("synthetic pair written to %s", out)
    _write_json(out / "files.json", paths)
    return 0


# -- parser -------------------------------------------------------------------

def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lesiontrack", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--config", help="key=value file of option defaults")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", parents=[common], help="detect dark lesions in a texture image")
    p.add_argument("image")
    p.add_argument("--external", help="CSV/JSON detections to pass through instead of the blob detector")
    p.add_argument("--image-id", help="image to select from a multi-image external table")
    p.add_argument("--nms-iou", type=float, default=0.01)
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.add_argument("--response-threshold", type=float, default=BlobConfig.response_threshold)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("map3d", parents=[common], help="map annotation boxes onto mesh vertices")
    p.add_argument("--mesh", required=True)
    p.add_argument("--texture")
    p.add_argument("--annotations", required=True)
    p.add_argument("--gt-annotations", help="second set drawn in green")
    p.add_argument("--no-vflip", action="store_true", help="image rows and v grow in the same direction")
    p.add_argument("--stroke", type=int, default=2)
    p.set_defaults(func=cmd_map3d)

    p = sub.add_parser("track", parents=[common], help="match lesions between two scans")
    p.add_argument("--mesh-a", required=True, help="OBJ of the earlier scan")
    p.add_argument("--mesh-b", required=True, help="OBJ of the later scan")
    p.add_argument("--lesions-a", help="lesion JSON from map3d")
    p.add_argument("--lesions-b")
    p.add_argument("--annotations-a", help="boxes to map onto the mesh instead of lesion JSON")
    p.add_argument("--annotations-b")
    p.add_argument("--recon-a", help="template-ordered reconstruction of scan a (x y z lines)")
    p.add_argument("--recon-b")
    p.add_argument("--corr", help="precomputed correspondence JSON")
    p.add_argument("--icp", action="store_true", help="rigid alignment when no reconstructions are given")
    p.add_argument("--icp-tol", type=float, default=ICPConfig.tol, help="RMS residual for ICP convergence")
    p.add_argument("--alpha", type=float, default=0.5, help="weight of the unary term (1 = unary only)")
    p.add_argument("--distance", choices=("geodesic", "euclidean"), default="geodesic")
    p.add_argument("--dummy-u", type=float, default=0.5, help="unary cost of appearing/disappearing")
    p.add_argument("--dummy-b", type=float, default=0.5, help="distance to the dummy in the binary term")
    p.add_argument("--solver", choices=("auto", "hungarian", "spectral", "brute_force"), default="auto")
    p.add_argument("--geodesic-method", choices=("dijkstra", "fast_marching"), default="dijkstra")
    p.add_argument("--normalize-by-diameter", action="store_true")
    p.add_argument("--permissive", action="store_true", help="allow lesions on disconnected components")
    p.add_argument("--score-threshold", type=float, default=0.5, help="minimum detection confidence")
    p.add_argument("--k-cap", type=int, default=100, help="maximum detections kept per scan")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", parents=[common], help="detection or tracking metrics")
    p.add_argument("--mode", choices=("detect", "track", "annotator-matrix"), required=True)
    p.add_argument("--gt", nargs="+")
    p.add_argument("--pred", nargs="+")
    p.add_argument("--sets", nargs="+")
    p.add_argument("--criteria", nargs="+", choices=("iou_0.5", "centroid"), default=["iou_0.5", "centroid"])
    p.add_argument("--conf-threshold", type=float, default=0.5)
    p.add_argument("--result")
    p.add_argument("--gt-a")
    p.add_argument("--gt-b")
    p.add_argument("--det-a")
    p.add_argument("--det-b")
    p.add_argument("--lesions-a")
    p.add_argument("--lesions-b")
    p.add_argument("--label", default="run")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("partition", parents=[common], help="split subjects into train/val/test")
    p.add_argument("--metadata", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extra-train-meshes", type=int, default=8)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic scan pair")
    p.add_argument("--n-lesions", type=int, default=SyntheticConfig.n_lesions)
    p.add_argument("--n-appear", type=int, default=SyntheticConfig.n_appear)
    p.add_argument("--n-disappear", type=int, default=SyntheticConfig.n_disappear)
    p.add_argument("--deformation", type=float, default=SyntheticConfig.deformation)
    p.add_argument("--recon-noise", type=float, default=SyntheticConfig.recon_noise)
    p.add_argument("--no-resample", action="store_true")
    p.add_argument("--texture-size", type=int, default=SyntheticConfig.texture_size)
    p.add_argument("--seed", type=int, default=SyntheticConfig.seed)
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults from ``--config`` so explicit flags still override."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        if key not in known:
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = _bool(value)
        elif action.nargs in ("+", "*"):
            defaults[key] = value.split()
        elif action.type is not None:
            defaults[key] = action.type(value)
        else:
            defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (LesionTrackError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
