import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from lesiontrack.boxes import load_annotations, save_annotations
from lesiontrack.cli import main, read_config
from lesiontrack.mesh import Texture, TexturedMesh, save_mesh
from lesiontrack.synthetic import SyntheticConfig, generate_pair

from _builders import annotation_set, box_at, plane_grid

SMALL = SyntheticConfig(n_lesions=8, n_lat=32, n_lon=64, template_lat=24, template_lon=48, texture_size=512,
                        min_separation=0.15, seed=2)


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    return generate_pair(SMALL).save(out)


def test_detect_writes_boxes(tmp_path):
    img = np.full((120, 120, 3), 220, dtype=np.uint8)
    yy, xx = np.mgrid[0:120, 0:120]
    img[(xx - 60) ** 2 + (yy - 40) ** 2 <= 25] = 60
    Image.fromarray(img).save(tmp_path / "skin.png")
    assert main(["detect", str(tmp_path / "skin.png"), "--out", str(tmp_path / "o")]) == 0
    ann = load_annotations(tmp_path / "o" / "skin.json")
    assert len(ann) == 1 and ann.width == 120


def test_detect_external_applies_nms(tmp_path):
    Image.fromarray(np.zeros((100, 100, 3), dtype=np.uint8)).save(tmp_path / "s.png")
    ext = annotation_set([box_at(50, 50, confidence=0.9), box_at(52, 50, confidence=0.8),
                          box_at(20, 20, confidence=0.3)], 100, 100)
    save_annotations(ext, tmp_path / "ext.json")
    assert main(["detect", str(tmp_path / "s.png"), "--external", str(tmp_path / "ext.json"),
                 "--out", str(tmp_path)]) == 0
    assert [b.confidence for b in load_annotations(tmp_path / "s.json")] == [0.9]


def test_map3d_writes_lesions_and_overlay(tmp_path):
    m = plane_grid(8, id="pl")
    m = TexturedMesh(m.vertices, m.faces, m.uv, Texture.from_array(np.zeros((64, 64, 3), dtype=np.uint8)), id="pl")
    save_mesh(m, tmp_path / "pl.obj", texture_filename="pl.png")
    Image.fromarray(np.zeros((64, 64, 3), dtype=np.uint8)).save(tmp_path / "pl.png")
    save_annotations(annotation_set([box_at(8, 56, 3)], 64, 64), tmp_path / "a.json")
    assert main(["map3d", "--mesh", str(tmp_path / "pl.obj"), "--annotations", str(tmp_path / "a.json"),
                 "--out", str(tmp_path / "o")]) == 0
    lesions = json.loads((tmp_path / "o" / "pl_lesions.json").read_text())
    # box centre (8, 56) -> uv (0.125, 0.125) -> grid vertex (1, 1)
    assert [l["vertex"] for l in lesions["lesions"]] == [1 * 9 + 1]
    assert (tmp_path / "o" / "pl_boxes.png").exists()


def test_map3d_size_mismatch_exits_1(tmp_path, synth):
    save_annotations(annotation_set([box_at(8, 8)], 64, 64), tmp_path / "a.json")
    assert main(["map3d", "--mesh", synth["mesh_t"], "--annotations", str(tmp_path / "a.json"),
                 "--out", str(tmp_path)]) == 1


def test_track_and_eval_round_trip(tmp_path, synth):
    out = tmp_path / "trk"
    code = main(["track", "--mesh-a", synth["mesh_t"], "--mesh-b", synth["mesh_t1"],
                 "--annotations-a", synth["detections_t"], "--annotations-b", synth["detections_t1"],
                 "--recon-a", synth["recon_t"], "--recon-b", synth["recon_t1"], "--out", str(out)])
    assert code == 0
    result = json.loads((out / "match.json").read_text())
    assert len(result["pairs"]) + len(result["disappearing"]) == 8
    code = main(["eval", "--mode", "track", "--result", str(out / "match.json"),
                 "--gt-a", synth["annotations_t"], "--gt-b", synth["annotations_t1"],
                 "--det-a", synth["detections_t"], "--det-b", synth["detections_t1"],
                 "--lesions-a", str(out / "lesions_a.json"), "--lesions-b", str(out / "lesions_b.json"),
                 "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "tracking_report.json").read_text())
    assert rep["mean"]["matching_accuracy"] >= rep["mean"]["longitudinal_accuracy"]
    assert rep["mean"]["matching_accuracy"] >= 0.8


def test_track_identical_mesh_needs_no_correspondence(tmp_path, synth):
    out = tmp_path / "same"
    assert main(["track", "--mesh-a", synth["mesh_t"], "--mesh-b", synth["mesh_t"],
                 "--annotations-a", synth["annotations_t"], "--annotations-b", synth["annotations_t"],
                 "--alpha", "1", "--out", str(out)]) == 0
    result = json.loads((out / "match.json").read_text())
    assert result["pairs"] == [[k, k] for k in range(8)] and result["loss"] == 0.0
    assert result["solver"] == "hungarian"


def test_track_without_correspondence_fails(tmp_path, synth, capsys):
    code = main(["track", "--mesh-a", synth["mesh_t"], "--mesh-b", synth["mesh_t1"],
                 "--annotations-a", synth["annotations_t"], "--annotations-b", synth["annotations_t1"],
                 "--out", str(tmp_path)])
    assert code == 1 and "--corr" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path, synth):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tracking defaults\nalpha = 1.0\ndistance = euclidean\n")
    args = ["track", "--mesh-a", synth["mesh_t"], "--mesh-b", synth["mesh_t1"],
            "--annotations-a", synth["annotations_t"], "--annotations-b", synth["annotations_t1"],
            "--config", str(cfg)]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    res = json.loads((tmp_path / "a" / "match.json").read_text())
    assert res["config"]["alpha"] == 1.0 and res["config"]["distance_kind"] == "euclidean"
    assert main(args + ["--alpha", "0.25", "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "match.json").read_text())["config"]["alpha"] == 0.25


def test_read_config_rejects_junk(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("alpha 1\n")
    assert main(["partition", "--metadata", "x.csv", "--config", str(p)]) == 1
    p.write_text("k-cap = 5\n")
    assert read_config(p) == {"k_cap": "5"}


def test_eval_detect_and_annotator_matrix(tmp_path):
    gt = annotation_set([box_at(20, 20), box_at(60, 60)], image="scan")
    pred = annotation_set([box_at(20, 20, confidence=0.9), box_at(150, 150, confidence=0.7)], image="scan")
    save_annotations(gt, tmp_path / "gt.json")
    save_annotations(pred, tmp_path / "pred.json")
    assert main(["eval", "--mode", "detect", "--gt", str(tmp_path / "gt.json"), "--pred", str(tmp_path / "pred.json"),
                 "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "detection_report.json").read_text())
    assert [r["criterion"] for r in rep] == ["iou_0.5", "centroid"]
    assert rep[1]["mean"]["precision"] == 0.5 and rep[1]["mean"]["recall"] == 0.5
    assert main(["eval", "--mode", "annotator-matrix", "--sets", str(tmp_path / "gt.json"),
                 str(tmp_path / "pred.json"), "--out", str(tmp_path)]) == 0
    mat = json.loads((tmp_path / "annotator_matrix.json").read_text())
    assert mat["f1"][0][0] == 1.0 and mat["f1"][0][1] == 0.5


def test_partition_command(tmp_path):
    rows = ["subject_id,sex,scans"]
    rows += [f"s{k:03d},{'FM'[k % 2]},a{k};b{k}" for k in range(200)]
    (tmp_path / "meta.csv").write_text("\n".join(rows) + "\n")
    assert main(["partition", "--metadata", str(tmp_path / "meta.csv"), "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "partition.json").read_text())
    assert {k: len(v) for k, v in man["meshes"].items()} == {"train": 128, "val": 40, "test": 40, "longitudinal": 10}


def test_exit_codes(tmp_path):
    assert main(["track"]) == 1                                       # usage error
    assert main(["nope"]) == 1
    assert main(["detect", str(tmp_path / "missing.png"), "--out", str(tmp_path)]) == 2
    assert main(["track", "--mesh-a", "x", "--mesh-b", "y", "--lesions-a", "a", "--lesions-b", "b",
                 "--alpha", "3", "--out", str(tmp_path)]) == 2     # mesh file missing first


def test_console_entry_point(tmp_path):
    out = tmp_path / "g"
    proc = subprocess.run([sys.executable, "-m", "lesiontrack.cli", "gen-synthetic", "--n-lesions", "4",
                           "--texture-size", "256", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((out / "manifest.json").read_text())["n_lesions_t"] == 4
