import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesiontrack.boxes import (AnnotationSet, BoundingBox2D, box_statistics, filter_topk, global_to_tile, iou,
                               iou_matrix, load_annotation_table, load_annotations, merge_tiles, nms,
                               read_box_records, save_annotations, split_annotations, tile_split, tile_to_global)
from lesiontrack.errors import MissingConfidence, RangeError, SchemaError

from _builders import annotation_set, box_at, random_boxes


def naive_nms(boxes, thr):
    """Textbook greedy NMS over a confidence-sorted list."""
    order = sorted(boxes, key=lambda b: (-b.confidence, b.coords))
    kept = []
    for b in order:
        if all(iou(b, k) <= thr for k in kept):
            kept.append(b)
    return kept


def test_box_validation():
    with pytest.raises(RangeError):
        BoundingBox2D(5, 5, 5, 10)
    with pytest.raises(RangeError):
        BoundingBox2D(0, 0, 1, 1, confidence=1.5)
    with pytest.raises(RangeError, match="box 0"):
        AnnotationSet("img", 10, 10, (BoundingBox2D(0, 0, 11, 5),))


def test_iou_values():
    a = BoundingBox2D(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox2D(5, 0, 15, 10)) == pytest.approx(50 / 150)
    assert iou(a, BoundingBox2D(10, 0, 20, 10)) == 0.0


def test_iou_matrix_agrees_with_scalar():
    rng = np.random.default_rng(3)
    a, b = random_boxes(rng, 15), random_boxes(rng, 11)
    mat = iou_matrix([x.coords for x in a], [y.coords for y in b])
    ref = np.array([[iou(x, y) for y in b] for x in a])
    assert np.allclose(mat, ref)


@pytest.mark.parametrize("thr", [0.0, 0.01, 0.3, 0.7])
def test_nms_matches_naive_oracle(thr):
    rng = np.random.default_rng(int(thr * 100))
    for _ in range(20):
        boxes = random_boxes(rng, 40, 100, 100)
        assert nms(boxes, thr) == naive_nms(boxes, thr)


def test_nms_independent_of_input_order():
    rng = np.random.default_rng(7)
    boxes = random_boxes(rng, 30, 80, 80)
    # force some confidence ties
    boxes = [BoundingBox2D(*b.coords, confidence=round(b.confidence, 1)) for b in boxes]
    ref = nms(boxes)
    for seed in range(5):
        shuffled = boxes[:]
        random.Random(seed).shuffle(shuffled)
        assert nms(shuffled) == ref


def test_nms_needs_confidence():
    with pytest.raises(MissingConfidence):
        nms([BoundingBox2D(0, 0, 1, 1)])


def test_filter_topk_uses_smaller_count():
    a = annotation_set([box_at(20 + 20 * k, 20, confidence=c) for k, c in enumerate([0.9, 0.4, 0.8, 0.7])])
    b = annotation_set([box_at(20 + 20 * k, 50, confidence=c) for k, c in enumerate([0.6, 0.95])])
    fa, fb = filter_topk(a, b)
    assert [x.confidence for x in fa] == [0.9, 0.8]
    assert [x.confidence for x in fb] == [0.95, 0.6]
    fa, fb = filter_topk(a, a, k_cap=1)
    assert len(fa) == len(fb) == 1


@pytest.mark.parametrize("w,h,size,count", [(4096, 4096, 1024, 16), (1000, 700, 256, 12), (5, 3, 10, 1)])
def test_tiles_partition_image(w, h, size, count):
    tiles = tile_split(w, h, size)
    assert len(tiles) == count
    cover = np.zeros((h, w), dtype=int)
    for t in tiles:
        cover[t.y0:t.y1, t.x0:t.x1] += 1
    assert (cover == 1).all()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 3), st.floats(0, 900), st.floats(0, 900), st.floats(1, 100), st.floats(1, 100))
def test_tile_coordinate_round_trip(k, x, y, w, h):
    tile = tile_split(4096, 4096, 1024)[k * 5]
    box = BoundingBox2D(x, y, x + w, y + h)
    # shifting by the tile offset can cost one ulp of the offset
    assert tile_to_global(tile, global_to_tile(tile, box)).coords == pytest.approx(box.coords, abs=1e-9)


def test_split_and_merge_recover_interior_boxes():
    rng = np.random.default_rng(1)
    boxes = []
    for k in range(16):
        tx, ty = (k % 4) * 256, (k // 4) * 256
        boxes.append(box_at(tx + rng.uniform(20, 236), ty + rng.uniform(20, 236), 8, confidence=0.9))
    ann = annotation_set(boxes, 1024, 1024)
    tiled = split_annotations(ann, 256)
    assert [len(s) for _, s in tiled] == [1] * 16
    merged = merge_tiles("img", 1024, 1024, tiled)
    key = lambda b: b.coords
    assert sorted(merged.boxes, key=key) == pytest.approx(sorted(boxes, key=key))


def test_split_clips_boxes_crossing_tiles():
    ann = annotation_set([BoundingBox2D(90, 10, 120, 20, confidence=0.5)], 200, 200)
    tiled = split_annotations(ann, 100)
    (tile, s), = [(t, s) for t, s in tiled if len(s)]
    assert (tile.x0, tile.y0) == (100, 0)
    assert s[0].coords == (0, 10, 20, 20)


def test_json_round_trip(tmp_path):
    ann = annotation_set([box_at(30, 40, confidence=0.25, track_id="7"), box_at(100, 120, annotator="A1")])
    p = save_annotations(ann, tmp_path / "a.json")
    assert load_annotations(p) == ann
    assert json.loads(p.read_text())["boxes"][0]["track_id"] == "7"


def test_csv_named_columns(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("image,x,y,width,height,score\nimg1,10,20,5,6,0.9\nimg1,50,50,10,10,0.2\nimg2,1,1,2,2,0.5\n")
    table = load_annotation_table(p, {"image": "image", "x": "x", "y": "y", "width": "width", "height": "height",
                                      "confidence": "score"}, image_sizes=(100, 100))
    assert sorted(table) == ["img1", "img2"]
    assert table["img1"][0].coords == (10, 20, 15, 26)
    assert table["img1"][1].confidence == 0.2


def test_csv_default_header_and_positional(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("x1,y1,x2,y2,confidence\n1,2,3,4,0.5\n")
    ann = load_annotations(p, width=10, height=10)
    assert ann[0].coords == (1, 2, 3, 4) and ann[0].confidence == 0.5
    q = tmp_path / "pos.csv"
    q.write_text("img,0,0,4,4\nimg,5,5,9,9\n")
    ann = load_annotations(q, {"image": 0, "x1": 1, "y1": 2, "x2": 3, "y2": 4}, width=10, height=10)
    assert len(ann) == 2 and ann.image == "img"


def test_csv_schema_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,y1,x2,y2\n1,2,zero,4\n")
    with pytest.raises(SchemaError, match="record 1"):
        load_annotations(p, width=10, height=10)
    p.write_text("x1,y1,x2,y2\n1,2,30,4\n")
    with pytest.raises(RangeError):
        load_annotations(p, width=10, height=10)


def test_box_statistics(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("image,x1,y1,x2,y2\na,0,0,10,20\nb,0,0,30,40\nb,5000,5000,5010,5010\n")
    records = read_box_records(p)
    assert len(records) == 3
    stats = box_statistics(b for _, b in records)
    assert stats == {"count": 3, "mean_width": pytest.approx(50 / 3), "mean_height": pytest.approx(70 / 3)}
