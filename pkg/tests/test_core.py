import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmmtube.core import BBox, GroundTruthTube, Tube, interpolate_box, interpolate_gaps, iou, tube_iou_3d
from qmmtube.formats import (
    SchemaError,
    read_detections,
    read_gt,
    read_tubes,
    write_detections,
    write_gt,
    write_tubes,
)

from conftest import det

coord = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)
extent = st.floats(min_value=0.5, max_value=500, allow_nan=False)


@st.composite
def boxes(draw):
    x, y, w, h = draw(coord), draw(coord), draw(extent), draw(extent)
    return BBox(x, y, x + w, y + h)


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, BBox(0, 0, 10, 10)) == 1.0
    assert iou(a, BBox(20, 20, 30, 30)) == 0.0
    assert iou(a, BBox(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)


def test_touching_boxes_do_not_overlap():
    assert iou(BBox(0, 0, 10, 10), BBox(10, 0, 20, 10)) == 0.0


@pytest.mark.parametrize("bad", [(0, 0, 0, 10), (5, 0, 1, 10), (0, 3, 10, 3)])
def test_degenerate_box_rejected(bad):
    with pytest.raises(ValueError):
        BBox(*bad)


@settings(max_examples=300, deadline=None)
@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(boxes(), st.floats(min_value=0.0, max_value=1e3))
def test_iou_zero_iff_disjoint_interiors(a, gap):
    shifted = BBox(a.x2 + gap, a.y1, a.x2 + gap + a.width, a.y2)
    assert iou(a, shifted) == 0.0


def test_tube_iou_3d_examples():
    box = BBox(0, 0, 10, 10)
    a = {t: box for t in range(10)}
    b = {t: box for t in range(5, 15)}
    assert tube_iou_3d(a, a, "union") == 1.0
    assert tube_iou_3d(a, a, "restrict_to_first") == 1.0
    assert tube_iou_3d(a, b, "union") == pytest.approx(1 / 3, abs=1e-15)
    assert tube_iou_3d(a, b, "restrict_to_first") == pytest.approx(0.5, abs=1e-15)


def test_tube_iou_3d_errors():
    with pytest.raises(ValueError):
        tube_iou_3d({}, {0: BBox(0, 0, 1, 1)})
    with pytest.raises(ValueError):
        tube_iou_3d({0: BBox(0, 0, 1, 1)}, {0: BBox(0, 0, 1, 1)}, "intersection")


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.integers(0, 20), boxes(), min_size=1, max_size=8),
       st.dictionaries(st.integers(0, 20), boxes(), min_size=1, max_size=8))
def test_tube_iou_3d_union_symmetric(a, b):
    assert tube_iou_3d(a, b) == pytest.approx(tube_iou_3d(b, a), abs=1e-15)
    assert tube_iou_3d(a, a) == pytest.approx(1.0, abs=1e-12)


def test_interpolate_examples():
    a, b = BBox(0, 0, 10, 10), BBox(10, 10, 20, 20)
    assert interpolate_box(a, b, 0.0) == a
    assert interpolate_box(a, b, 1.0) == b
    assert interpolate_box(a, b, 0.5) == BBox(5, 5, 15, 15)


@settings(max_examples=200, deadline=None)
@given(boxes(), boxes(), st.floats(min_value=0.0, max_value=1.0))
def test_interpolate_preserves_validity(a, b, alpha):
    c = interpolate_box(a, b, alpha)
    assert c.x1 < c.x2 and c.y1 < c.y2


def test_interpolate_gaps_fills_linearly():
    filled = interpolate_gaps({0: BBox(0, 0, 10, 10), 4: BBox(8, 0, 18, 10)})
    assert sorted(filled) == [0, 1, 2, 3, 4]
    assert filled[2] == BBox(4, 0, 14, 10)


def test_tube_invariants():
    with pytest.raises(ValueError):
        Tube(0, 1, 0.5, {})
    with pytest.raises(ValueError):
        Tube(0, 1, 1.5, {0: BBox(0, 0, 1, 1)})


# -- file formats -----------------------------------------------------------------

def test_detection_round_trip_keeps_float64(tmp_path):
    rng = np.random.default_rng(0)
    recs = [det(t, box=tuple(np.cumsum(rng.uniform(1, 50, 4))), person=float(rng.uniform()),
                query=tuple(rng.standard_normal(3)), gt_person=t % 2) for t in range(5)]
    path = tmp_path / "d.jsonl"
    write_detections(path, recs, header={"tool": "x"})
    back = read_detections(path)
    for a, b in zip(recs, back):
        assert a.box == b.box
        np.testing.assert_array_equal(a.query, b.query)
        np.testing.assert_array_equal(a.class_scores, b.class_scores)
        assert (a.gt_person, a.gt_action) == (b.gt_person, b.gt_action)


def test_gt_and_tube_round_trip(tmp_path):
    g = GroundTruthTube(3, {2: (BBox(0.1, 0.2, 3.3, 4.4), 1), 0: (BBox(1, 1, 2, 2), 5)})
    assert g.frames == [0, 2]
    write_gt(tmp_path / "g.jsonl", [g])
    (g2,) = read_gt(tmp_path / "g.jsonl")
    assert g2 == g
    t = Tube(1, 2, 0.123456789012345678, {5: BBox(0, 0, 1, 1), 3: BBox(1, 1, 2, 2)})
    write_tubes(tmp_path / "t.jsonl", [t])
    (t2,) = read_tubes(tmp_path / "t.jsonl")
    assert t2 == t and list(t2.boxes) == [3, 5]


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "d.jsonl"
    write_detections(path, [det(0), det(1)], header={"tool": "x"})
    with open(path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(SchemaError) as info:
        read_detections(path)
    assert info.value.line == 4


def test_unsorted_and_inconsistent_streams_rejected(tmp_path):
    path = tmp_path / "d.jsonl"
    write_detections(path, [det(2), det(1)])
    with pytest.raises(SchemaError, match="sorted"):
        read_detections(path)
    write_detections(path, [det(0), det(1, query=(1.0, 0.0, 0.0))])
    with pytest.raises(SchemaError, match="length"):
        read_detections(path)
    path.write_text(json.dumps({"frame": 0, "box": [0, 0, 0, 1], "scores": [1], "query": [1]}) + "\n")
    with pytest.raises(SchemaError, match="degenerate"):
        read_detections(path)
