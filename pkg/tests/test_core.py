import numpy as np
import pytest
from hypothesis import given, strategies as st

from odamot.core import BBox, Detection, clip_boxes, clip_to_frame, iou, iou_matrix
from odamot.errors import EmptyBox

coord = st.floats(-500, 500, allow_nan=False)
side = st.floats(0.01, 300, allow_nan=False)
boxes = st.builds(BBox, coord, coord, side, side)


def test_bbox_rejects_degenerate():
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BBox(0, 0, 5, -1)
    with pytest.raises(ValueError):
        BBox(float("nan"), 0, 5, 5)


def test_detection_score_range():
    Detection(BBox(0, 0, 1, 1), 1.0)
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), 1.5)


def test_iou_examples():
    a = BBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 5, 1, 1)) == 0.0
    # inter 2, union 6
    assert iou(a, BBox(1, 0, 2, 2)) == pytest.approx(1 / 3, abs=1e-15)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    q = iou(a, b)
    assert q == iou(b, a)
    assert 0.0 <= q <= 1.0


@given(boxes)
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(st.lists(boxes, min_size=1, max_size=6), st.lists(boxes, min_size=1, max_size=6))
def test_iou_matrix_matches_scalar(aa, bb):
    M = iou_matrix(np.array([a.to_array() for a in aa]), np.array([b.to_array() for b in bb]))
    for i, a in enumerate(aa):
        for j, b in enumerate(bb):
            assert M[i, j] == pytest.approx(iou(a, b), abs=1e-12)


def test_clip_to_frame():
    inside = BBox(10, 10, 20, 20)
    assert clip_to_frame(inside, 100, 100) == inside
    assert clip_to_frame(BBox(-5, 0, 10, 10), 100, 100) == BBox(0, 0, 5, 10)
    with pytest.raises(EmptyBox):
        clip_to_frame(BBox(200, 200, 10, 10), 100, 100)


def test_clip_boxes_mask():
    b = np.array([[-5, 0, 10, 10], [200, 200, 10, 10]], dtype=float)
    out, ok = clip_boxes(b, 100, 100)
    assert ok.tolist() == [True, False]
    assert out[0].tolist() == [0, 0, 5, 10]


def test_ltrb_roundtrip():
    b = BBox(100, 50, 80, 70)
    assert b.ltrb() == (100, 50, 180, 120)
    assert BBox.from_ltrb(*b.ltrb()) == b
