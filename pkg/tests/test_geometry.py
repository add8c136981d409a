import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import nms_reference, pair_iou
from segevery.geometry import Box, Point, ScoredBox, box_area, box_center, box_iou, nms


@pytest.mark.parametrize("box, area", [((0, 0, 0, 0), 0), ((0, 0, 2, 2), 4), ((1, 3, 4, 5), 6)])
def test_box_area(box, area):
    assert box_area(Box(*box)) == area


def test_box_iou_examples():
    assert box_iou(Box(0, 0, 2, 2), Box(0, 0, 2, 2)) == 1.0
    assert box_iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0
    assert box_iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
    assert box_iou(Box(1, 1, 1, 1), Box(1, 1, 1, 1)) == 0.0


@pytest.mark.parametrize("box, center", [((0, 0, 2, 2), (1, 1)), ((0, 0, 0, 0), (0, 0)), ((1, 3, 4, 5), (2.5, 4))])
def test_box_center(box, center):
    assert box_center(Box(*box)) == Point(*center)


def test_box_rejects_bad_corners():
    with pytest.raises(ValueError):
        Box(2, 0, 1, 1)
    with pytest.raises(ValueError):
        Box(0, 0, math.nan, 1)
    with pytest.raises(ValueError):
        ScoredBox(Box(0, 0, 1, 1), 1.5)
    with pytest.raises(ValueError):
        Point(math.inf, 0)


def test_xywh_conversion():
    assert Box.from_xywh(1, 3, 3, 2) == Box(1, 3, 4, 5)
    assert Box(1, 3, 4, 5).to_xywh() == [1, 3, 3, 2]


def test_nms_examples():
    assert nms([], 0.7) == []
    assert nms([ScoredBox(Box(0, 0, 1, 1), 0.3)], 0.7) == [0]
    same = [ScoredBox(Box(0, 0, 4, 4), 0.8), ScoredBox(Box(0, 0, 4, 4), 0.9)]
    assert nms(same, 0.7) == [1]


def test_nms_ties_go_to_lower_index():
    boxes = [ScoredBox(Box(0, 0, 4, 4), 0.5), ScoredBox(Box(0, 0, 4, 4), 0.5)]
    assert nms(boxes, 0.5) == [0]


def test_nms_uses_strict_inequality():
    a, b = Box(0, 0, 2, 2), Box(1, 0, 3, 2)  # IoU exactly 1/3
    cands = [ScoredBox(a, 0.9), ScoredBox(b, 0.8)]
    assert nms(cands, box_iou(a, b)) == [0, 1]
    assert nms(cands, 0.3) == [0]


coord = st.integers(0, 40).map(float)


@st.composite
def scored_boxes(draw, max_size=30):
    n = draw(st.integers(0, max_size))
    out = []
    for _ in range(n):
        x0, y0 = draw(coord), draw(coord)
        w, h = draw(st.integers(0, 20)), draw(st.integers(0, 20))
        score = draw(st.sampled_from([0.1, 0.25, 0.5, 0.75, 0.9, 1.0]))
        out.append(ScoredBox(Box(x0, y0, x0 + w, y0 + h), score))
    return out


def _arrays(cands):
    return [c.box.as_tuple() for c in cands], [c.score for c in cands]


@given(scored_boxes(), st.sampled_from([0.0, 0.3, 0.5, 0.7, 1.0]))
def test_nms_matches_quadratic_reference(cands, thr):
    boxes, scores = _arrays(cands)
    assert nms(cands, thr) == nms_reference(boxes, scores, thr)


@given(scored_boxes())
def test_nms_threshold_one_keeps_everything(cands):
    assert sorted(nms(cands, 1.0)) == list(range(len(cands)))


@given(scored_boxes())
def test_nms_threshold_zero_keeps_disjoint_boxes(cands):
    kept = nms(cands, 0.0)
    for i in kept:
        for j in kept:
            if i != j:
                assert box_iou(cands[i].box, cands[j].box) == 0.0


@given(scored_boxes(), st.sampled_from([0.3, 0.7]))
def test_nms_invariant_under_monotone_score_transform(cands, thr):
    squashed = [ScoredBox(c.box, c.score ** 3) for c in cands]
    assert nms(cands, thr) == nms(squashed, thr)


box_st = st.builds(
    lambda x, y, w, h: Box(x, y, x + w, y + h),
    st.floats(0, 50, allow_nan=False), st.floats(0, 50, allow_nan=False),
    st.floats(0, 30, allow_nan=False), st.floats(0, 30, allow_nan=False),
)


@given(box_st, box_st)
def test_box_iou_symmetric_bounded(a, b):
    v = box_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == box_iou(b, a)
    assert v == pytest.approx(pair_iou(a.as_tuple(), b.as_tuple()), abs=1e-12)


@given(box_st)
def test_box_iou_identity_iff_nondegenerate(a):
    assert box_iou(a, a) == (1.0 if box_area(a) > 0 else 0.0)


def test_nms_random_large_inputs_against_reference():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(0, 200))
        xy = rng.uniform(0, 100, size=(n, 2))
        wh = rng.uniform(0, 30, size=(n, 2))
        scores = rng.random(n).round(2)
        cands = [ScoredBox(Box(x, y, x + w, y + h), s) for (x, y), (w, h), s in zip(xy, wh, scores)]
        boxes, sc = _arrays(cands)
        assert nms(cands, 0.5) == nms_reference(boxes, sc, 0.5)
