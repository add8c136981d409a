import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import dense_box, dense_iou, polygon_pixels_reference
from segevery.errors import DimensionMismatchError, MalformedRleError, PolygonError
from segevery.geometry import Box, Point
from segevery.mask import (
    Rle,
    binarize,
    canonicalize,
    coco_rle_from_string,
    coco_rle_to_string,
    mask_to_box,
    polygon_rasterize,
    rle_area,
    rle_decode,
    rle_encode,
    rle_iou,
)

GOLDEN = json.loads((Path(__file__).parent / "fixtures" / "coco_golden.json").read_text())

# (row1, col0) and (row0, col1) set: column-major scan gives 0,1,1,0
DIAG = np.array([[0, 1], [1, 0]], dtype=bool)


def test_encode_examples():
    assert rle_encode(np.zeros((2, 2), bool)).counts == (4,)
    assert rle_encode(np.ones((2, 2), bool)).counts == (0, 4)
    assert rle_encode(DIAG).counts == (1, 2, 1)


def test_decode_examples():
    assert not rle_decode(Rle(2, 2, (4,))).any()
    np.testing.assert_array_equal(rle_decode(Rle(2, 2, (1, 2, 1))), DIAG)
    with pytest.raises(MalformedRleError):
        Rle(2, 2, (2, 3))


def test_decode_accepts_noncanonical_runs():
    r = Rle(2, 2, (1, 1, 0, 1, 1))
    np.testing.assert_array_equal(rle_decode(r), DIAG)
    assert canonicalize(r) == Rle(2, 2, (1, 2, 1))
    assert not r.is_canonical()


@pytest.mark.parametrize("counts, area", [((4,), 0), ((0, 4), 4), ((1, 2, 1), 2)])
def test_rle_area_examples(counts, area):
    assert rle_area(Rle(2, 2, counts)) == area


def test_rle_iou_examples():
    a = rle_encode(DIAG)
    assert rle_iou(a, a) == 1.0
    assert rle_iou(a, rle_encode(~DIAG)) == 0.0
    assert rle_iou(Rle(2, 2, (4,)), Rle(2, 2, (4,))) == 0.0
    with pytest.raises(DimensionMismatchError):
        rle_iou(a, Rle(3, 2, (6,)))


def test_rle_iou_random_16x16_against_dense():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.random((16, 16)) < 0.4, rng.random((16, 16)) < 0.6
        assert rle_iou(rle_encode(a), rle_encode(b)) == dense_iou(a, b)


def test_mask_to_box_examples():
    assert mask_to_box(Rle(2, 2, (4,))) is None
    one = np.zeros((2, 2), bool)
    one[0, 0] = True
    assert mask_to_box(rle_encode(one)) == Box(0, 0, 1, 1)
    assert mask_to_box(rle_encode(DIAG)) == Box(0, 0, 2, 2)


def test_polygon_square():
    sq = [Point(0, 0), Point(4, 0), Point(4, 4), Point(0, 4)]
    m = polygon_rasterize(sq, 8, 8)
    assert m.sum() == 16 and m[:4, :4].all()


def test_polygon_needs_three_vertices():
    with pytest.raises(PolygonError):
        polygon_rasterize([Point(0, 0), Point(1, 1)], 8, 8)


def test_polygon_triangle_against_per_pixel_oracle():
    verts = [(0, 0), (8, 0), (0, 8)]
    m = polygon_rasterize([Point(*v) for v in verts], 8, 8)
    ref = polygon_pixels_reference(verts, 8, 8)
    np.testing.assert_array_equal(m, ref)
    # Centers with x + y < 8 lie strictly inside; x + y = 8 lies on the hypotenuse.
    assert m.sum() == 28


@pytest.mark.parametrize("seed", range(60))
def test_polygon_random_against_per_pixel_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    verts = [tuple(v) for v in (rng.integers(-4, 28, size=(n, 2)) / 2.0)]
    m = polygon_rasterize([Point(*v) for v in verts], 12, 10)
    np.testing.assert_array_equal(m, polygon_pixels_reference(verts, 12, 10))


def test_binarize_examples():
    assert not binarize(np.zeros((3, 3)), 0.5).any()
    assert binarize(np.ones((3, 3)), 0.5).all()
    soft = np.array([[0.2, 0.6], [0.6, 0.2]])
    np.testing.assert_array_equal(binarize(soft, 0.5), soft == 0.6)


@given(arrays(np.float64, (5, 7), elements=st.floats(0, 1)), st.floats(0, 1), st.floats(0, 1))
def test_binarize_monotone(soft, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    assert not (binarize(soft, hi) & ~binarize(soft, lo)).any()


masks = st.integers(1, 24).flatmap(
    lambda h: st.integers(1, 24).flatmap(lambda w: arrays(np.bool_, (h, w)))
)


@given(masks)
def test_encode_decode_roundtrip(m):
    r = rle_encode(m)
    assert r.is_canonical()
    np.testing.assert_array_equal(rle_decode(r), m)
    assert rle_encode(rle_decode(r)) == r
    assert rle_area(r) == int(m.sum())
    assert mask_to_box(r) == (None if dense_box(m) is None else Box(*dense_box(m)))


@given(masks.flatmap(lambda m: st.tuples(st.just(m), arrays(np.bool_, m.shape))))
def test_rle_iou_equals_dense_iou(pair):
    a, b = pair
    assert rle_iou(rle_encode(a), rle_encode(b)) == dense_iou(a, b)


@given(masks)
def test_string_codec_roundtrip(m):
    r = rle_encode(m)
    assert coco_rle_from_string(coco_rle_to_string(r), r.width, r.height) == r


@pytest.mark.parametrize("vec", GOLDEN, ids=[v["name"] for v in GOLDEN])
def test_golden_vectors(vec):
    m = np.array([[c == "1" for c in row] for row in vec["rows"]], dtype=bool)
    h, w = vec["size"]
    r = rle_encode(m)
    assert coco_rle_to_string(r) == vec["counts"]
    assert coco_rle_from_string(vec["counts"], w, h) == r
    assert r.area == vec["area"]
    box = mask_to_box(r)
    assert (box.to_xywh() if box else [0.0, 0.0, 0.0, 0.0]) == vec["bbox"]


def test_string_decoder_errors():
    with pytest.raises(MalformedRleError):
        coco_rle_from_string("", 2, 2)
    with pytest.raises(MalformedRleError):
        coco_rle_from_string("4!", 2, 2)
    with pytest.raises(MalformedRleError):
        coco_rle_from_string("a", 2, 2)  # continuation bit set on the last chunk
    with pytest.raises(MalformedRleError):
        coco_rle_from_string("5", 2, 2)  # sums to 5, not 4


def test_empty_mask_string_for_any_size():
    for w, h in [(1, 1), (5, 4), (640, 480)]:
        r = Rle(w, h, (w * h,))
        assert coco_rle_from_string(coco_rle_to_string(r), w, h) == r
