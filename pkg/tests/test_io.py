import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segevery.errors import FormatError, SegEveryError, VersionMismatchError
from segevery.geometry import Box, ScoredBox
from segevery.io import (
    ProposalSet,
    dataset_from_ground_truth,
    dumps,
    export_proposals,
    load_dataset,
    load_detections,
    load_proposals,
    load_scene,
    load_scenes,
    proposal_sets,
    read_json,
    save_dataset,
    save_detections,
    save_scene,
    scene_to_json,
)
from segevery.filtering import MaskProposal
from segevery.mask import coco_rle_to_string, rle_encode
from segevery.scene import SceneParams, generate_scene, rasterize_ground_truth

SMALL = SceneParams(64, 64, (2, 6), part_probability=0.6, min_object_area=30)


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


def square(x0, y0, x1, y1, w=8, h=8):
    m = np.zeros((h, w), bool)
    m[y0:y1, x0:x1] = True
    return rle_encode(m)


def test_canonical_dumps():
    assert dumps({"b": 1, "a": 0.1234567891}, indent=None) == '{"a":0.123457,"b":1}\n'
    assert dumps([-0.0, 1e-9, np.float32(0.5), np.int64(3)], indent=None) == "[0.0,1e-09,0.5,3]\n"
    with pytest.raises(SegEveryError):
        dumps(float("nan"))


def test_read_json_reports_byte_offset(tmp_path):
    p = write(tmp_path, "bad.json", '{"é": [1, 2,, 3]}')
    with pytest.raises(FormatError) as err:
        read_json(p)
    assert "byte 13" in str(err.value)  # char 12; the accent takes two bytes


def test_dataset_polygon_and_rle_forms(tmp_path):
    doc = {
        "images": [{"id": 7, "width": 8, "height": 8}],
        "annotations": [
            {"id": 1, "image_id": 7, "bbox": [1, 3, 3, 2], "area": 6,
             "segmentation": [[1, 3, 4, 3, 4, 5, 1, 5]]},
            {"id": 2, "image_id": 7, "bbox": [0, 0, 2, 2], "area": 4,
             "segmentation": {"size": [8, 8], "counts": coco_rle_to_string(square(0, 0, 2, 2))}},
            {"id": 3, "image_id": 7, "bbox": [5, 5, 2, 2], "area": 4,
             "segmentation": {"size": [8, 8], "counts": list(square(5, 5, 7, 7).counts)}},
            {"id": 4, "image_id": 7, "bbox": [0, 0, 8, 8], "area": 64, "iscrowd": 1,
             "segmentation": {"size": [8, 8], "counts": [0, 64]}},
            {"id": 5, "image_id": 7, "bbox": [0, 0, 0, 0], "area": 0, "segmentation": [[0, 0, 1, 0, 1, 1]]},
        ],
    }
    idx = load_dataset(write(tmp_path, "gt.json", doc))
    assert idx.annotations[0].bbox == Box(1, 3, 4, 5)
    assert (idx.dropped_crowd, idx.dropped_zero_area) == (1, 1)
    gt = idx.ground_truth(7)
    assert [e.area for e in gt.entries] == [6, 4, 4]
    assert gt.entries[0].visible_mask == square(1, 3, 4, 5)
    # save -> load keeps every segmentation form
    out = tmp_path / "again.json"
    save_dataset(idx, out)
    again = load_dataset(out)
    assert [a.rle_form for a in again.annotations] == ["polygon", "string", "counts"]
    assert again.ground_truths() == idx.ground_truths()


@pytest.mark.parametrize("bad, needle", [
    ({"images": [{"id": 1, "width": 8}]}, "images[0]"),
    ({"images": [{"id": 1, "width": 8, "height": 8}],
      "annotations": [{"image_id": 2, "bbox": [0, 0, 1, 1], "area": 1, "segmentation": []}]}, "unknown image_id"),
    ({"images": [{"id": 1, "width": 8, "height": 8}],
      "annotations": [{"image_id": 1, "bbox": [0, 0, 1, 1], "area": 1,
                       "segmentation": {"size": [4, 4], "counts": [16]}}]}, "does not match"),
    ({"images": [{"id": 1, "width": 8, "height": 8}],
      "annotations": [{"image_id": 1, "bbox": [0, 0, -1, 1], "area": 1, "segmentation": []}]}, "annotations[0]"),
])
def test_dataset_errors_name_the_record(tmp_path, bad, needle):
    with pytest.raises(FormatError) as err:
        load_dataset(write(tmp_path, "gt.json", bad))
    assert needle in str(err.value)


def test_detection_lines(tmp_path):
    p = write(tmp_path, "d.jsonl", '{"image_id": 3, "bbox": [10, 20, 30, 40], "score": 0.9}\n\n')
    assert load_detections(p) == {3: [ScoredBox(Box(10, 20, 40, 60), 0.9)]}
    bad = write(tmp_path, "bad.jsonl", '{"image_id": 3, "bbox": [0, 0, 1, 1], "score": 0.5}\n'
                                       '{"image_id": 3, "bbox": [0, 0, 1, 1], "score": 1.5}\n')
    with pytest.raises(FormatError) as err:
        load_detections(bad)
    assert "line 2" in str(err.value)


def test_detections_roundtrip(tmp_path):
    dets = {0: [ScoredBox(Box(1, 2, 3, 4), 0.25)], 5: [ScoredBox(Box(0, 0, 10, 10), 1.0)]}
    save_detections(dets, tmp_path / "d.jsonl")
    assert load_detections(tmp_path / "d.jsonl") == dets


def _records():
    props = [MaskProposal.from_mask(square(0, 0, 3, 3), 0.5, granularity="small", source_prompt_index=2),
             MaskProposal.from_mask(square(2, 2, 6, 6), 0.9)]
    return [ProposalSet(1, props), ProposalSet(0, props[:1])]


def test_proposals_export_load_export_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    export_proposals(_records(), a)
    loaded = load_proposals(a)
    assert [p.score for p in loaded[1]] == [0.9, 0.5]
    assert loaded[1][1].granularity == "small" and loaded[1][1].source_prompt_index == 2
    export_proposals(proposal_sets(loaded), b)
    assert a.read_bytes() == b.read_bytes()


def test_empty_proposals(tmp_path):
    export_proposals([], tmp_path / "p.json")
    assert (tmp_path / "p.json").read_text() == "[]\n"
    assert load_proposals(tmp_path / "p.json") == {}


def test_proposal_errors(tmp_path):
    with pytest.raises(FormatError):
        load_proposals(write(tmp_path, "p.json", {"image_id": 1}))
    empty = [{"image_id": 1, "segmentation": {"size": [2, 2], "counts": [4]}, "score": 0.1}]
    with pytest.raises(FormatError) as err:
        load_proposals(write(tmp_path, "e.json", empty))
    assert "[0]" in str(err.value)


@given(st.integers(0, 500))
def test_scene_roundtrip(tmp_path_factory, seed):
    s = generate_scene(seed, SMALL)
    p = tmp_path_factory.mktemp("scene") / "scene_00000.json"
    save_scene(s, p)
    assert load_scene(p) == s
    assert rasterize_ground_truth(load_scene(p)) == rasterize_ground_truth(s)


def test_scene_version_and_shape_errors(tmp_path):
    doc = scene_to_json(generate_scene(1, SMALL))
    with pytest.raises(VersionMismatchError):
        load_scene(write(tmp_path, "v.json", {**doc, "version": 2}))
    broken = {**doc, "roots": [{"id": 0, "depth": 0, "shape": {"kind": "star"}, "children": []}]}
    with pytest.raises(FormatError):
        load_scene(write(tmp_path, "s.json", broken))


def test_load_scenes_sorted(tmp_path):
    for i in (2, 0, 1):
        save_scene(generate_scene(i, SMALL), tmp_path / f"scene_{i:05d}.json")
    (tmp_path / "other.json").write_text("{}")
    assert [s.seed for s in load_scenes(tmp_path)] == [0, 1, 2]


def test_dataset_from_ground_truth_roundtrip(tmp_path):
    gts = {i: rasterize_ground_truth(generate_scene(i, SMALL)) for i in range(3)}
    save_dataset(dataset_from_ground_truth(gts), tmp_path / "gt.json")
    loaded = load_dataset(tmp_path / "gt.json").ground_truths()
    for i in gts:
        assert [e.visible_mask for e in loaded[i].entries] == [e.visible_mask for e in gts[i].entries]
