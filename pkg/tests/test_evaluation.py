import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import greedy_match_reference
from segevery.errors import AlignmentError, DimensionMismatchError
from segevery.evaluation import (
    BUCKETS,
    EvalConfig,
    _greedy_prefix_counts,
    evaluate_proposals,
    mask_ar_at_k,
    match_greedy,
    tally_image,
)
from segevery.filtering import MaskProposal
from segevery.mask import rle_encode
from segevery.scene import GroundTruth, GtEntry, SceneParams, generate_scene, rasterize_ground_truth


def rect(x0, y0, x1, y1, w=64, h=64):
    m = np.zeros((h, w), bool)
    m[y0:y1, x0:x1] = True
    return rle_encode(m)


def gt_entry(i, r):
    return GtEntry(i, r, r.box, r.area)


def prop(r, score):
    return MaskProposal.from_mask(r, score)


def test_single_partial_match_gives_half_recall():
    gt = [gt_entry(0, rect(0, 0, 10, 10))]
    p = [prop(rect(0, 0, 9, 8), 0.9)]  # IoU 72/100
    assert mask_ar_at_k([(p, gt)], 1) == pytest.approx(0.5)


def test_perfect_and_empty():
    g = rect(5, 5, 20, 20)
    gt = [gt_entry(0, g)]
    assert mask_ar_at_k([([prop(g, 0.3)], gt)], 10) == 1.0
    assert mask_ar_at_k([([], gt)], 10) == 0.0
    assert mask_ar_at_k([([prop(g, 0.3)], [])], 10) == 0.0


def test_greedy_takes_higher_score_first():
    a, b = rect(0, 0, 10, 10), rect(0, 0, 10, 8)
    gts = [gt_entry(0, a)]
    # The lower-score exact match arrives second and finds the GT taken.
    assert match_greedy([prop(b, 0.9), prop(a, 0.5)], gts, 0.75) == 1
    assert match_greedy([prop(b, 0.9)], gts, 0.85) == 0


def test_k_limits_proposals():
    gts = [gt_entry(i, rect(10 * i, 0, 10 * i + 8, 8)) for i in range(4)]
    props = [prop(g.visible_mask, 1 - i / 10) for i, g in enumerate(gts)]
    assert mask_ar_at_k([(props, gts)], 2) == 0.5
    assert mask_ar_at_k([(props, gts)], 4) == 1.0


def test_prefix_counts_against_double_loop():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, m = int(rng.integers(0, 9)), int(rng.integers(0, 9))
        ious = np.round(rng.random((n, m)), 1)  # coarse values force ties
        t = float(rng.choice([0.3, 0.5, 0.7]))
        counts = _greedy_prefix_counts(ious, t)
        for r in range(n):
            assert counts[r] == greedy_match_reference(ious[: r + 1], t)


def test_bucket_assignment_edges():
    cfg = EvalConfig()
    assert cfg.bucket_of(1023) == "small"
    assert cfg.bucket_of(1024) == "medium"
    assert cfg.bucket_of(9215) == "medium"
    assert cfg.bucket_of(9216) == "large"


def test_out_of_bucket_gt_removed_before_matching():
    big = rect(0, 0, 40, 40, 128, 128)  # area 1600: medium
    small = rect(0, 0, 10, 10, 128, 128)  # area 100: small, inside big
    gts = [gt_entry(0, big), gt_entry(1, small)]
    counts = tally_image([prop(small, 0.9)], gts, EvalConfig(), [10])
    assert counts.matched["small"][0].tolist() == [1] * 10
    assert counts.matched["medium"][0].tolist() == [0] * 10
    assert counts.gt == {"all": 2, "small": 1, "medium": 1, "large": 0}


def _random_image(seed, level):
    scene = generate_scene(seed, SceneParams(128, 128, (3, 12), part_probability=0.6, min_object_area=30))
    gt = rasterize_ground_truth(scene, level)
    rng = np.random.default_rng(seed)
    props = []
    for e in gt.entries:
        if rng.random() < 0.8:
            b = e.box
            x0, y0 = int(b.x_min) + int(rng.integers(0, 2)), int(b.y_min)
            props.append(prop(rect(x0, y0, max(int(b.x_max), x0 + 1), int(b.y_max), 128, 128), float(rng.random())))
    return props, gt


@pytest.mark.parametrize("seed", range(8))
def test_bucket_counts_sum_to_all_on_disjoint_gt(seed):
    props, gt = _random_image(seed, "roots_only")
    counts = tally_image(props, gt.entries, EvalConfig(), [1, 5, 100])
    by_bucket = sum(counts.matched[b] for b in ("small", "medium", "large"))
    assert (by_bucket <= counts.matched["all"]).all()
    # Above 0.5 a proposal can clear the threshold for at most one disjoint GT.
    assert (by_bucket[:, 1:] == counts.matched["all"][:, 1:]).all()


@pytest.mark.parametrize("seed", range(8))
def test_ar_monotone_in_k(seed):
    props, gt = _random_image(seed, "all_nodes")
    cfg = EvalConfig(k_values=(1, 2, 3, 5, 8, 13, 100))
    rep = evaluate_proposals({0: props}, {0: gt}, cfg)
    for b in BUCKETS:
        vals = [rep.per_k[k][b] for k in cfg.k_values]
        assert vals == sorted(vals)
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert rep.average_over_k[b] == pytest.approx(np.mean(vals))


@given(st.integers(0, 50), st.floats(0.01, 10))
def test_score_rescaling_does_not_change_ar(seed, factor):
    props, gt = _random_image(seed, "all_nodes")
    scaled = [MaskProposal.from_mask(p.mask, p.score * factor) for p in props]
    a = evaluate_proposals({0: props}, {0: gt}).to_dict()
    b = evaluate_proposals({0: scaled}, {0: gt}).to_dict()
    assert a == b


def test_mask_ar_matches_report():
    images = [_random_image(s, "all_nodes") for s in range(4)]
    rep = evaluate_proposals({i: p for i, (p, _) in enumerate(images)}, {i: g for i, (_, g) in enumerate(images)})
    for k in (10, 100):
        assert mask_ar_at_k([(p, g.entries) for p, g in images], k) == pytest.approx(rep.per_k[k]["all"])


def test_pooling_weights_images_by_gt_count():
    one = [gt_entry(0, rect(0, 0, 8, 8))]
    three = [gt_entry(i, rect(10 * i, 20, 10 * i + 8, 28)) for i in range(3)]
    images = [([prop(one[0].visible_mask, 1.0)], one), ([], three)]
    assert mask_ar_at_k(images, 10) == 0.25


def test_alignment_and_dimension_errors():
    gt = GroundTruth(64, 64, (gt_entry(0, rect(0, 0, 4, 4)),))
    with pytest.raises(AlignmentError):
        evaluate_proposals({1: []}, {0: gt})
    with pytest.raises(DimensionMismatchError):
        evaluate_proposals({0: [prop(rect(0, 0, 4, 4, 32, 32), 0.5)]}, {0: gt})


def test_report_rendering():
    gt = GroundTruth(64, 64, (gt_entry(0, rect(0, 0, 4, 4)),))
    rep = evaluate_proposals({0: [prop(rect(0, 0, 4, 4), 0.5)]}, {0: gt}, EvalConfig(k_values=(1, 10)))
    md = rep.to_markdown("oa")
    assert "| mask AR@10 | oa | 100.0 | 100.0 | 0.0 | 0.0 |" in md
    assert md.index("AR@10") < md.index("AR@1 ")
    d = rep.to_dict()
    assert set(d["per_k"]) == {"1", "10"} and d["gt_counts"]["small"] == 1


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(k_values=(100, 10))
    with pytest.raises(ValueError):
        EvalConfig(iou_thresholds=(0.0, 0.5))
