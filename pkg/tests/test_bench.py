import csv
import io

import pytest

from segevery.bench import BenchConfig, ablate_max_prompts, compare_strategies, scene_detections
from segevery.decode import DecoderConfig
from segevery.io import dumps
from segevery.plotting import plot_ablation, plot_compare
from segevery.scene import DetectorNoise, SceneParams, generate_scene

PARAMS = SceneParams(96, 96, (3, 8), part_probability=0.5, min_object_area=30)


@pytest.fixture(scope="module")
def scenes():
    return [generate_scene(s, PARAMS) for s in range(4)]


@pytest.fixture(scope="module")
def compare(scenes):
    return compare_strategies(scenes, [8, 16], [320], BenchConfig())


def test_compare_rows(compare):
    assert [r["label"] for r in compare.rows] == ["grid 8x8", "grid 16x16", "object-aware (max 320)"]
    g8, g16, oa = compare.rows
    assert g8["speedup"] == 1.0
    assert g16["speedup"] == pytest.approx(0.25)
    assert g16["output_mask_count"] == 768 and g16["decoder_call_count"] == 256
    assert oa["mask_decoding_ms"] == pytest.approx(oa["decoder_call_count"] * 1600 / 1024)
    assert oa["ar"]["all"] == 1.0  # noiseless detector, all_nodes GT
    assert g16["total_ms"] == pytest.approx(g16["prompt_encoding_ms"] + g16["mask_decoding_ms"])


def test_ar_by_k_non_decreasing(compare):
    for r in compare.rows:
        vals = [r["ar_by_k"][k] for k in ("10", "100", "1000")]
        assert vals == sorted(vals)


def test_report_renderings(compare):
    md = compare.to_markdown()
    assert sum(line.startswith("| ") for line in md.splitlines()) == 1 + len(compare.rows)
    assert "1.00x" in md and "timing: simulated" in md
    rows = list(csv.DictReader(io.StringIO(compare.to_csv())))
    assert [r["label"] for r in rows] == [r["label"] for r in compare.rows]
    assert float(rows[1]["speedup"]) == pytest.approx(0.25)
    assert dumps(compare.to_dict())  # serializable


def test_jobs_do_not_change_results(scenes, compare):
    parallel = compare_strategies(scenes, [8, 16], [320], BenchConfig(jobs=3))
    assert dumps(parallel.to_dict()) == dumps(compare.to_dict())


def test_ablation(scenes):
    noisy = BenchConfig(detector_noise=DetectorNoise(0.05, 0.05, 0.1, 0.1, 0.2))
    rep = ablate_max_prompts(scenes, [0, 1, 2, 4, 8, 64], noisy)
    ars = [r["ar"]["all"] for r in rep.rows]
    assert ars == sorted(ars) and ars[0] == 0.0
    assert rep.rows[0]["speedup"] is None and "n/a" in rep.to_markdown()
    calls = [r["decoder_call_count"] for r in rep.rows]
    assert calls == sorted(calls) and calls[1] <= 1


def test_ablation_cap_validation(scenes):
    with pytest.raises(ValueError):
        ablate_max_prompts(scenes, [64, 32])
    with pytest.raises(ValueError):
        ablate_max_prompts([], [64])


def test_wall_clock_uses_at_least_five_repeats(scenes):
    cfg = BenchConfig(timing="wall_clock", repeats=2)
    assert cfg.effective_repeats == 5
    rep = compare_strategies(scenes[:1], [4], [], cfg)
    assert rep.mode == "wall_clock" and rep.calibration["repeats"] == 5
    assert rep.rows[0]["total_ms"] > 0


def test_detections_seeded_by_image(scenes):
    cfg = BenchConfig(detector_noise=DetectorNoise(0.1, 0.1, 0.1))
    assert scene_detections(scenes[0], 0, cfg) == scene_detections(scenes[0], 0, cfg)
    assert scene_detections(scenes[0], 0, cfg) != scene_detections(scenes[0], 1, cfg)


def test_overhead_lowers_speedup(scenes):
    plain = compare_strategies(scenes[:1], [64], [320])
    slowed = compare_strategies(scenes[:1], [64], [320], BenchConfig(decoder=DecoderConfig(fixed_overhead_ms=50.0)))
    assert slowed.rows[1]["speedup"] < plain.rows[1]["speedup"]


def test_plots_written(tmp_path, scenes, compare):
    plot_compare(compare, tmp_path / "c.png")
    plot_ablation(ablate_max_prompts(scenes, [1, 4, 16]), tmp_path / "a.png")
    for name in ("c.png", "a.png"):
        assert (tmp_path / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_bench_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(jobs=0)
    with pytest.raises(ValueError):
        BenchConfig(timing="gpu")
