"""Strategy comparison and max-prompt ablation over a set of scenes."""

from __future__ import annotations

import csv
import io as _io
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

from .decode import DecoderConfig, ImageContext
from .evaluation import BUCKETS, EvalConfig, ImageCounts, pooled_ar, tally_image
from .filtering import FilterConfig
from .geometry import ScoredBox
from .pipeline import STAGES, RunRecord, TimingMode, run_grid, run_object_aware, run_prompt_batch
from .prompts import SamplerConfig, cap_prompts, object_aware_prompts
from .scene import DetectorNoise, GroundTruth, GtLevel, Scene, oracle_detections, rasterize_ground_truth

ReportKind = Literal["compare", "ablate"]


@dataclass(frozen=True)
class BenchConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    detector_noise: DetectorNoise = field(default_factory=DetectorNoise)
    detector_seed: int = 0
    gt_level: GtLevel = "all_nodes"
    timing: TimingMode = "simulated"
    repeats: int = 5
    jobs: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.timing not in ("simulated", "wall_clock"):
            raise ValueError(f"unknown timing mode {self.timing!r}")

    @property
    def effective_repeats(self) -> int:
        # Simulated times are exact, so one pass is enough.
        return 1 if self.timing == "simulated" else max(self.repeats, 5)


def scene_detections(scene: Scene, image_id: int, cfg: BenchConfig) -> list[ScoredBox]:
    """Oracle detector output for one scene; deterministic in (detector_seed, image_id)."""
    gt = rasterize_ground_truth(scene, cfg.gt_level)
    return oracle_detections(gt, cfg.detector_noise, cfg.detector_seed + image_id)


@dataclass(frozen=True)
class _Setting:
    strategy: Literal["grid", "object_aware"]
    value: int  # grid side or prompt cap

    @property
    def label(self) -> str:
        if self.strategy == "grid":
            return f"grid {self.value}x{self.value}"
        return f"object-aware (max {self.value})"


@dataclass
class _SceneResult:
    times: list[dict[str, float]]
    counts: list[tuple[int, int, int, int]]  # prompts, decoder calls, outputs, kept
    tallies: list[ImageCounts]


def _median_times(runs: Sequence[RunRecord]) -> dict[str, float]:
    return {s: statistics.median(r.stage_times[s] for r in runs) for s in STAGES}


def _repeat(fn: Callable[[], RunRecord], repeats: int) -> tuple[RunRecord, dict[str, float]]:
    runs = [fn() for _ in range(repeats)]
    return runs[-1], _median_times(runs)


def _collect(result: _SceneResult, rec: RunRecord, times: dict[str, float], gt: GroundTruth, cfg: BenchConfig):
    result.times.append(times)
    result.counts.append((rec.prompt_count, rec.decoder_call_count, rec.output_mask_count, rec.kept_mask_count))
    result.tallies.append(tally_image(rec.proposals, gt.entries, cfg.eval, cfg.eval.k_values))


def _compare_scene(args: tuple[Scene, int, tuple[_Setting, ...], BenchConfig]) -> _SceneResult:
    scene, image_id, settings, cfg = args
    ctx = ImageContext.from_scene(scene, image_id)
    ctx.prepare()
    gt = rasterize_ground_truth(scene, cfg.gt_level)
    out = _SceneResult([], [], [])
    for s in settings:
        if s.strategy == "grid":
            def fn(side=s.value):
                return run_grid(ctx, side, cfg.decoder.multimask, cfg.filter, cfg.decoder, timing=cfg.timing)
        else:
            scfg = SamplerConfig(cfg.sampler.grid_per_side, cfg.sampler.nms_iou_threshold,
                                 cfg.sampler.detection_score_threshold, s.value, cfg.sampler.prompt_mode)

            def fn(scfg=scfg):
                return run_object_aware(
                    ctx, lambda: scene_detections(scene, image_id, cfg), scfg, cfg.decoder,
                    timing=cfg.timing, binarize_threshold=cfg.filter.binarize_threshold,
                )
        rec, times = _repeat(fn, cfg.effective_repeats)
        _collect(out, rec, times, gt, cfg)
    return out


def _ablate_scene(args: tuple[Scene, int, tuple[_Setting, ...], BenchConfig]) -> _SceneResult:
    scene, image_id, settings, cfg = args
    ctx = ImageContext.from_scene(scene, image_id)
    ctx.prepare()
    gt = rasterize_ground_truth(scene, cfg.gt_level)
    unlimited = SamplerConfig(cfg.sampler.grid_per_side, cfg.sampler.nms_iou_threshold,
                              cfg.sampler.detection_score_threshold, None, cfg.sampler.prompt_mode)
    # One detection pass per scene; the caps only truncate its prompt list.
    full = object_aware_prompts(scene_detections(scene, image_id, cfg), unlimited, scene.width, scene.height)
    out = _SceneResult([], [], [])
    for s in settings:
        batch = cap_prompts(full, s.value)
        rec, times = _repeat(
            lambda: run_prompt_batch(ctx, batch, cfg.decoder, timing=cfg.timing,
                                     binarize_threshold=cfg.filter.binarize_threshold),
            cfg.effective_repeats,
        )
        _collect(out, rec, times, gt, cfg)
    return out


def _map_scenes(worker, scenes: Sequence[Scene], settings: tuple[_Setting, ...], cfg: BenchConfig):
    jobs = [(scene, i, settings, cfg) for i, scene in enumerate(scenes)]
    if cfg.jobs == 1 or len(jobs) == 1:
        return [worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(jobs))) as pool:
        # map() yields in submission order, so rows do not depend on --jobs.
        return list(pool.map(worker, jobs))


@dataclass
class BenchReport:
    kind: ReportKind
    mode: TimingMode
    rows: list[dict]
    scene_count: int
    ar_k: int
    calibration: dict

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mode": self.mode,
            "scene_count": self.scene_count,
            "ar_k": self.ar_k,
            "calibration": self.calibration,
            "rows": self.rows,
        }

    def to_markdown(self) -> str:
        k = self.ar_k
        head = ["configuration", "prompt encoding (ms)", "mask decoding (ms)", "total (ms)", "speedup",
                "decoder calls", "output masks", f"AR@{k} all", "small", "med.", "large"]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in self.rows:
            ar = r["ar"]
            cells = [
                r["label"], f"{r['prompt_encoding_ms']:.1f}", f"{r['mask_decoding_ms']:.1f}",
                f"{r['total_ms']:.1f}", _speedup_text(r["speedup"]), f"{r['decoder_call_count']:g}",
                f"{r['output_mask_count']:g}", *(f"{100 * ar[b]:.1f}" for b in BUCKETS),
            ]
            lines.append("| " + " | ".join(cells) + " |")
        cal = ", ".join(f"{key}={val:g}" for key, val in sorted(self.calibration.items()))
        lines += ["", f"{self.kind}; timing: {self.mode}; scenes: {self.scene_count}; calibration: {cal}"]
        lines.append("mask decoding includes post-filtering; prompt encoding includes detection.")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = _io.StringIO()
        cols = ["label", "strategy", "setting", "detection_ms", "prompt_encoding_ms", "filtering_ms",
                "mask_decoding_ms", "total_ms", "speedup", "prompt_count", "decoder_call_count",
                "output_mask_count", "kept_mask_count"]
        ar_cols = [f"ar_{b}" for b in BUCKETS]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols + ar_cols)
        for r in self.rows:
            writer.writerow([_fmt(r[c]) for c in cols] + [_fmt(r["ar"][b]) for b in BUCKETS])
        return buf.getvalue()


def _speedup_text(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.2f}x"


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _rows(settings: Sequence[_Setting], results: Sequence[_SceneResult], cfg: BenchConfig) -> list[dict]:
    n = len(results)
    ks = list(cfg.eval.k_values)
    n_t = len(cfg.eval.iou_thresholds)
    rows = []
    for si, s in enumerate(settings):
        mean = {st: sum(r.times[si][st] for r in results) / n for st in STAGES}
        counts = [sum(r.counts[si][c] for r in results) / n for c in range(4)]
        tallies = [r.tallies[si] for r in results]
        ar = {b: pooled_ar(tallies, b, len(ks), n_t)[0][-1] for b in BUCKETS}
        ar_by_k = dict(zip((str(k) for k in ks), pooled_ar(tallies, "all", len(ks), n_t)[0]))
        pe = mean["detection_ms"] + mean["prompt_encoding_ms"]
        md = mean["mask_decoding_ms"] + mean["filtering_ms"]
        rows.append({
            "label": s.label,
            "strategy": s.strategy,
            "setting": s.value,
            "detection_ms": mean["detection_ms"],
            "prompt_encoding_ms": pe,
            "filtering_ms": mean["filtering_ms"],
            "mask_decoding_ms": md,
            "total_ms": pe + md,
            "prompt_count": counts[0],
            "decoder_call_count": counts[1],
            "output_mask_count": counts[2],
            "kept_mask_count": counts[3],
            "ar": ar,
            "ar_by_k": ar_by_k,
        })
    # Baseline: the first grid row, else the first row that costs anything.
    grid_rows = [r for r in rows if r["strategy"] == "grid"]
    costed = [r for r in rows if r["total_ms"] > 0]
    base_row = grid_rows[0] if grid_rows else (costed[0] if costed else None)
    for r in rows:
        if base_row is None or r["total_ms"] == 0:
            r["speedup"] = 1.0 if r is base_row or base_row is None else None
        else:
            r["speedup"] = base_row["total_ms"] / r["total_ms"]
    return rows


def _calibration(cfg: BenchConfig) -> dict:
    d = cfg.decoder
    return {
        "per_prompt_cost_ms": d.per_prompt_cost_ms,
        "fixed_overhead_ms": d.fixed_overhead_ms,
        "prompt_encoding_cost_ms": d.prompt_encoding_cost_ms,
        "per_mask_filter_cost_ms": d.per_mask_filter_cost_ms,
        "detection_cost_ms": d.detection_cost_ms,
        "repeats": cfg.effective_repeats,
    }


def compare_strategies(
    scenes: Sequence[Scene],
    grid_sides: Sequence[int],
    oa_caps: Sequence[int],
    cfg: Optional[BenchConfig] = None,
) -> BenchReport:
    """One row per grid density and per object-aware cap, averaged over scenes.

    The first grid row is the speedup baseline.
    """
    cfg = cfg or BenchConfig()
    if not scenes:
        raise ValueError("compare_strategies needs at least one scene")
    settings = tuple(_Setting("grid", int(g)) for g in grid_sides) + tuple(
        _Setting("object_aware", int(c)) for c in oa_caps
    )
    if not settings:
        raise ValueError("nothing to compare: no grid sides and no caps")
    results = _map_scenes(_compare_scene, scenes, settings, cfg)
    return BenchReport("compare", cfg.timing, _rows(settings, results, cfg), len(scenes),
                       max(cfg.eval.k_values), _calibration(cfg))


def ablate_max_prompts(
    scenes: Sequence[Scene], caps: Sequence[int], cfg: Optional[BenchConfig] = None
) -> BenchReport:
    """AR as a function of the prompt cap, from one shared detection pass per scene."""
    cfg = cfg or BenchConfig()
    if not scenes:
        raise ValueError("ablate_max_prompts needs at least one scene")
    caps = [int(c) for c in caps]
    if any(c < 0 for c in caps) or caps != sorted(caps):
        raise ValueError(f"caps must be non-negative and ascending, got {caps}")
    settings = tuple(_Setting("object_aware", c) for c in caps)
    results = _map_scenes(_ablate_scene, scenes, settings, cfg)
    return BenchReport("ablate", cfg.timing, _rows(settings, results, cfg), len(scenes),
                       max(cfg.eval.k_values), _calibration(cfg))


