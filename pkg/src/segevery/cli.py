"""Command-line entry point.

Subcommands compose through files: ``synth`` writes scenes, ``segeverything``
writes proposals and run records, ``eval`` scores proposals, ``bench`` writes
comparison and ablation reports, ``rle`` converts single masks.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import io as sio
from .bench import BenchConfig, BenchReport, ablate_max_prompts, compare_strategies, scene_detections
from .decode import DecoderConfig, ImageContext
from .errors import ConfigError, SegEveryError
from .evaluation import EvalConfig, evaluate_proposals
from .filtering import FilterConfig
from .geometry import ScoredBox
from .mask import Rle, coco_rle_from_string, coco_rle_to_string, rle_decode, rle_encode
from .pipeline import RunRecord, run_grid, run_object_aware
from .prompts import SamplerConfig
from .scene import DetectorNoise, Scene, SceneParams, generate_scene, rasterize_ground_truth

CONFIG_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- value parsing ------------------------------------------------------------


def _bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected true or false, got {v!r}")


def _int(v: Any) -> int:
    if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _float(v: Any) -> float:
    if isinstance(v, bool):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _list_of(item: Callable[[Any], Any]) -> Callable[[Any], tuple]:
    def parse(v: Any) -> tuple:
        parts = v if isinstance(v, (list, tuple)) else [p for p in str(v).split(",") if p.strip()]
        return tuple(item(p) for p in parts)

    return parse


def _pair_of_ints(v: Any) -> tuple[int, int]:
    vals = _list_of(_int)(v)
    if len(vals) != 2:
        raise ValueError(f"expected MIN,MAX, got {v!r}")
    return vals


def _optional_int(v: Any) -> Optional[int]:
    if v is None or str(v).lower() in ("none", "unlimited"):
        return None
    return _int(v)


def _choice(*options: str) -> Callable[[Any], str]:
    def parse(v: Any) -> str:
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    return parse


@dataclass(frozen=True)
class _Field:
    section: str
    key: str
    flag: str
    parse: Callable[[Any], Any]
    help: str

    @property
    def dest(self) -> str:
        return f"cfg__{self.section}__{self.key}"


FIELDS: tuple[_Field, ...] = (
    _Field("scene", "width", "--width", _int, "scene width in pixels"),
    _Field("scene", "height", "--height", _int, "scene height in pixels"),
    _Field("scene", "object_count_range", "--object-count", _pair_of_ints, "root objects per scene as MIN,MAX"),
    _Field("scene", "part_probability", "--part-probability", _float, "chance that a node grows parts"),
    _Field("scene", "min_object_area", "--min-object-area", _int, "minimum visible pixels per object"),
    _Field("scene", "max_box_iou", "--max-box-iou", _float, "maximum box IoU between any two visible objects"),
    _Field("scene", "max_attempts_per_object", "--max-attempts", _int, "placement attempts per object"),
    _Field("sampler", "grid_per_side", "--grid-per-side", _int, "grid points per image side"),
    _Field("sampler", "nms_iou_threshold", "--detection-nms-iou", _float, "NMS IoU threshold on detections"),
    _Field("sampler", "detection_score_threshold", "--detection-score-threshold", _float,
           "drop detections scored below this"),
    _Field("sampler", "max_prompts", "--max-prompts", _optional_int, "object-aware prompt cap (none = unlimited)"),
    _Field("sampler", "prompt_mode", "--prompt-mode", _choice("box", "point"), "object-aware prompt kind"),
    _Field("decoder", "multimask", "--multimask", _bool, "three masks per point prompt (true/false)"),
    _Field("decoder", "boundary_noise", "--boundary-noise", _float, "soft-mask noise amplitude"),
    _Field("decoder", "iou_noise", "--iou-noise", _float, "predicted-IoU jitter amplitude"),
    _Field("decoder", "seed", "--decoder-seed", _int, "decoder noise seed"),
    _Field("decoder", "per_prompt_cost_ms", "--per-prompt-cost-ms", _float, "simulated decode cost per prompt"),
    _Field("decoder", "fixed_overhead_ms", "--fixed-overhead-ms", _float, "simulated decode cost per call"),
    _Field("decoder", "prompt_encoding_cost_ms", "--prompt-encoding-cost-ms", _float,
           "simulated prompt-encoding cost per prompt"),
    _Field("decoder", "per_mask_filter_cost_ms", "--per-mask-filter-cost-ms", _float,
           "simulated grid post-filtering cost per mask"),
    _Field("decoder", "detection_cost_ms", "--detection-cost-ms", _float, "simulated detector cost per image"),
    _Field("filter", "pred_iou_threshold", "--pred-iou-threshold", _float, "minimum predicted IoU"),
    _Field("filter", "stability_threshold", "--stability-threshold", _float, "minimum stability score"),
    _Field("filter", "stability_offset", "--stability-offset", _float, "stability threshold offset"),
    _Field("filter", "binarize_threshold", "--binarize-threshold", _float, "soft-mask binarization threshold"),
    _Field("filter", "mask_nms_iou_threshold", "--mask-nms-iou", _float, "box NMS threshold on grid masks"),
    _Field("filter", "enabled", "--filter", _bool, "apply grid post-filtering (true/false)"),
    _Field("eval", "k_values", "--k", _list_of(_int), "comma-separated K values"),
    _Field("eval", "iou_thresholds", "--iou-thresholds", _list_of(_float), "comma-separated IoU thresholds"),
    _Field("eval", "small_max_area", "--small-max-area", _int, "small bucket: area below this"),
    _Field("eval", "medium_max_area", "--medium-max-area", _int, "medium bucket: area below this"),
    _Field("eval", "gt_level", "--gt-level", _choice("all_nodes", "roots_only"), "ground-truth level on scenes"),
    _Field("detector", "center_jitter_fraction", "--center-jitter", _float, "detector center jitter"),
    _Field("detector", "scale_jitter_fraction", "--scale-jitter", _float, "detector scale jitter"),
    _Field("detector", "score_noise", "--score-noise", _float, "detector score noise"),
    _Field("detector", "drop_probability", "--drop-probability", _float, "chance a detection is missed"),
    _Field("detector", "duplicate_probability", "--duplicate-probability", _float, "chance of a duplicate"),
    _Field("detector", "seed", "--detector-seed", _int, "detector noise seed"),
    _Field("run", "seed", "--seed", _int, "base scene seed for synth and bench"),
    _Field("run", "timing", "--timing", _choice("simulated", "wall_clock"),
           "stage timing mode (bench defaults to wall_clock, others to simulated)"),
    _Field("run", "repeats", "--repeats", _int, "wall-clock repetitions (median of at least 5)"),
    _Field("run", "jobs", "--jobs", _int, "parallel worker processes"),
)

SECTIONS = ("scene", "sampler", "decoder", "filter", "eval", "detector", "run")


# -- config assembly ----------------------------------------------------------


@dataclass(frozen=True)
class CliConfig:
    scene: SceneParams
    sampler: SamplerConfig
    decoder: DecoderConfig
    filter: FilterConfig
    eval: EvalConfig
    detector: DetectorNoise
    detector_seed: int = 0
    gt_level: str = "all_nodes"
    seed: int = 0
    timing: str = "simulated"
    repeats: int = 5
    jobs: int = 1

    def __post_init__(self):
        self.bench()  # validates repeats, jobs and timing

    def bench(self) -> BenchConfig:
        return BenchConfig(self.sampler, self.decoder, self.filter, self.eval, self.detector,
                           self.detector_seed, self.gt_level, self.timing, self.repeats, self.jobs)


def _read_config_file(path: str) -> dict[str, dict[str, Any]]:
    doc = sio.read_json(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"{path}: config version must be {CONFIG_VERSION}, found {doc.get('version')!r}")
    known = {(f.section, f.key): f for f in FIELDS}
    out: dict[str, dict[str, Any]] = {}
    for section, body in doc.items():
        if section == "version":
            continue
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: section {section!r} must be an object")
        for key, value in body.items():
            f = known.get((section, key))
            if f is None:
                raise ConfigError(f"{path}: unknown config key {section}.{key}")
            try:
                out.setdefault(section, {})[key] = f.parse(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: {section}.{key}: {exc}") from exc
    return out


def build_config(args: argparse.Namespace) -> CliConfig:
    """Defaults, then the config file, then flags."""
    values: dict[str, dict[str, Any]] = {}
    if getattr(args, "config", None):
        values = _read_config_file(args.config)
    for f in FIELDS:
        if hasattr(args, f.dest):
            values.setdefault(f.section, {})[f.key] = getattr(args, f.dest)
    det = dict(values.get("detector", {}))
    ev = dict(values.get("eval", {}))
    run = dict(values.get("run", {}))
    if getattr(args, "command", None) == "bench":
        run.setdefault("timing", "wall_clock")  # reports measure; pass --timing simulated for exact runs
    try:
        return CliConfig(
            scene=SceneParams(**values.get("scene", {})),
            sampler=SamplerConfig(**values.get("sampler", {})),
            decoder=DecoderConfig(**values.get("decoder", {})),
            filter=FilterConfig(**values.get("filter", {})),
            gt_level=ev.pop("gt_level", "all_nodes"),
            eval=EvalConfig(**ev),
            detector_seed=det.pop("seed", 0),
            detector=DetectorNoise(**det),
            **run,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _flag_parser(f: _Field) -> Callable[[str], Any]:
    def parse(s: str) -> Any:
        try:
            return f.parse(s)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    parse.__name__ = f.key
    return parse


def _int_list_arg(s: str) -> tuple[int, ...]:
    try:
        return _list_of(_int)(s)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _config_parent() -> argparse.ArgumentParser:
    parent = _Parser(add_help=False)
    parent.add_argument("--config", help="JSON config file (flags override its values)")
    for section in SECTIONS:
        group = parent.add_argument_group(f"{section} settings (config section '{section}')")
        for f in FIELDS:
            if f.section == section:
                group.add_argument(f.flag, dest=f.dest, type=_flag_parser(f), default=argparse.SUPPRESS,
                                   metavar=f.key.upper(), help=f"{f.help} [config: {f.section}.{f.key}]")
    return parent


# -- shared plumbing ----------------------------------------------------------


def _out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SegEveryError(f"cannot create output directory {p}: {exc.strerror}") from exc
    return p


def _load_scene_dir(path: str) -> list[Scene]:
    if not Path(path).is_dir():
        raise SegEveryError(f"scene directory {path} does not exist")
    return sio.load_scenes(path)


def _bench_scenes(args, cfg: CliConfig) -> list[Scene]:
    if args.scenes:
        scenes = _load_scene_dir(args.scenes)
    else:
        scenes = [generate_scene(cfg.seed + i, cfg.scene) for i in range(args.count)]
    if not scenes:
        raise SegEveryError("no scenes to benchmark")
    return scenes


def _parallel_map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


# -- synth --------------------------------------------------------------------


def cmd_synth(args, cfg: CliConfig) -> int:
    out = _out_dir(args.out)
    if args.count < 0:
        raise UsageError("synth: --count must be >= 0")
    for i in range(args.count):
        sio.save_scene(generate_scene(cfg.seed + i, cfg.scene), out / f"scene_{i:05d}.json")
    print(f"wrote {args.count} scenes to {out}", file=sys.stderr)
    return 0


# -- segeverything ------------------------------------------------------------


@dataclass(frozen=True)
class _RunJob:
    image_id: int
    ctx: ImageContext
    strategy: str
    cfg: CliConfig
    detections: Optional[tuple[ScoredBox, ...]]


def _run_job(job: _RunJob) -> tuple[RunRecord, list[ScoredBox]]:
    cfg = job.cfg
    job.ctx.prepare()
    if job.strategy == "grid":
        rec = run_grid(job.ctx, cfg.sampler.grid_per_side, cfg.decoder.multimask, cfg.filter, cfg.decoder,
                       timing=cfg.timing)
        return rec, []
    if job.detections is not None:
        dets = list(job.detections)
        rec = run_object_aware(job.ctx, dets, cfg.sampler, cfg.decoder, timing=cfg.timing,
                               binarize_threshold=cfg.filter.binarize_threshold)
        return rec, dets
    produced: list[ScoredBox] = []

    def detect():
        produced.extend(scene_detections(job.ctx.scene, job.image_id, cfg.bench()))
        return produced

    rec = run_object_aware(job.ctx, detect, cfg.sampler, cfg.decoder, timing=cfg.timing,
                           binarize_threshold=cfg.filter.binarize_threshold)
    return rec, produced


def cmd_segeverything(args, cfg: CliConfig) -> int:
    out = _out_dir(args.out)
    strategy = "grid" if args.strategy == "grid" else "object_aware"
    detections = sio.load_detections(args.detections) if args.detections else None
    jobs: list[_RunJob] = []
    if args.scenes:
        for image_id, scene in enumerate(_load_scene_dir(args.scenes)):
            dets = tuple(detections.get(image_id, ())) if detections is not None else None
            jobs.append(_RunJob(image_id, ImageContext.from_scene(scene, image_id), strategy, cfg, dets))
    else:
        if not args.masks:
            raise UsageError("segeverything: --dataset needs --masks (precomputed decoder outputs)")
        if strategy == "object_aware" and detections is None:
            raise UsageError("segeverything: object-aware runs on a dataset need --detections")
        index = sio.load_dataset(args.dataset)
        masks = sio.load_proposals(args.masks)
        for im in index.images:
            ext = sio.external_masks(masks.get(im.id, []))
            ctx = ImageContext(im.width, im.height, external=ext, image_id=im.id)
            dets = tuple(detections.get(im.id, ())) if detections is not None else None
            jobs.append(_RunJob(im.id, ctx, strategy, cfg, dets))
    results = _parallel_map(_run_job, jobs, cfg.jobs)
    records = [r for r, _ in results]
    sio.export_proposals(records, out / "proposals.json")
    sio.save_run_records(records, out / "runs.json")
    if strategy == "object_aware":
        sio.save_detections({j.image_id: d for j, (_, d) in zip(jobs, results)}, out / "detections.jsonl")
    print(f"{len(records)} images, {sum(r.kept_mask_count for r in records)} proposals -> {out}", file=sys.stderr)
    return 0


# -- eval ---------------------------------------------------------------------


def cmd_eval(args, cfg: CliConfig) -> int:
    proposals = sio.load_proposals(args.proposals)
    if args.scenes:
        scenes = _load_scene_dir(args.scenes)
        gts = {i: rasterize_ground_truth(s, cfg.gt_level) for i, s in enumerate(scenes)}
    else:
        gts = sio.load_dataset(args.dataset).ground_truths()
    unknown = sorted(set(proposals) - set(gts))
    if unknown:
        raise SegEveryError(f"proposals reference image ids without ground truth: {unknown}")
    aligned = {i: proposals.get(i, []) for i in gts}
    report = evaluate_proposals(aligned, gts, cfg.eval)
    md = report.to_markdown(args.label)
    if args.out:
        out = _out_dir(args.out)
        sio.write_json(report.to_dict(), out / "eval.json")
        sio.write_text(md, out / "eval.md")
    sys.stdout.write(md)
    return 0


# -- bench --------------------------------------------------------------------


def _write_bench(report: BenchReport, out: Path, stem: str, plot) -> None:
    sio.write_json(report.to_dict(), out / f"{stem}.json")
    sio.write_text(report.to_markdown(), out / f"{stem}.md")
    sio.write_text(report.to_csv(), out / f"{stem}.csv")
    plot(report, out / f"{stem}.png")


def cmd_bench(args, cfg: CliConfig) -> int:
    from .plotting import plot_ablation, plot_compare

    out = _out_dir(args.out)
    scenes = _bench_scenes(args, cfg)
    if args.bench_command == "compare":
        report = compare_strategies(scenes, args.grid_sides, args.oa_caps, cfg.bench())
        _write_bench(report, out, "bench_compare", plot_compare)
    else:
        report = ablate_max_prompts(scenes, args.caps, cfg.bench())
        _write_bench(report, out, "bench_ablate", plot_ablation)
    sys.stdout.write(report.to_markdown())
    return 0


# -- rle ----------------------------------------------------------------------


def _read_dense(path: str) -> np.ndarray:
    p = Path(path)
    try:
        if p.suffix == ".npy":
            arr = np.load(p, allow_pickle=False)
        else:
            rows = [line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]
            arr = np.array([[int(c) for c in row.replace(" ", "")] for row in rows])
    except (OSError, ValueError) as exc:
        raise SegEveryError(f"{path}: cannot read mask ({exc})") from exc
    if arr.ndim != 2 or not np.isin(arr, (0, 1)).all():
        raise SegEveryError(f"{path}: expected a 2-D grid of 0/1 values")
    return arr.astype(bool)


def _write_dense(m: np.ndarray, path: str) -> None:
    p = Path(path)
    if p.suffix == ".npy":
        np.save(p, m)
    else:
        sio.write_text("".join("".join("1" if v else "0" for v in row) + "\n" for row in m), p)


def cmd_rle(args, cfg: CliConfig) -> int:
    if args.rle_command == "encode":
        r = rle_encode(_read_dense(args.input))
        rec = {"size": [r.height, r.width], "counts": coco_rle_to_string(r) if args.compressed else list(r.counts)}
        text = sio.dumps(rec, indent=None)
        if args.out:
            sio.write_text(text, args.out)
        else:
            sys.stdout.write(text)
        return 0
    rec = sio.read_json(args.input)
    try:
        h, w = (int(v) for v in rec["size"])
        counts = rec["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SegEveryError(f"{args.input}: expected {{size: [h, w], counts}}") from exc
    r = coco_rle_from_string(counts, w, h) if isinstance(counts, str) else Rle(w, h, tuple(counts))
    _write_dense(rle_decode(r), args.out)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    cfg_parent = _config_parent()
    parser = _Parser(prog="segevery", description="Grid vs object-aware segment-everything toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[cfg_parent], help="generate synthetic scenes")
    p.add_argument("--count", type=int, required=True, help="number of scenes")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("segeverything", parents=[cfg_parent], help="run a sampling strategy")
    p.add_argument("--strategy", choices=("grid", "object-aware"), required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenes", help="directory of scene files")
    src.add_argument("--dataset", help="COCO-style ground-truth JSON")
    p.add_argument("--detections", help="JSON-lines detections (replaces the oracle detector)")
    p.add_argument("--masks", help="COCO results JSON of precomputed masks, used as decoder backing")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_segeverything)

    p = sub.add_parser("eval", parents=[cfg_parent], help="score proposals with mask AR@K")
    p.add_argument("--proposals", required=True, help="COCO results JSON")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenes", help="directory of scene files")
    src.add_argument("--dataset", help="COCO-style ground-truth JSON")
    p.add_argument("--label", default="proposals", help="method name in the markdown table")
    p.add_argument("--out", help="directory for eval.json and eval.md")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", help="benchmark reports")
    bsub = p.add_subparsers(dest="bench_command", required=True, parser_class=_Parser)
    for name, helptext in (("compare", "grid densities vs object-aware caps"), ("ablate", "prompt-cap sweep")):
        b = bsub.add_parser(name, parents=[cfg_parent], help=helptext)
        b.add_argument("--scenes", help="directory of scene files (default: synthesize --count scenes)")
        b.add_argument("--count", type=int, default=10, help="scenes to synthesize when --scenes is absent")
        b.add_argument("--out", required=True, help="output directory")
        if name == "compare":
            b.add_argument("--grid-sides", type=_int_list_arg,
                           default=(16, 32, 64), help="comma-separated grid sides")
            b.add_argument("--oa-caps", type=_int_list_arg,
                           default=(320,), help="comma-separated object-aware prompt caps")
        else:
            b.add_argument("--caps", type=_int_list_arg,
                           default=(64, 128, 192, 256, 320, 384), help="comma-separated prompt caps")
        b.set_defaults(handler=cmd_bench)

    p = sub.add_parser("rle", help="single-mask codec utility")
    rsub = p.add_subparsers(dest="rle_command", required=True, parser_class=_Parser)
    r = rsub.add_parser("encode", parents=[cfg_parent], help="dense 0/1 mask (.npy or text) to RLE JSON")
    r.add_argument("--input", required=True)
    r.add_argument("--out", help="output file (default: standard output)")
    r.add_argument("--compressed", action=argparse.BooleanOptionalAction, default=True,
                   help="emit the COCO compressed string instead of a counts list")
    r.set_defaults(handler=cmd_rle)
    r = rsub.add_parser("decode", parents=[cfg_parent], help="RLE JSON to dense 0/1 mask (.npy or text)")
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(handler=cmd_rle)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = build_config(args)
        return args.handler(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (SegEveryError, OSError, json.JSONDecodeError) as exc:
        print(f"segevery: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
