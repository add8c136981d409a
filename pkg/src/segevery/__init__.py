"""Segment-everything pipelines with grid-search or object-aware prompts.

The decoder is pluggable: an oracle over synthetic scenes, or a lookup into
precomputed masks. Runs are scored with class-agnostic mask AR@K and timed
per stage for the strategy comparison.
"""

from .bench import BenchConfig, BenchReport, ablate_max_prompts, compare_strategies
from .decode import DecoderConfig, ExternalMasks, ImageContext, MaskPrediction, decode_batch, simulate_cost
from .errors import (
    AlignmentError,
    ConfigError,
    DimensionMismatchError,
    FormatError,
    MalformedRleError,
    PolygonError,
    PromptOutOfBoundsError,
    SceneGenerationError,
    SegEveryError,
    VersionMismatchError,
)
from .evaluation import EvalConfig, EvalReport, evaluate, evaluate_proposals, mask_ar_at_k, match_greedy
from .filtering import FilterConfig, MaskProposal, grid_filter, object_aware_passthrough, stability_score
from .geometry import Box, Point, ScoredBox, box_iou, nms
from .mask import (
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
from .pipeline import RunRecord, run_grid, run_object_aware
from .prompts import PromptBatch, SamplerConfig, cap_prompts, grid_points, object_aware_prompts
from .scene import (
    DetectorNoise,
    GroundTruth,
    GtEntry,
    Scene,
    SceneParams,
    generate_scene,
    oracle_detections,
    rasterize_ground_truth,
)

__all__ = [
    "BenchConfig",
    "BenchReport",
    "ablate_max_prompts",
    "compare_strategies",
    "DecoderConfig",
    "ExternalMasks",
    "ImageContext",
    "MaskPrediction",
    "decode_batch",
    "simulate_cost",
    "AlignmentError",
    "ConfigError",
    "DimensionMismatchError",
    "FormatError",
    "MalformedRleError",
    "PolygonError",
    "PromptOutOfBoundsError",
    "SceneGenerationError",
    "SegEveryError",
    "VersionMismatchError",
    "EvalConfig",
    "EvalReport",
    "evaluate",
    "evaluate_proposals",
    "mask_ar_at_k",
    "match_greedy",
    "FilterConfig",
    "MaskProposal",
    "grid_filter",
    "object_aware_passthrough",
    "stability_score",
    "Box",
    "Point",
    "ScoredBox",
    "box_iou",
    "nms",
    "Rle",
    "binarize",
    "canonicalize",
    "coco_rle_from_string",
    "coco_rle_to_string",
    "mask_to_box",
    "polygon_rasterize",
    "rle_area",
    "rle_decode",
    "rle_encode",
    "rle_iou",
    "RunRecord",
    "run_grid",
    "run_object_aware",
    "PromptBatch",
    "SamplerConfig",
    "cap_prompts",
    "grid_points",
    "object_aware_prompts",
    "DetectorNoise",
    "GroundTruth",
    "GtEntry",
    "Scene",
    "SceneParams",
    "generate_scene",
    "oracle_detections",
    "rasterize_ground_truth",
]
