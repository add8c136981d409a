"""Class-agnostic proposal evaluation: greedy mask matching and mask AR@K."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Optional, Sequence

import numpy as np

from .errors import AlignmentError, DimensionMismatchError
from .filtering import MaskProposal
from .geometry import boxes_to_array
from .mask import rle_iou
from .scene import GroundTruth, GtEntry

Bucket = Literal["all", "small", "medium", "large"]
BUCKETS: tuple[Bucket, ...] = ("all", "small", "medium", "large")
DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

CONVENTIONS = {
    "recall_pooling": "dataset-pooled: sum matched / sum ground truth, then mean over IoU thresholds",
    "bucket_restriction": "out-of-bucket ground truth removed before matching",
    "area_source": "ground-truth mask area",
    "matching": "greedy in descending proposal score, highest IoU unmatched ground truth, ties to lower index",
    "crowd_annotations": "dropped at load time",
}


@dataclass(frozen=True)
class EvalConfig:
    k_values: tuple[int, ...] = (10, 100, 1000)
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    small_max_area: int = 32 * 32  # small: area < 1024
    medium_max_area: int = 96 * 96  # medium: 1024 <= area < 9216

    def __post_init__(self):
        ks = tuple(int(k) for k in self.k_values)
        if not ks or any(k < 1 for k in ks) or list(ks) != sorted(set(ks)):
            raise ValueError(f"k_values must be positive and strictly ascending, got {self.k_values}")
        ts = tuple(float(t) for t in self.iou_thresholds)
        if not ts or any(not 0 < t <= 1 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"iou_thresholds must be strictly ascending in (0, 1], got {self.iou_thresholds}")
        if not 0 < self.small_max_area <= self.medium_max_area:
            raise ValueError("area bucket bounds must satisfy 0 < small_max_area <= medium_max_area")
        object.__setattr__(self, "k_values", ks)
        object.__setattr__(self, "iou_thresholds", ts)

    def bucket_of(self, area: float) -> Bucket:
        if area < self.small_max_area:
            return "small"
        if area < self.medium_max_area:
            return "medium"
        return "large"


@dataclass
class EvalReport:
    per_k: dict[int, dict[str, float]]
    average_over_k: dict[str, float]
    gt_counts: dict[str, int]
    image_count: int
    conventions: dict[str, str] = field(default_factory=lambda: dict(CONVENTIONS))

    def to_dict(self) -> dict:
        return {
            "per_k": {str(k): v for k, v in self.per_k.items()},
            "average_over_k": self.average_over_k,
            "gt_counts": self.gt_counts,
            "image_count": self.image_count,
            "conventions": self.conventions,
        }

    def to_markdown(self, label: str = "proposals") -> str:
        lines = [
            "| metric | method | all | small | med. | large |",
            "|---|---|---|---|---|---|",
        ]
        for k in sorted(self.per_k, reverse=True):
            row = self.per_k[k]
            lines.append(f"| mask AR@{k} | {label} | " + " | ".join(f"{100 * row[b]:.1f}" for b in BUCKETS) + " |")
        avg = self.average_over_k
        lines.append(f"| average | {label} | " + " | ".join(f"{100 * avg[b]:.1f}" for b in BUCKETS) + " |")
        counts = ", ".join(f"{b}={self.gt_counts[b]}" for b in BUCKETS)
        lines.append("")
        lines.append(f"images: {self.image_count}; ground truth: {counts}")
        return "\n".join(lines) + "\n"


def _sorted_proposals(proposals: Sequence[MaskProposal]) -> list[MaskProposal]:
    return sorted(proposals, key=lambda p: -p.score)


def iou_matrix(proposals: Sequence[MaskProposal], gts: Sequence[GtEntry]) -> np.ndarray:
    """Mask IoU for every (proposal, ground truth) pair.

    Pairs whose boxes do not overlap are exactly zero and are skipped.
    """
    out = np.zeros((len(proposals), len(gts)))
    if not len(proposals) or not len(gts):
        return out
    dims = {(p.mask.width, p.mask.height) for p in proposals} | {
        (g.visible_mask.width, g.visible_mask.height) for g in gts
    }
    if len(dims) > 1:
        raise DimensionMismatchError(f"masks of different sizes in one image: {sorted(dims)}")
    pb = boxes_to_array([p.box for p in proposals])
    gb = boxes_to_array([g.box for g in gts])
    overlap = (
        (np.minimum(pb[:, None, 2], gb[None, :, 2]) > np.maximum(pb[:, None, 0], gb[None, :, 0]))
        & (np.minimum(pb[:, None, 3], gb[None, :, 3]) > np.maximum(pb[:, None, 1], gb[None, :, 1]))
    )
    for i, j in zip(*np.nonzero(overlap)):
        out[i, j] = rle_iou(proposals[i].mask, gts[j].visible_mask)
    return out


def _greedy_prefix_counts(ious: np.ndarray, threshold: float) -> np.ndarray:
    """``counts[r]`` = GT matched after greedily processing rows ``0..r``."""
    n_rows, n_cols = ious.shape
    counts = np.zeros(n_rows, dtype=np.int64)
    if n_rows == 0 or n_cols == 0:
        return counts
    eligible = ious >= threshold
    rows_with_any = np.flatnonzero(eligible.any(axis=1))
    matched = np.zeros(n_cols, dtype=bool)
    hits = np.zeros(n_rows, dtype=np.int64)
    for r in rows_with_any:
        cand = eligible[r] & ~matched
        if not cand.any():
            continue
        j = int(np.argmax(np.where(cand, ious[r], -1.0)))
        matched[j] = True
        hits[r] = 1
    return np.cumsum(hits)


def match_greedy(proposals: Sequence[MaskProposal], gts: Sequence[GtEntry], iou_threshold: float) -> int:
    """Number of ground-truth entries matched, visiting proposals in the given order."""
    counts = _greedy_prefix_counts(iou_matrix(proposals, gts), iou_threshold)
    return int(counts[-1]) if counts.size else 0


class _ImageTally:
    """Matched counts per (bucket, threshold) for every K, from one IoU matrix."""

    def __init__(self, proposals: Sequence[MaskProposal], gts: Sequence[GtEntry], cfg: EvalConfig, max_k: int):
        self.props = _sorted_proposals(proposals)[:max_k]
        self.gts = list(gts)
        self.cfg = cfg
        self.ious = iou_matrix(self.props, self.gts)
        self.gt_bucket = [cfg.bucket_of(g.area) for g in self.gts]

    def gt_count(self, bucket: Bucket) -> int:
        return len(self.gts) if bucket == "all" else self.gt_bucket.count(bucket)

    def matched(self, bucket: Bucket, ks: Iterable[int]) -> np.ndarray:
        """Array ``(len(ks), len(thresholds))`` of matched counts."""
        cols = [j for j, b in enumerate(self.gt_bucket) if bucket == "all" or b == bucket]
        sub = self.ious[:, cols]
        ks = list(ks)
        out = np.zeros((len(ks), len(self.cfg.iou_thresholds)), dtype=np.int64)
        if sub.size == 0:
            return out
        for ti, t in enumerate(self.cfg.iou_thresholds):
            prefix = _greedy_prefix_counts(sub, t)
            for ki, k in enumerate(ks):
                out[ki, ti] = prefix[min(k, len(prefix)) - 1] if k > 0 else 0
        return out


@dataclass
class ImageCounts:
    """Matched counts for one image: ``matched[bucket][k_index, threshold_index]``."""

    matched: dict[str, np.ndarray]
    gt: dict[str, int]


def tally_image(
    proposals: Sequence[MaskProposal], gts: Sequence[GtEntry], cfg: EvalConfig, ks: Sequence[int]
) -> ImageCounts:
    tally = _ImageTally(proposals, gts, cfg, max(ks))
    return ImageCounts(
        {b: tally.matched(b, ks) for b in BUCKETS},
        {b: tally.gt_count(b) for b in BUCKETS},
    )


def pooled_ar(counts: Sequence[ImageCounts], bucket: Bucket, n_k: int, n_t: int) -> tuple[list[float], int]:
    """Per-K AR from pooled counts; zero when the bucket holds no ground truth."""
    total_gt = sum(c.gt[bucket] for c in counts)
    if total_gt == 0:
        return [0.0] * n_k, 0
    matched = np.zeros((n_k, n_t), dtype=np.int64)
    for c in counts:
        matched += c.matched[bucket]
    return [float(v) for v in (matched / total_gt).mean(axis=1)], total_gt


def mask_ar_at_k(
    per_image: Sequence[tuple[Sequence[MaskProposal], Sequence[GtEntry]]],
    k: int,
    cfg: Optional[EvalConfig] = None,
    bucket: Bucket = "all",
) -> float:
    """Mask AR with at most ``k`` proposals per image, recall pooled over images."""
    cfg = cfg or EvalConfig()
    if k <= 0:
        return 0.0
    counts = [tally_image(props, gts, cfg, [k]) for props, gts in per_image]
    return pooled_ar(counts, bucket, 1, len(cfg.iou_thresholds))[0][0]


def report_from_counts(counts: Sequence[ImageCounts], cfg: EvalConfig) -> EvalReport:
    ks = list(cfg.k_values)
    per_k: dict[int, dict[str, float]] = {k: {} for k in ks}
    gt_counts: dict[str, int] = {}
    for bucket in BUCKETS:
        ars, total = pooled_ar(counts, bucket, len(ks), len(cfg.iou_thresholds))
        gt_counts[bucket] = total
        for k, ar in zip(ks, ars):
            per_k[k][bucket] = ar
    average = {b: float(np.mean([per_k[k][b] for k in ks])) for b in BUCKETS}
    return EvalReport(per_k, average, gt_counts, len(counts))


def evaluate_proposals(
    proposals: Mapping[int, Sequence[MaskProposal]],
    gts: Mapping[int, GroundTruth],
    cfg: Optional[EvalConfig] = None,
) -> EvalReport:
    cfg = cfg or EvalConfig()
    missing_gt = sorted(set(proposals) - set(gts))
    missing_runs = sorted(set(gts) - set(proposals))
    if missing_gt or missing_runs:
        raise AlignmentError(
            f"image ids without ground truth: {missing_gt}; ground truth without a run: {missing_runs}"
        )
    counts = []
    for image_id in sorted(gts):
        gt = gts[image_id]
        for p in proposals[image_id]:
            if (p.mask.width, p.mask.height) != (gt.width, gt.height):
                raise DimensionMismatchError(
                    f"image {image_id}: proposal is {p.mask.width}x{p.mask.height}, "
                    f"ground truth is {gt.width}x{gt.height}"
                )
        counts.append(tally_image(proposals[image_id], gt.entries, cfg, cfg.k_values))
    return report_from_counts(counts, cfg)


def evaluate(runs: Sequence, gts: Mapping[int, GroundTruth], cfg: Optional[EvalConfig] = None) -> EvalReport:
    """Evaluate run records (anything with ``image_id`` and ``proposals``)."""
    by_image: dict[int, list[MaskProposal]] = {}
    for run in runs:
        if run.image_id in by_image:
            raise AlignmentError(f"duplicate run for image {run.image_id}")
        by_image[run.image_id] = list(run.proposals)
    return evaluate_proposals(by_image, gts, cfg)
