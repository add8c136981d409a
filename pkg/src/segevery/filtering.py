"""Mask post-filtering for the grid path and the keep-everything policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .decode import Granularity, MaskPrediction
from .geometry import Box, ScoredBox, nms
from .mask import Rle, SoftMask, binarize, rle_iou


@dataclass(frozen=True)
class FilterConfig:
    # Defaults follow SAM's released automatic mask generator.
    pred_iou_threshold: float = 0.88
    stability_threshold: float = 0.95
    stability_offset: float = 0.05
    binarize_threshold: float = 0.5
    mask_nms_iou_threshold: float = 0.7
    enabled: bool = True

    def __post_init__(self):
        for name in ("pred_iou_threshold", "stability_threshold", "stability_offset",
                     "binarize_threshold", "mask_nms_iou_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        tau, delta = self.binarize_threshold, self.stability_offset
        if tau - delta < 0 or tau + delta > 1:
            raise ValueError("binarize_threshold +/- stability_offset must stay within [0, 1]")


@dataclass(frozen=True, eq=False)
class MaskProposal:
    mask: Rle
    score: float
    box: Box
    granularity: Granularity = "single"
    source_prompt_index: int = -1
    raw_index: int = -1  # position in the prediction list it came from

    @classmethod
    def from_mask(cls, mask: Rle, score: float, **kw) -> "MaskProposal":
        if mask.box is None:
            raise ValueError("a proposal mask must be non-empty")
        return cls(mask, score, mask.box, **kw)


def stability_score(soft: SoftMask, tau: float, delta: float) -> float:
    """IoU between the mask binarized at ``tau + delta`` and at ``tau - delta``."""
    if tau - delta < 0 or tau + delta > 1:
        raise ValueError("tau +/- delta must stay within [0, 1]")
    soft = np.asarray(soft)
    hi = binarize(soft, tau + delta)
    lo = binarize(soft, tau - delta)
    union = np.count_nonzero(hi | lo)
    if union == 0:
        return 1.0
    return np.count_nonzero(hi & lo) / union


def finalize_predictions(preds: Sequence[MaskPrediction], binarize_threshold: float = 0.5) -> list[MaskProposal]:
    out = []
    for i, p in enumerate(preds):
        mask = p.binarize(binarize_threshold)
        if mask.area == 0:
            continue
        out.append(MaskProposal(mask, p.predicted_iou, mask.box, p.granularity, p.source_prompt_index, i))
    return out


def _by_score(proposals: Sequence[MaskProposal]) -> list[MaskProposal]:
    return sorted(proposals, key=lambda p: -p.score)


def grid_filter(
    proposals: Sequence[MaskProposal],
    raw: Sequence[MaskPrediction],
    cfg: Optional[FilterConfig] = None,
) -> list[MaskProposal]:
    """Score threshold, stability threshold, exact dedup, then box NMS.

    ``proposals[i].raw_index`` must point into ``raw``. Survivors come back in
    descending score order.
    """
    cfg = cfg or FilterConfig()
    if not cfg.enabled:
        return _by_score(proposals)
    kept = [p for p in proposals if p.score >= cfg.pred_iou_threshold]
    tau, delta = cfg.binarize_threshold, cfg.stability_offset
    kept = [p for p in kept if raw[p.raw_index].stability(tau, delta) >= cfg.stability_threshold]

    best: dict[tuple[int, int, tuple[int, ...]], MaskProposal] = {}
    for p in _by_score(kept):
        key = (p.mask.width, p.mask.height, p.mask.counts)
        best.setdefault(key, p)
    unique = _by_score(best.values())

    keep_idx = nms([ScoredBox(p.box, min(max(p.score, 0.0), 1.0)) for p in unique], cfg.mask_nms_iou_threshold)
    return [unique[i] for i in keep_idx]


def object_aware_passthrough(proposals: Sequence[MaskProposal]) -> list[MaskProposal]:
    return _by_score(proposals)


def mask_nms(proposals: Sequence[MaskProposal], iou_threshold: float) -> list[MaskProposal]:
    """Greedy NMS on mask IoU; slower than box NMS, kept for comparison."""
    kept: list[MaskProposal] = []
    for p in _by_score(proposals):
        if all(rle_iou(p.mask, k.mask) <= iou_threshold for k in kept):
            kept.append(p)
    return kept
