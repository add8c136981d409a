"""Grid-search and object-aware prompt sampling."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Optional, Sequence, Union

from .geometry import Box, Point, ScoredBox, box_center, nms

Prompt = Union[Point, Box]
Provenance = Literal["grid", "object_aware"]
PromptMode = Literal["point", "box"]


@dataclass(frozen=True)
class PromptBatch:
    prompts: tuple[Prompt, ...]
    provenance: Provenance
    source_scores: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        kinds = {type(p) for p in self.prompts}
        if len(kinds) > 1:
            raise ValueError("a prompt batch must hold a single prompt variant")
        if self.source_scores is not None and len(self.source_scores) != len(self.prompts):
            raise ValueError("source_scores must be parallel to prompts")

    def __len__(self) -> int:
        return len(self.prompts)

    @property
    def is_points(self) -> bool:
        return bool(self.prompts) and isinstance(self.prompts[0], Point)


@dataclass(frozen=True)
class SamplerConfig:
    grid_per_side: int = 64
    nms_iou_threshold: float = 0.7
    detection_score_threshold: float = 0.05
    max_prompts: Optional[int] = 320  # None means unlimited
    prompt_mode: PromptMode = "box"

    def __post_init__(self):
        if self.grid_per_side < 1:
            raise ValueError("grid_per_side must be >= 1")
        for name in ("nms_iou_threshold", "detection_score_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.max_prompts is not None and self.max_prompts < 1:
            raise ValueError("max_prompts must be >= 1")
        if self.prompt_mode not in ("point", "box"):
            raise ValueError(f"unknown prompt_mode {self.prompt_mode!r}")


def grid_points(per_side: int, width: float, height: float) -> PromptBatch:
    if per_side < 1:
        raise ValueError("per_side must be >= 1")
    pts = tuple(
        Point((i + 0.5) / per_side * width, (j + 0.5) / per_side * height)
        for j in range(per_side)
        for i in range(per_side)
    )
    return PromptBatch(pts, "grid")


def object_aware_prompts(
    detections: Sequence[ScoredBox], cfg: SamplerConfig, width: float, height: float
) -> PromptBatch:
    """Score filter, NMS, keep the top ``max_prompts``, then emit boxes or centers."""
    confident = [i for i, d in enumerate(detections) if d.score >= cfg.detection_score_threshold]
    kept = nms([detections[i] for i in confident], cfg.nms_iou_threshold)
    if cfg.max_prompts is not None:
        kept = kept[: cfg.max_prompts]
    survivors = [detections[confident[k]] for k in kept]
    boxes = [d.box.clip(width, height) for d in survivors]
    prompts: tuple[Prompt, ...]
    if cfg.prompt_mode == "box":
        prompts = tuple(boxes)
    else:
        prompts = tuple(box_center(b) for b in boxes)
    return PromptBatch(prompts, "object_aware", tuple(d.score for d in survivors))


def cap_prompts(batch: PromptBatch, k: int) -> PromptBatch:
    if k < 0:
        raise ValueError("k must be >= 0")
    if k >= len(batch):
        return batch
    scores = batch.source_scores[:k] if batch.source_scores is not None else None
    return replace(batch, prompts=batch.prompts[:k], source_scores=scores)
