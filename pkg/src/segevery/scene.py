"""Synthetic hierarchical scenes with exact ground truth.

A scene is a z-ordered list of root objects (later roots are drawn on top).
Each root may hold parts, and parts may hold sub-parts, up to three levels.
Parts are placed inside the visible region of their parent so they are never
occluded; occlusion only happens among roots.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Literal, Union

import numpy as np

from .errors import SceneGenerationError
from .geometry import Box, Point, ScoredBox, iou_one_to_many
from .mask import Rle, polygon_rasterize, rle_encode

log = logging.getLogger(__name__)

GENERATOR_ID = "numpy.random.PCG64"
MAX_DEPTH = 2

GtLevel = Literal["roots_only", "all_nodes"]


@dataclass(frozen=True)
class Rectangle:
    box: Box
    kind: str = field(default="rectangle", init=False)


@dataclass(frozen=True)
class Disk:
    center: Point
    radius: float
    kind: str = field(default="disk", init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"disk radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[Point, ...]
    kind: str = field(default="polygon", init=False)

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")


Shape = Union[Rectangle, Disk, Polygon]


def rasterize_shape(shape: Shape, width: int, height: int) -> np.ndarray:
    """Pixel-center sampling; pixels on the boundary are outside."""
    out = np.zeros((height, width), dtype=bool)
    if isinstance(shape, Rectangle):
        b = shape.box
        cols = np.arange(width) + 0.5
        rows = np.arange(height) + 0.5
        cx = (cols > b.x_min) & (cols < b.x_max)
        ry = (rows > b.y_min) & (rows < b.y_max)
        out[np.ix_(ry, cx)] = True
        return out
    if isinstance(shape, Disk):
        c, r = shape.center, shape.radius
        c0 = max(int(math.floor(c.x - r)), 0)
        c1 = min(int(math.ceil(c.x + r)), width)
        r0 = max(int(math.floor(c.y - r)), 0)
        r1 = min(int(math.ceil(c.y + r)), height)
        if c0 >= c1 or r0 >= r1:
            return out
        yy, xx = np.mgrid[r0:r1, c0:c1]
        out[r0:r1, c0:c1] = (xx + 0.5 - c.x) ** 2 + (yy + 0.5 - c.y) ** 2 < r * r
        return out
    return polygon_rasterize(shape.vertices, width, height)


@dataclass
class SceneNode:
    id: int
    shape: Shape
    children: list["SceneNode"] = field(default_factory=list)
    depth: int = 0


@dataclass
class Scene:
    width: int
    height: int
    roots: list[SceneNode]
    seed: int = 0
    generator: str = GENERATOR_ID

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"scene size must be positive, got {self.width}x{self.height}")

    def iter_nodes(self) -> Iterator[tuple[SceneNode, SceneNode | None, SceneNode]]:
        """Yield ``(node, parent, root)`` in depth-first preorder."""

        def walk(node, parent, root):
            yield node, parent, root
            for child in node.children:
                yield from walk(child, node, root)

        for root in self.roots:
            yield from walk(root, None, root)


@dataclass(frozen=True)
class GtEntry:
    node_id: int
    visible_mask: Rle
    box: Box
    area: int
    depth: int = 0


@dataclass(frozen=True)
class GroundTruth:
    width: int
    height: int
    entries: tuple[GtEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class SceneParams:
    width: int = 256
    height: int = 256
    object_count_range: tuple[int, int] = (3, 12)
    part_probability: float = 0.5
    min_object_area: int = 64
    max_box_iou: float = 0.5
    max_attempts_per_object: int = 200

    def __post_init__(self):
        lo, hi = self.object_count_range
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        if lo < 0 or hi < lo:
            raise ValueError(f"bad object_count_range {self.object_count_range}")
        if not 0.0 <= self.part_probability <= 1.0:
            raise ValueError("part_probability outside [0, 1]")
        if self.min_object_area < 1 or self.width * self.height < self.min_object_area:
            raise ValueError("min_object_area must be in [1, width*height]")
        if not 0.0 < self.max_box_iou <= 1.0:
            raise ValueError("max_box_iou outside (0, 1]")


@dataclass(frozen=True)
class DetectorNoise:
    center_jitter_fraction: float = 0.0
    scale_jitter_fraction: float = 0.0
    score_noise: float = 0.0
    drop_probability: float = 0.0
    duplicate_probability: float = 0.0

    def __post_init__(self):
        for name in ("score_noise", "drop_probability", "duplicate_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for name in ("center_jitter_fraction", "scale_jitter_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v < 0.5:
                raise ValueError(f"{name}={v} outside [0, 0.5)")


# -- generation ---------------------------------------------------------------


def _mask_box(m: np.ndarray) -> tuple[float, float, float, float]:
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    return (float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def _random_shape(rng: np.random.Generator, cx: float, cy: float, side: float, aspect: float) -> Shape:
    """A shape roughly ``side`` pixels across centred on ``(cx, cy)``.

    Coordinates are snapped to half pixels so scene files round-trip exactly.
    """
    w = max(side * math.sqrt(aspect), 2.0)
    h = max(side / math.sqrt(aspect), 2.0)
    kind = int(rng.integers(3))
    if kind == 0:
        x0, y0 = round(cx - w / 2), round(cy - h / 2)
        return Rectangle(Box(x0, y0, x0 + max(round(w), 2), y0 + max(round(h), 2)))
    if kind == 1:
        r = max(round(min(w, h)), 3) / 2
        return Disk(Point(round(cx * 2) / 2, round(cy * 2) / 2), r)
    k = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radii = rng.uniform(0.6, 1.0, size=k)
    verts = tuple(
        Point(float(round(cx + 0.5 * w * rr * math.cos(a))), float(round(cy + 0.5 * h * rr * math.sin(a))))
        for a, rr in zip(angles, radii)
    )
    return Polygon(verts)


class _Placer:
    """Incremental root placement with occlusion and box-overlap checks."""

    def __init__(self, params: SceneParams):
        self.p = params
        self.top = np.full((params.height, params.width), -1, dtype=np.int32)
        self.areas: list[int] = []
        self.boxes = np.zeros((0, 4))

    def try_add(self, raster: np.ndarray) -> bool:
        p = self.p
        area = int(raster.sum())
        if area < p.min_object_area:
            return False
        below = self.top[raster]
        below = below[below >= 0]
        stolen = np.bincount(below, minlength=len(self.areas)) if below.size else np.zeros(len(self.areas), int)
        new_areas = np.asarray(self.areas, dtype=np.int64) - stolen
        if new_areas.size and new_areas.min() < p.min_object_area:
            return False
        boxes = self.boxes.copy()
        affected = np.flatnonzero(stolen)
        for r in affected:
            boxes[r] = _mask_box((self.top == r) & ~raster)
        new_box = np.array(_mask_box(raster))
        boxes = np.vstack([boxes, new_box]) if boxes.size else new_box[None, :]
        check = list(affected) + [len(boxes) - 1]
        for i in check:
            ious = iou_one_to_many(boxes[i], boxes)
            ious[i] = 0.0
            if ious.max(initial=0.0) > p.max_box_iou:
                return False
        self.top[raster] = len(self.areas)
        self.areas = list(new_areas) + [area]
        self.boxes = boxes
        return True


def _place_parts(
    rng: np.random.Generator,
    parent: SceneNode,
    parent_visible: np.ndarray,
    all_boxes: list[tuple[float, float, float, float]],
    params: SceneParams,
) -> None:
    if parent.depth >= MAX_DEPTH or rng.random() >= params.part_probability:
        return
    x0, y0, x1, y1 = _mask_box(parent_visible)
    pw, ph = x1 - x0, y1 - y0
    min_part_area = max(4, params.min_object_area // 4)
    n_parts = int(rng.integers(1, 3))
    taken = np.zeros_like(parent_visible)
    for _ in range(n_parts):
        for _attempt in range(20):
            frac = rng.uniform(0.25, 0.55)
            cx = rng.uniform(x0 + pw * 0.25, x1 - pw * 0.25)
            cy = rng.uniform(y0 + ph * 0.25, y1 - ph * 0.25)
            shape = _random_shape(rng, cx, cy, frac * math.sqrt(pw * ph), rng.uniform(0.7, 1.4))
            raster = rasterize_shape(shape, params.width, params.height)
            area = int(raster.sum())
            if area < min_part_area or (raster & ~parent_visible).any() or (raster & taken).any():
                continue
            box = np.array(_mask_box(raster))
            if all_boxes and iou_one_to_many(box, np.array(all_boxes)).max() > params.max_box_iou:
                continue
            child = SceneNode(-1, shape, [], parent.depth + 1)
            parent.children.append(child)
            all_boxes.append(tuple(box))
            taken |= raster
            _place_parts(rng, child, raster, all_boxes, params)
            break


def generate_scene(seed: int, params: SceneParams | None = None) -> Scene:
    """Deterministic scene for ``(seed, params)``.

    Every root keeps at least ``min_object_area`` visible pixels after
    occlusion, and no two visible boxes overlap by more than
    ``max_box_iou``, so noiseless detections survive NMS intact.
    """
    p = params or SceneParams()
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = p.object_count_range
    n = int(rng.integers(lo, hi + 1))
    placer = _Placer(p)
    shapes: list[Shape] = []
    budget = p.max_attempts_per_object * max(n, 1)
    min_side = math.sqrt(p.min_object_area) + 2
    base = math.sqrt(p.width * p.height / max(n, 1))
    attempts = 0
    while len(shapes) < n:
        if attempts >= budget:
            raise SceneGenerationError(
                f"placed {len(shapes)} of {n} objects within {budget} attempts; "
                "lower the object count or min_object_area"
            )
        attempts += 1
        side = min(max(base * rng.uniform(0.3, 1.0), min_side), min(p.width, p.height))
        cx = rng.uniform(side / 2, p.width - side / 2) if p.width > side else p.width / 2
        cy = rng.uniform(side / 2, p.height - side / 2) if p.height > side else p.height / 2
        shape = _random_shape(rng, cx, cy, side, rng.uniform(0.6, 1.6))
        raster = rasterize_shape(shape, p.width, p.height)
        if placer.try_add(raster):
            shapes.append(shape)

    roots = [SceneNode(-1, s, [], 0) for s in shapes]
    all_boxes = [tuple(b) for b in placer.boxes]
    for i, root in enumerate(roots):
        _place_parts(rng, root, placer.top == i, all_boxes, p)

    scene = Scene(p.width, p.height, roots, seed=seed)
    for new_id, (node, _, _) in enumerate(scene.iter_nodes()):
        node.id = new_id
    log.debug("scene seed=%d: %d roots after %d attempts", seed, n, attempts)
    return scene


# -- ground truth -------------------------------------------------------------


def rasterize_ground_truth(s: Scene, level: GtLevel = "all_nodes") -> GroundTruth:
    if level not in ("roots_only", "all_nodes"):
        raise ValueError(f"unknown ground-truth level {level!r}")
    top = np.full((s.height, s.width), -1, dtype=np.int32)
    for i, root in enumerate(s.roots):
        top[rasterize_shape(root.shape, s.width, s.height)] = i
    root_index = {id(r): i for i, r in enumerate(s.roots)}
    entries: list[GtEntry] = []
    for node, _parent, root in s.iter_nodes():
        if level == "roots_only" and node.depth > 0:
            continue
        visible = top == root_index[id(root)]
        if node is not root:
            visible &= rasterize_shape(node.shape, s.width, s.height)
        rle = rle_encode(visible)
        if rle.area == 0:
            continue
        entries.append(GtEntry(node.id, rle, rle.box, rle.area, node.depth))
    entries.sort(key=lambda e: e.node_id)
    return GroundTruth(s.width, s.height, tuple(entries))


# -- oracle detector ----------------------------------------------------------


def _jitter(box: Box, draws: np.ndarray, noise: DetectorNoise) -> Box:
    w, h = box.width, box.height
    dx = (2 * draws[0] - 1) * noise.center_jitter_fraction * w
    dy = (2 * draws[1] - 1) * noise.center_jitter_fraction * h
    sx = (2 * draws[2] - 1) * noise.scale_jitter_fraction
    sy = (2 * draws[3] - 1) * noise.scale_jitter_fraction
    return Box(
        box.x_min + dx - sx * w / 2,
        box.y_min + dy - sy * h / 2,
        box.x_max + dx + sx * w / 2,
        box.y_max + dy + sy * h / 2,
    )


def oracle_detections(gt: GroundTruth, noise: DetectorNoise | None = None, seed: int = 0) -> list[ScoredBox]:
    """Perturbed copies of the ground-truth boxes, standing in for a detector.

    Each entry consumes a fixed block of random draws so that changing one
    probability never reshuffles the perturbations of other entries.
    """
    noise = noise or DetectorNoise()
    rng = np.random.Generator(np.random.PCG64(seed))
    out: list[ScoredBox] = []
    for entry in gt.entries:
        d = rng.random(12)
        if d[0] < noise.drop_probability:
            continue
        score = min(max(1.0 - d[1] * noise.score_noise, 0.0), 1.0)
        out.append(ScoredBox(_jitter(entry.box, d[2:6], noise), score))
        if d[6] < noise.duplicate_probability:
            dup_score = min(max(1.0 - d[7] * noise.score_noise, 0.0), 1.0)
            out.append(ScoredBox(_jitter(entry.box, d[8:12], noise), dup_score))
    return out

