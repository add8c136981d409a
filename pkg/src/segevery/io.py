"""File formats: datasets, detections, proposals, scenes, run records, reports.

Every writer is canonical (sorted keys, floats rounded to 6 significant
digits) so identical inputs give byte-identical files. Loaders reject
invariant violations instead of repairing them and report where.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .decode import ExternalMasks
from .errors import FormatError, MalformedRleError, PolygonError, SegEveryError, VersionMismatchError
from .filtering import MaskProposal
from .geometry import Box, Point, ScoredBox
from .mask import Rle, canonicalize, coco_rle_from_string, coco_rle_to_string, polygon_rasterize, rle_encode
from .scene import GENERATOR_ID, Disk, GroundTruth, GtEntry, Polygon, Rectangle, Scene, SceneNode, Shape

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]
SCENE_VERSION = 1


# -- canonical JSON -----------------------------------------------------------


def _round6(x: float) -> float:
    if not math.isfinite(x):
        raise SegEveryError(f"cannot serialize non-finite value {x}")
    v = float(f"{x:.6g}")
    return 0.0 if v == 0 else v


def canonical(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round6(float(obj))
    if isinstance(obj, Mapping):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: Optional[int] = 2) -> str:
    separators = (",", ": ") if indent is not None else (",", ":")
    return json.dumps(canonical(obj), sort_keys=True, indent=indent, separators=separators, ensure_ascii=False) + "\n"


def write_json(obj: Any, path: PathLike, indent: Optional[int] = 2) -> None:
    write_text(dumps(obj, indent), path)


def write_text(text: str, path: PathLike) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write file: {exc.strerror}", str(path)) from exc


def read_json(path: PathLike) -> Any:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror}", str(path)) from exc
    text = raw.decode("utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FormatError(f"malformed JSON ({exc.msg})", f"{path}: byte {offset}") from exc


# -- datasets -----------------------------------------------------------------


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: int
    height: int


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    bbox: Box
    area: float
    polygons: tuple[tuple[float, ...], ...] = ()
    rle: Optional[Rle] = None
    rle_form: str = "polygon"  # polygon | counts | string

    def mask(self, width: int, height: int) -> Rle:
        if self.rle is not None:
            return self.rle
        dense = np.zeros((height, width), dtype=bool)
        for flat in self.polygons:
            verts = [Point(flat[i], flat[i + 1]) for i in range(0, len(flat) - 1, 2)]
            dense |= polygon_rasterize(verts, width, height)
        return rle_encode(dense)

    def segmentation_json(self) -> Any:
        if self.rle_form == "polygon":
            return [list(p) for p in self.polygons]
        assert self.rle is not None
        counts: Any = coco_rle_to_string(self.rle) if self.rle_form == "string" else list(self.rle.counts)
        return {"size": [self.rle.height, self.rle.width], "counts": counts}


@dataclass
class DatasetIndex:
    images: list[ImageInfo] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    dropped_zero_area: int = 0
    dropped_crowd: int = 0

    def image(self, image_id: int) -> ImageInfo:
        for im in self.images:
            if im.id == image_id:
                return im
        raise KeyError(image_id)

    def ground_truth(self, image_id: int) -> GroundTruth:
        im = self.image(image_id)
        entries = []
        for a in self.annotations:
            if a.image_id != image_id:
                continue
            m = a.mask(im.width, im.height)
            if m.area == 0:
                continue
            entries.append(GtEntry(a.id, m, m.box, m.area))
        return GroundTruth(im.width, im.height, tuple(entries))

    def ground_truths(self) -> dict[int, GroundTruth]:
        return {im.id: self.ground_truth(im.id) for im in self.images}


def _int_field(rec: Mapping, key: str, where: str) -> int:
    v = rec.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (isinstance(v, float) and not v.is_integer()):
        raise FormatError(f"field {key!r} must be an integer, got {v!r}", where)
    return int(v)


def _parse_rle(seg: Mapping, im: ImageInfo, where: str) -> tuple[Rle, str]:
    size = seg.get("size")
    if not (isinstance(size, list) and len(size) == 2):
        raise FormatError("RLE segmentation needs size [height, width]", where)
    h, w = int(size[0]), int(size[1])
    if (w, h) != (im.width, im.height):
        raise FormatError(f"mask size {w}x{h} does not match image {im.width}x{im.height}", where)
    counts = seg.get("counts")
    try:
        if isinstance(counts, str):
            return coco_rle_from_string(counts, w, h), "string"
        if isinstance(counts, list):
            return canonicalize(Rle(w, h, tuple(int(c) for c in counts))), "counts"
    except MalformedRleError as exc:
        raise FormatError(str(exc), where) from exc
    raise FormatError("RLE counts must be a list or a string", where)


def load_dataset(path: PathLike) -> DatasetIndex:
    """COCO/LVIS-style ground truth; only the fields the pipeline needs are read."""
    doc = read_json(path)
    if not isinstance(doc, Mapping):
        raise FormatError("top level must be an object", str(path))
    index = DatasetIndex()
    by_id: dict[int, ImageInfo] = {}
    for i, rec in enumerate(doc.get("images", [])):
        where = f"{path}: images[{i}]"
        if not isinstance(rec, Mapping):
            raise FormatError("image record must be an object", where)
        im = ImageInfo(_int_field(rec, "id", where), _int_field(rec, "width", where), _int_field(rec, "height", where))
        if im.width < 1 or im.height < 1:
            raise FormatError("image dimensions must be positive", where)
        if im.id in by_id:
            raise FormatError(f"duplicate image id {im.id}", where)
        by_id[im.id] = im
        index.images.append(im)
    for i, rec in enumerate(doc.get("annotations", [])):
        where = f"{path}: annotations[{i}]"
        if not isinstance(rec, Mapping):
            raise FormatError("annotation record must be an object", where)
        image_id = _int_field(rec, "image_id", where)
        if image_id not in by_id:
            raise FormatError(f"unknown image_id {image_id}", where)
        im = by_id[image_id]
        if rec.get("iscrowd"):
            index.dropped_crowd += 1
            continue
        area = float(rec.get("area", 0.0))
        if area <= 0:
            index.dropped_zero_area += 1
            continue
        bbox = rec.get("bbox")
        if not (isinstance(bbox, list) and len(bbox) == 4) or bbox[2] < 0 or bbox[3] < 0:
            raise FormatError(f"bbox must be [x, y, w, h] with w, h >= 0, got {bbox!r}", where)
        box = Box.from_xywh(*(float(v) for v in bbox))
        ann_id = _int_field(rec, "id", where) if "id" in rec else i
        seg = rec.get("segmentation")
        if isinstance(seg, list):
            polys = tuple(tuple(float(v) for v in p) for p in seg)
            if not polys or any(len(p) < 6 or len(p) % 2 for p in polys):
                raise FormatError("polygon segmentation needs >= 3 (x, y) pairs per polygon", where)
            index.annotations.append(Annotation(ann_id, image_id, box, area, polygons=polys))
        elif isinstance(seg, Mapping):
            rle, form = _parse_rle(seg, im, where)
            index.annotations.append(Annotation(ann_id, image_id, box, area, rle=rle, rle_form=form))
        else:
            raise FormatError(f"unknown segmentation shape {type(seg).__name__}", where)
    if index.dropped_zero_area:
        log.warning("%s: dropped %d zero-area annotations", path, index.dropped_zero_area)
    return index


def save_dataset(index: DatasetIndex, path: PathLike) -> None:
    doc = {
        "images": [{"id": im.id, "width": im.width, "height": im.height} for im in index.images],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "bbox": a.bbox.to_xywh(),
                "area": a.area,
                "segmentation": a.segmentation_json(),
            }
            for a in index.annotations
        ],
    }
    write_json(doc, path, indent=None)


def dataset_from_ground_truth(gts: Mapping[int, GroundTruth]) -> DatasetIndex:
    index = DatasetIndex()
    ann_id = 1
    for image_id in sorted(gts):
        gt = gts[image_id]
        index.images.append(ImageInfo(image_id, gt.width, gt.height))
        for e in gt.entries:
            index.annotations.append(
                Annotation(ann_id, image_id, e.box, float(e.area), rle=e.visible_mask, rle_form="string")
            )
            ann_id += 1
    return index


# -- detections ---------------------------------------------------------------


def load_detections(path: PathLike) -> dict[int, list[ScoredBox]]:
    """JSON-lines detections ``{image_id, bbox: [x, y, w, h], score}``."""
    out: dict[int, list[ScoredBox]] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror}", str(path)) from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path}: line {lineno}"
        try:
            rec = json.loads(line)
            image_id = _int_field(rec, "image_id", where)
            x, y, w, h = (float(v) for v in rec["bbox"])
            score = float(rec["score"])
        except FormatError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed detection record ({exc})", where) from exc
        if not 0.0 <= score <= 1.0:
            raise FormatError(f"score {score} outside [0, 1]", where)
        if w < 0 or h < 0:
            raise FormatError(f"negative box size {w}x{h}", where)
        out.setdefault(image_id, []).append(ScoredBox(Box.from_xywh(x, y, w, h), score))
    return out


def save_detections(detections: Mapping[int, Sequence[ScoredBox]], path: PathLike) -> None:
    lines = []
    for image_id in sorted(detections):
        for d in detections[image_id]:
            rec = {"image_id": image_id, "bbox": d.box.to_xywh(), "score": d.score}
            lines.append(dumps(rec, indent=None).rstrip("\n"))
    write_text("".join(line + "\n" for line in lines), path)


# -- proposals ----------------------------------------------------------------


def _proposal_records(records: Iterable) -> list[dict]:
    rows = []
    for rec in records:
        for p in rec.proposals:
            rows.append({
                "image_id": int(rec.image_id),
                "segmentation": {"size": [p.mask.height, p.mask.width], "counts": coco_rle_to_string(p.mask)},
                "score": _round6(p.score),
                "bbox": p.box.to_xywh(),
                "granularity": p.granularity,
                "prompt_index": int(p.source_prompt_index),
            })
    rows.sort(key=lambda r: (r["image_id"], -r["score"], r["segmentation"]["counts"].encode("ascii")))
    return rows


def export_proposals(records: Iterable, path: PathLike) -> None:
    """COCO results JSON for run records (anything with ``image_id`` and ``proposals``)."""
    write_json(_proposal_records(records), path, indent=None)


@dataclass
class ProposalSet:
    """Proposals loaded back from a results file, shaped like a run record."""

    image_id: int
    proposals: list[MaskProposal]


def load_proposals(path: PathLike) -> dict[int, list[MaskProposal]]:
    doc = read_json(path)
    if not isinstance(doc, list):
        raise FormatError("results file must be a JSON list", str(path))
    out: dict[int, list[MaskProposal]] = {}
    for i, rec in enumerate(doc):
        where = f"{path}: [{i}]"
        try:
            image_id = _int_field(rec, "image_id", where)
            seg = rec["segmentation"]
            h, w = (int(v) for v in seg["size"])
            counts = seg["counts"]
            mask = coco_rle_from_string(counts, w, h) if isinstance(counts, str) else Rle(w, h, tuple(counts))
            score = float(rec["score"])
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError, MalformedRleError) as exc:
            raise FormatError(f"malformed proposal record ({exc})", where) from exc
        if mask.area == 0:
            raise FormatError("proposal mask is empty", where)
        out.setdefault(image_id, []).append(
            MaskProposal(mask, score, mask.box, rec.get("granularity", "single"), int(rec.get("prompt_index", -1)))
        )
    return out


def proposal_sets(proposals: Mapping[int, Sequence[MaskProposal]]) -> list[ProposalSet]:
    return [ProposalSet(i, list(proposals[i])) for i in sorted(proposals)]


def external_masks(proposals: Sequence[MaskProposal]) -> ExternalMasks:
    return ExternalMasks(tuple(p.mask for p in proposals), tuple(p.score for p in proposals))


# -- scenes -------------------------------------------------------------------


def _shape_json(shape: Shape) -> dict:
    if isinstance(shape, Rectangle):
        return {"kind": "rectangle", "box": list(shape.box.as_tuple())}
    if isinstance(shape, Disk):
        return {"kind": "disk", "center": [shape.center.x, shape.center.y], "radius": shape.radius}
    return {"kind": "polygon", "vertices": [[v.x, v.y] for v in shape.vertices]}


def _shape_from_json(d: Mapping, where: str) -> Shape:
    try:
        kind = d["kind"]
        if kind == "rectangle":
            return Rectangle(Box(*(float(v) for v in d["box"])))
        if kind == "disk":
            return Disk(Point(*(float(v) for v in d["center"])), float(d["radius"]))
        if kind == "polygon":
            return Polygon(tuple(Point(float(x), float(y)) for x, y in d["vertices"]))
    except (KeyError, TypeError, ValueError, PolygonError) as exc:
        raise FormatError(f"malformed shape ({exc})", where) from exc
    raise FormatError(f"unknown shape kind {kind!r}", where)


def _node_json(node: SceneNode) -> dict:
    return {
        "id": node.id,
        "depth": node.depth,
        "shape": _shape_json(node.shape),
        "children": [_node_json(c) for c in node.children],
    }


def _node_from_json(d: Mapping, depth: int, where: str) -> SceneNode:
    if not isinstance(d, Mapping) or "id" not in d or "shape" not in d:
        raise FormatError("scene node needs id and shape", where)
    if d.get("depth", depth) != depth:
        raise FormatError(f"node depth {d.get('depth')} does not match its nesting level {depth}", where)
    children = [_node_from_json(c, depth + 1, f"{where}.children[{i}]") for i, c in enumerate(d.get("children", []))]
    return SceneNode(int(d["id"]), _shape_from_json(d["shape"], where), children, depth)


def scene_to_json(scene: Scene) -> dict:
    return {
        "format": "segevery.scene",
        "version": SCENE_VERSION,
        "generator": scene.generator,
        "seed": scene.seed,
        "width": scene.width,
        "height": scene.height,
        "roots": [_node_json(r) for r in scene.roots],
    }


def save_scene(scene: Scene, path: PathLike) -> None:
    write_json(scene_to_json(scene), path, indent=None)


def scene_from_json(doc: Any, where: str = "scene") -> Scene:
    if not isinstance(doc, Mapping):
        raise FormatError("scene file must hold an object", where)
    if doc.get("version") != SCENE_VERSION:
        raise VersionMismatchError(SCENE_VERSION, doc.get("version"), where)
    try:
        roots = [_node_from_json(r, 0, f"{where}: roots[{i}]") for i, r in enumerate(doc["roots"])]
        scene = Scene(int(doc["width"]), int(doc["height"]), roots, int(doc.get("seed", 0)),
                      str(doc.get("generator", GENERATOR_ID)))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed scene ({exc})", where) from exc
    ids = [n.id for n, _, _ in scene.iter_nodes()]
    if len(ids) != len(set(ids)):
        raise FormatError("scene node ids are not unique", where)
    return scene


def load_scene(path: PathLike) -> Scene:
    return scene_from_json(read_json(path), str(path))


def scene_files(directory: PathLike) -> list[Path]:
    return sorted(Path(directory).glob("scene_*.json"))


def load_scenes(directory: PathLike) -> list[Scene]:
    return [load_scene(p) for p in scene_files(directory)]


# -- run records and reports --------------------------------------------------


def save_run_records(records: Iterable, path: PathLike) -> None:
    write_json([r.summary() for r in sorted(records, key=lambda r: r.image_id)], path)
