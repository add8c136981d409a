"""Binary masks, run-length encoding and the COCO compressed-RLE codec.

Dense masks are plain numpy arrays of shape ``(height, width)`` in row-major
order: ``bool`` for binary masks and floats in ``[0, 1]`` for soft masks.
Run-length encodings scan the image column by column (top to bottom, then
left to right), starting with a background run.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, MalformedRleError, PolygonError
from .geometry import Box, Point

BinaryMask = np.ndarray
SoftMask = np.ndarray


@dataclass(frozen=True)
class Rle:
    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.width < 0 or self.height < 0:
            raise MalformedRleError(f"negative dimensions {self.width}x{self.height}")
        if not isinstance(self.counts, tuple):
            object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts):
            raise MalformedRleError("negative run length")
        total = sum(self.counts)
        if total != self.width * self.height:
            raise MalformedRleError(
                f"run lengths sum to {total}, expected {self.width * self.height}"
            )

    @cached_property
    def _ends(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.counts, dtype=np.int64))

    @cached_property
    def _fg_intervals(self) -> tuple[np.ndarray, np.ndarray]:
        """Half-open ``[start, end)`` scan intervals of every foreground run."""
        ends = self._ends
        starts = ends - np.asarray(self.counts, dtype=np.int64)
        odd = slice(1, None, 2)
        s, e = starts[odd], ends[odd]
        keep = e > s
        return s[keep], e[keep]

    @cached_property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))

    @cached_property
    def box(self) -> Box | None:
        return _box_from_intervals(*self._fg_intervals, self.height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def is_canonical(self) -> bool:
        return all(c > 0 for c in self.counts[1:])


def rle_encode(m: BinaryMask) -> Rle:
    m = np.asarray(m, dtype=bool)
    if m.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D mask, got shape {m.shape}")
    h, w = m.shape
    flat = m.T.ravel()
    if flat.size == 0:
        return Rle(w, h, ())
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return Rle(w, h, tuple(runs))


def rle_decode(r: Rle) -> BinaryMask:
    n = r.width * r.height
    counts = np.asarray(r.counts, dtype=np.int64)
    if int(counts.sum()) != n:
        raise MalformedRleError(f"run lengths sum to {int(counts.sum())}, expected {n}")
    values = (np.arange(len(counts)) % 2).astype(bool)
    flat = np.repeat(values, counts)
    return flat.reshape(r.width, r.height).T.copy()


def canonicalize(r: Rle) -> Rle:
    """Merge runs separated by interior zero-length runs."""
    if r.is_canonical():
        return r
    out: list[int] = [r.counts[0]]
    fg = False
    for c in r.counts[1:]:
        fg = not fg
        if c == 0:
            continue
        if (len(out) % 2 == 0) == fg:
            out[-1] += c
        else:
            out.append(c)
    return Rle(r.width, r.height, tuple(out))


def rle_area(r: Rle) -> int:
    return r.area


def rle_iou(a: Rle, b: Rle) -> float:
    """Mask IoU computed on run boundaries, never building dense masks."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            f"mask sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    area_a, area_b = a.area, b.area
    if area_a == 0 or area_b == 0:
        return 0.0
    if a is b or a.counts == b.counts:
        return 1.0
    inter = _intersection_area(a, b)
    return inter / (area_a + area_b - inter)


def _intersection_area(a: Rle, b: Rle) -> int:
    ea, eb = a._ends, b._ends
    bounds = np.union1d(ea, eb)
    starts = np.concatenate(([0], bounds[:-1]))
    lengths = bounds - starts
    # Run index covering scan position `start`; odd runs are foreground.
    ia = np.searchsorted(ea, starts, side="right")
    ib = np.searchsorted(eb, starts, side="right")
    both = (ia % 2 == 1) & (ib % 2 == 1)
    return int(lengths[both].sum())


def _box_from_intervals(starts: np.ndarray, ends: np.ndarray, height: int) -> Box | None:
    if starts.size == 0:
        return None
    last = ends - 1
    c0, c1 = starts // height, last // height
    single = c0 == c1
    r0 = np.where(single, starts % height, 0)
    r1 = np.where(single, last % height, height - 1)
    return Box(float(c0.min()), float(r0.min()), float(c1.max() + 1), float(r1.max() + 1))


def mask_to_box(r: Rle) -> Box | None:
    """Tightest pixel-edge box around the foreground, ``None`` when empty."""
    return r.box


def polygon_rasterize(vertices: Sequence[Point], width: int, height: int) -> BinaryMask:
    """Even-odd fill sampled at pixel centers.

    Pixel centers lying exactly on an edge count as outside.
    """
    if len(vertices) < 3:
        raise PolygonError(f"polygon needs at least 3 vertices, got {len(vertices)}")
    out = np.zeros((height, width), dtype=bool)
    if width == 0 or height == 0:
        return out
    xs = np.array([float(v.x) for v in vertices])
    ys = np.array([float(v.y) for v in vertices])
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise PolygonError("non-finite polygon vertex")
    x0, y0 = xs, ys
    x1, y1 = np.roll(xs, -1), np.roll(ys, -1)
    row_lo = max(int(np.floor(ys.min() - 0.5)), 0)
    row_hi = min(int(np.ceil(ys.max() - 0.5)), height - 1)
    centers_x = np.arange(width) + 0.5
    for row in range(row_lo, row_hi + 1):
        py = row + 0.5
        # Half-open rule so a vertex on the scanline is counted once.
        crosses = (y0 <= py) != (y1 <= py)
        if not crosses.any():
            continue
        t = (py - y0[crosses]) / (y1[crosses] - y0[crosses])
        xi = np.sort(x0[crosses] + t * (x1[crosses] - x0[crosses]))
        for left, right in zip(xi[0::2], xi[1::2]):
            out[row] |= (centers_x > left) & (centers_x < right)
        flat = (y0 == py) & (y1 == py)
        for a, b in zip(np.minimum(x0, x1)[flat], np.maximum(x0, x1)[flat]):
            out[row] &= ~((centers_x >= a) & (centers_x <= b))
    return out


def binarize(m: SoftMask, threshold: float) -> BinaryMask:
    return np.asarray(m) > threshold


# COCO compressed RLE strings: delta-coded counts packed into 5-bit
# little-endian chunks, each shifted into printable ASCII by +48.
_CHAR_MIN = 48
_CHAR_MAX = 48 + 63


def coco_rle_to_string(r: Rle) -> str:
    counts = r.counts
    out: list[str] = []
    for i, c in enumerate(counts):
        x = c - counts[i - 2] if i > 2 else c
        more = True
        while more:
            chunk = x & 0x1F
            x >>= 5
            more = (x != -1) if (chunk & 0x10) else (x != 0)
            if more:
                chunk |= 0x20
            out.append(chr(chunk + _CHAR_MIN))
    return "".join(out)


def coco_rle_from_string(s: str, width: int, height: int) -> Rle:
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise MalformedRleError(f"truncated chunk sequence at character {p}")
            code = ord(s[p])
            if not _CHAR_MIN <= code <= _CHAR_MAX:
                raise MalformedRleError(f"illegal character {s[p]!r} at position {p}")
            c = code - _CHAR_MIN
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    if sum(counts) != width * height or any(c < 0 for c in counts):
        raise MalformedRleError(
            f"decoded counts sum to {sum(counts)}, expected {width * height}"
        )
    return Rle(width, height, tuple(counts))
