"""Integer rectangles, overlap ratios and 4-connected component extraction.

Boxes are half-open pixel rectangles ``[x0, x1) x [y0, y1)`` so that areas and
intersections are exact integer counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

# 4-connectivity; diagonal neighbours are not joined.
_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True, order=True)
class Box:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"invalid box {self.as_list()}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_seq(cls, values: Sequence[int]) -> "Box":
        x0, y0, x1, y1 = (int(v) for v in values)
        return cls(x0, y0, x1, y1)

    def inside(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height


def area(b: Box) -> int:
    return (b.x1 - b.x0) * (b.y1 - b.y0)


def intersection_area(a: Box, b: Box) -> int:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def intersect(a: Box, b: Box) -> Box | None:
    """Intersection rectangle, or ``None`` when the boxes share no pixel."""
    x0, y0 = max(a.x0, b.x0), max(a.y0, b.y0)
    x1, y1 = min(a.x1, b.x1), min(a.y1, b.y1)
    if x0 >= x1 or y0 >= y1:
        return None
    return Box(x0, y0, x1, y1)


def union_box(a: Box, b: Box) -> Box:
    """Smallest box enclosing both inputs."""
    return Box(min(a.x0, b.x0), min(a.y0, b.y0), max(a.x1, b.x1), max(a.y1, b.y1))


def iou(a: Box, b: Box) -> float:
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def coverage(a: Box, h: Box) -> float:
    """Fraction of ``h`` covered by ``a``."""
    return intersection_area(a, h) / area(h)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two ``(N, 4)`` / ``(M, 4)`` arrays of xyxy boxes."""
    a = np.asarray(boxes_a, dtype=np.int64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.int64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


@dataclass(frozen=True)
class Component:
    """A 4-connected pixel region.

    ``runs`` holds ``(y, x_start, x_end)`` half-open horizontal runs sorted in
    raster order.
    """

    runs: tuple[tuple[int, int, int], ...]
    box: Box
    pixel_count: int

    def pixels(self) -> Iterable[tuple[int, int]]:
        for y, xs, xe in self.runs:
            for x in range(xs, xe):
                yield y, x

    def mask(self, width: int, height: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        for y, xs, xe in self.runs:
            out[y, xs:xe] = True
        return out


def _runs_of(region: np.ndarray, x_off: int, y_off: int) -> tuple[tuple[int, int, int], ...]:
    runs = []
    padded = np.zeros((region.shape[0], region.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = region
    edges = np.diff(padded, axis=1)
    for row in range(region.shape[0]):
        starts = np.flatnonzero(edges[row] == 1)
        ends = np.flatnonzero(edges[row] == -1)
        for s, e in zip(starts, ends):
            runs.append((row + y_off, int(s) + x_off, int(e) + x_off))
    return tuple(runs)


def connected_components(mask: np.ndarray) -> list[Component]:
    """Maximal 4-connected regions of true pixels in a ``(H, W)`` boolean mask.

    Components are ordered by the top-left corner ``(y0, x0)`` of their
    bounding box; ties fall back to raster order of the first pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    labels, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
    if n == 0:
        return []
    comps = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        region = labels[sl] == idx
        box = Box(xs.start, ys.start, xs.stop, ys.stop)
        comps.append(
            (box.y0, box.x0, idx, Component(_runs_of(region, xs.start, ys.start), box, int(region.sum())))
        )
    comps.sort(key=lambda t: t[:3])
    return [c for *_, c in comps]
