"""Dense sliding-window anchor proposals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class AnchorConfig:
    stride: int = 8
    scale_fractions: tuple[float, ...] = (1 / 8, 1 / 4, 1 / 2, 1.0)
    aspect_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        object.__setattr__(self, "scale_fractions", tuple(float(f) for f in self.scale_fractions))
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError(f"stride must be a positive integer, got {self.stride}")
        if not self.scale_fractions or any(not 0 < f <= 1 for f in self.scale_fractions):
            raise ValueError(f"scale fractions must lie in (0, 1]: {self.scale_fractions}")
        if not self.aspect_ratios or any(r <= 0 for r in self.aspect_ratios):
            raise ValueError(f"aspect ratios must be positive: {self.aspect_ratios}")


def anchor_shapes(width: int, height: int, cfg: AnchorConfig) -> np.ndarray:
    """``(S*R, 2)`` array of ``(w, h)`` window sizes, scale-major.

    Shapes are area preserving: ``w = s / sqrt(r)``, ``h = s * sqrt(r)``.
    """
    short = min(width, height)
    shapes = []
    for frac in cfg.scale_fractions:
        s = round_half_up(frac * short)
        for r in cfg.aspect_ratios:
            w = max(1, int(round_half_up(s / np.sqrt(r))))
            h = max(1, int(round_half_up(s * np.sqrt(r))))
            shapes.append((w, h))
    return np.array(shapes, dtype=np.int64).reshape(-1, 2)


def generate_anchors(width: int, height: int, cfg: AnchorConfig | None = None) -> np.ndarray:
    """Return an ``(N, 4)`` int64 array of xyxy windows lying fully inside the image.

    Centres sit at ``((i + 0.5) * stride, (j + 0.5) * stride)`` for
    ``i < width // stride`` and ``j < height // stride``. Windows crossing the
    border are dropped, not clipped. Order is location-major (row by row, then
    column), then scale, then aspect ratio.
    """
    cfg = cfg or AnchorConfig()
    if width < cfg.stride or height < cfg.stride:
        raise ValueError(f"image {width}x{height} is smaller than stride {cfg.stride}")
    shapes = anchor_shapes(width, height, cfg)
    ny, nx = height // cfg.stride, width // cfg.stride
    cy = (np.arange(ny) + 0.5) * cfg.stride
    cx = (np.arange(nx) + 0.5) * cfg.stride
    cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
    centers = np.stack([cxx.ravel(), cyy.ravel()], axis=1)  # (L, 2)

    w = shapes[None, :, 0]
    h = shapes[None, :, 1]
    x0 = np.floor(centers[:, None, 0] - w / 2.0).astype(np.int64)
    y0 = np.floor(centers[:, None, 1] - h / 2.0).astype(np.int64)
    boxes = np.stack([x0, y0, x0 + w, y0 + h], axis=-1).reshape(-1, 4)
    keep = (boxes[:, 0] >= 0) & (boxes[:, 1] >= 0) & (boxes[:, 2] <= width) & (boxes[:, 3] <= height)
    return boxes[keep]
