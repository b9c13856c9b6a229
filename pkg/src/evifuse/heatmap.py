"""Object heatmaps: per-class accumulation of proposal scores.

Evidence stacks are plain ``(channels, H, W)`` float arrays. Image labels are
length-``C`` 0/1 vectors; heatmap channel ``c`` belongs to class ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box


@dataclass(frozen=True)
class ScoredProposal:
    box: Box
    scores: tuple[float, ...]


def as_labels(labels, num_classes: int | None = None) -> np.ndarray:
    y = np.asarray(labels).astype(bool).ravel()
    if num_classes is not None and y.size != num_classes:
        raise ValueError(f"label vector has {y.size} entries, expected {num_classes}")
    return y


def proposals_to_arrays(proposals, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    boxes = np.array([p.box.as_list() for p in proposals], dtype=np.int64).reshape(-1, 4)
    scores = np.array([p.scores for p in proposals], dtype=np.float64).reshape(-1, num_classes)
    return boxes, scores


def accumulate_heatmaps(boxes, scores, width: int, height: int) -> np.ndarray:
    """Sum each proposal's class scores over every pixel of its window.

    Uses a 2-D difference array per channel followed by two prefix sums, so
    the cost is ``O(C * H * W + N * C)`` regardless of window sizes.

    Parameters
    ----------
    boxes : (N, 4) int array of xyxy half-open windows inside the image.
    scores : (N, C) float array.

    Returns
    -------
    (C, H, W) float64 raw heatmap stack.
    """
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != boxes.shape[0]:
        raise ValueError(f"scores shape {scores.shape} does not match {boxes.shape[0]} boxes")
    num_classes = scores.shape[1]
    if boxes.size and (
        (boxes[:, 0] < 0).any()
        or (boxes[:, 1] < 0).any()
        or (boxes[:, 2] > width).any()
        or (boxes[:, 3] > height).any()
        or (boxes[:, 2] <= boxes[:, 0]).any()
        or (boxes[:, 3] <= boxes[:, 1]).any()
    ):
        raise ValueError("proposal boxes must be non-empty and lie inside the image")

    diff = np.zeros((num_classes, height + 1, width + 1), dtype=np.float64)
    if boxes.size:
        x0, y0, x1, y1 = boxes.T
        chans = np.arange(num_classes)[:, None]
        s = scores.T  # (C, N)
        np.add.at(diff, (chans, y0[None], x0[None]), s)
        np.add.at(diff, (chans, y0[None], x1[None]), -s)
        np.add.at(diff, (chans, y1[None], x0[None]), -s)
        np.add.at(diff, (chans, y1[None], x1[None]), s)
    out = diff.cumsum(axis=1).cumsum(axis=2)
    return out[:, :height, :width]


def normalize_heatmaps(raw: np.ndarray, labels) -> np.ndarray:
    """Min-shift then max-scale each present-class channel into [0, 1].

    Channels of absent classes, and constant channels, come out all zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    present = as_labels(labels, raw.shape[0])
    out = np.zeros_like(raw)
    for c in np.flatnonzero(present):
        shifted = raw[c] - raw[c].min()
        top = shifted.max()
        if top > 0:
            out[c] = shifted / top
    return out


def background_channel(stack: np.ndarray, labels) -> np.ndarray:
    """Prepend ``max(0, 1 - sum of present channels)`` as channel 0."""
    stack = np.asarray(stack, dtype=np.float64)
    present = as_labels(labels, stack.shape[0])
    bg = np.maximum(0.0, 1.0 - stack[present].sum(axis=0))
    return np.concatenate([bg[None], stack], axis=0)
