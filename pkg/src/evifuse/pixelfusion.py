"""Pixel-level integration of heatmaps and attention into labels with uncertainty.

Probability maps and label maps use channel 0 for background and channel
``c + 1`` for class ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box
from .heatmap import as_labels, normalize_heatmaps

UNCERTAIN = 65535
DEFAULT_TAU_U = 0.6


@dataclass(frozen=True)
class LocalAttentionPatch:
    instance_id: str
    label: int
    box: Box
    patch: np.ndarray

    def __post_init__(self):
        if self.patch.shape != (self.box.height, self.box.width):
            raise ValueError(
                f"patch shape {self.patch.shape} does not match box {self.box.height}x{self.box.width}"
            )


def instance_attention(patches: list[LocalAttentionPatch], labels, width: int, height: int) -> np.ndarray:
    """Paste-add local attention patches into a ``(C, H, W)`` stack, then normalize."""
    present = as_labels(labels)
    acc = np.zeros((present.size, height, width), dtype=np.float64)
    for p in patches:
        b = p.box
        if not b.inside(width, height):
            raise ValueError(f"patch box {b.as_list()} outside {width}x{height} image")
        acc[p.label, b.y0 : b.y1, b.x0 : b.x1] += p.patch
    return normalize_heatmaps(acc, present)


def combine_attention(local: np.ndarray, global_: np.ndarray) -> np.ndarray:
    local = np.asarray(local)
    global_ = np.asarray(global_)
    if local.shape != global_.shape:
        raise ValueError(f"attention shapes differ: {local.shape} vs {global_.shape}")
    return np.maximum(local, global_)


def active_channels(labels) -> np.ndarray:
    """Boolean mask over ``C + 1`` channels: background plus present classes."""
    return np.concatenate([[True], as_labels(labels)])


def _masked_softmax(x: np.ndarray, active: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    z = x[active]
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    out[active] = e / e.sum(axis=0, keepdims=True)
    return out


def probability_map(heat: np.ndarray, attention: np.ndarray, labels) -> np.ndarray:
    """Softmax of the product of channel-softmaxed heatmaps and attention.

    Both inputs are ``(C + 1, H, W)`` stacks with the background channel
    attached. Every softmax runs over the active channels only; inactive
    channels of the result are exactly zero.
    """
    heat = np.asarray(heat, dtype=np.float64)
    attention = np.asarray(attention, dtype=np.float64)
    if heat.shape != attention.shape:
        raise ValueError(f"heatmap shape {heat.shape} != attention shape {attention.shape}")
    active = active_channels(labels)
    if active.size != heat.shape[0]:
        raise ValueError(f"{active.size} channels expected from labels, stack has {heat.shape[0]}")
    h = _masked_softmax(heat, active)
    a = _masked_softmax(attention, active)
    return _masked_softmax(h * a, active)


def label_with_uncertainty(prob: np.ndarray, tau_u: float = DEFAULT_TAU_U) -> np.ndarray:
    """Argmax label where the top probability is strictly above ``tau_u``, else UNCERTAIN."""
    prob = np.asarray(prob)
    labels = np.argmax(prob, axis=0).astype(np.uint16)
    labels[prob.max(axis=0) <= tau_u] = UNCERTAIN
    return labels
