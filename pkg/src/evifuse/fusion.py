"""Fuse heatmap-derived and attention-derived proposals into object instances."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, connected_components, coverage, intersect, iou, union_box
from .heatmap import as_labels
from .records import InstanceRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionThresholds:
    tau_high: float = 0.65
    tau_low: float = 0.1
    tau_att: float = 0.5
    tau_cover: float = 0.5

    def __post_init__(self):
        if not 0 < self.tau_low < self.tau_high <= 1:
            raise ValueError(f"need 0 < tau_low < tau_high <= 1, got {self.tau_low}, {self.tau_high}")
        if not 0 < self.tau_att <= 1:
            raise ValueError(f"tau_att must lie in (0, 1], got {self.tau_att}")
        if not 0 < self.tau_cover < 1:
            raise ValueError(f"tau_cover must lie in (0, 1), got {self.tau_cover}")


@dataclass
class ClassProposals:
    label: int
    high: list[Box] = field(default_factory=list)
    low: list[Box] = field(default_factory=list)
    attention: list[Box] = field(default_factory=list)


@dataclass
class FusionResult:
    instances: list[InstanceRecord]
    dropped: int = 0


def threshold_to_boxes(channel: np.ndarray, tau: float) -> list[Box]:
    """Bounding boxes of the 4-connected regions where ``channel >= tau``."""
    return [c.box for c in connected_components(np.asarray(channel) >= tau)]


def _argmax(values: list[float]) -> int:
    # first maximum wins
    return int(np.argmax(values))


def fuse_class(p: ClassProposals, t: FusionThresholds | None = None, image_id: str = "") -> FusionResult:
    """Keep attention boxes backed by a confident heatmap box and reshape them.

    Each attention box ``a`` is matched to the high box it covers most. It is
    kept only if that coverage exceeds ``tau_cover``; the kept box is grown to
    enclose the high box and then clipped to the low box with the largest IoU
    against that high box. Clipping is applied last, so it wins when the two
    constraints disagree.
    """
    t = t or FusionThresholds()
    out: list[InstanceRecord] = []
    seen: set[Box] = set()
    dropped = 0
    if not p.high:
        return FusionResult(out, 0)
    for a in p.attention:
        covs = [coverage(a, h) for h in p.high]
        best = _argmax(covs)
        if covs[best] <= t.tau_cover:
            continue
        h_star = p.high[best]
        if not p.low:
            dropped += 1
            continue
        l_star = p.low[_argmax([iou(h_star, l) for l in p.low])]
        box = intersect(union_box(a, h_star), l_star)
        if box is None:
            dropped += 1
            log.warning("class %d: attention box %s clipped to nothing", p.label, a.as_list())
            continue
        if box in seen:
            continue
        seen.add(box)
        out.append(
            InstanceRecord(
                instance_id=f"{image_id}:{p.label}:{len(out)}",
                image_id=image_id,
                box=box,
                label=p.label,
                provenance=("fused",),
            )
        )
    return FusionResult(out, dropped)


def class_proposals(heat: np.ndarray, att: np.ndarray, label: int, t: FusionThresholds) -> ClassProposals:
    return ClassProposals(
        label=label,
        high=threshold_to_boxes(heat, t.tau_high),
        low=threshold_to_boxes(heat, t.tau_low),
        attention=threshold_to_boxes(att, t.tau_att),
    )


def fuse_image(
    heatmaps: np.ndarray,
    attention: np.ndarray,
    labels,
    t: FusionThresholds | None = None,
    image_id: str = "",
) -> FusionResult:
    """Run :func:`fuse_class` for every class present in the image.

    ``heatmaps`` and ``attention`` are normalized ``(C, H, W)`` stacks.
    Instance confidence is the mean heatmap value inside the fused box.
    """
    t = t or FusionThresholds()
    heatmaps = np.asarray(heatmaps)
    attention = np.asarray(attention)
    if heatmaps.shape != attention.shape:
        raise ValueError(f"heatmap shape {heatmaps.shape} != attention shape {attention.shape}")
    present = as_labels(labels, heatmaps.shape[0])
    instances: list[InstanceRecord] = []
    dropped = 0
    for c in np.flatnonzero(present):
        res = fuse_class(class_proposals(heatmaps[c], attention[c], int(c), t), t, image_id)
        dropped += res.dropped
        for inst in res.instances:
            b = inst.box
            conf = float(heatmaps[c, b.y0 : b.y1, b.x0 : b.x1].mean())
            instances.append(
                InstanceRecord(inst.instance_id, image_id, b, inst.label, inst.provenance, conf)
            )
    return FusionResult(instances, dropped)
