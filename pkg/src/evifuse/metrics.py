"""Evaluation measures: mIoU, CorLoc, VOC AP/mAP, multi-label P/R/F1, box harvesting."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Box, connected_components, iou
from .pixelfusion import UNCERTAIN
from .records import InstanceRecord


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: Box
    label: int
    confidence: float


@dataclass
class GroundTruth:
    """Per-image GT boxes ``(box, label)`` and optional pixel label maps."""

    boxes: dict[str, list[tuple[Box, int]]] = field(default_factory=dict)
    label_maps: dict[str, np.ndarray] = field(default_factory=dict)


def boxes_from_labelmap(
    label_map: np.ndarray, image_id: str = "", prob: np.ndarray | None = None
) -> list[InstanceRecord]:
    """One instance per 4-connected region of each non-background class.

    UNCERTAIN pixels belong to no region. When ``prob`` (the ``(C + 1, H, W)``
    probability map) is given, confidence is the mean class probability over
    the region's pixels.
    """
    label_map = np.asarray(label_map)
    out = []
    values = np.unique(label_map)
    for v in values[(values != 0) & (values != UNCERTAIN)]:
        for comp in connected_components(label_map == v):
            conf = None
            if prob is not None:
                conf = float(prob[v][comp.mask(label_map.shape[1], label_map.shape[0])].mean())
            out.append(
                InstanceRecord(
                    instance_id=f"{image_id}:h{len(out)}",
                    image_id=image_id,
                    box=comp.box,
                    label=int(v) - 1,
                    provenance=("harvested",),
                    confidence=conf,
                )
            )
    return out


def _as_map_list(maps) -> list[np.ndarray]:
    if isinstance(maps, np.ndarray) and maps.ndim == 2:
        return [maps]
    return [np.asarray(m) for m in maps]


def miou(pred, gt, num_classes: int, exclude_uncertain: bool = True) -> tuple[np.ndarray, float]:
    """Per-class IoU over labels ``0..num_classes`` and their mean.

    ``pred``/``gt`` are single ``(H, W)`` maps or equal-length sequences of
    maps; counts are pooled over all pixels. Classes absent from both pred and
    GT get ``nan`` and are left out of the mean. With ``exclude_uncertain``
    UNCERTAIN pixels are ignored; otherwise they count as misses.
    """
    preds, gts = _as_map_list(pred), _as_map_list(gt)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground-truth maps")
    k = num_classes + 1
    inter = np.zeros(k, dtype=np.int64)
    union = np.zeros(k, dtype=np.int64)
    for p, g in zip(preds, gts):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        p = p.astype(np.int64).ravel()
        g = g.astype(np.int64).ravel()
        if exclude_uncertain:
            keep = p != UNCERTAIN
            p, g = p[keep], g[keep]
        in_p = np.bincount(p[p < k], minlength=k)
        in_g = np.bincount(g, minlength=k)[:k]
        both = np.bincount(p[p == g], minlength=k)[:k]
        inter += both
        union += in_p + in_g - both
    per_class = np.full(k, np.nan)
    seen = union > 0
    per_class[seen] = inter[seen] / union[seen]
    mean = float(np.nanmean(per_class)) if seen.any() else float("nan")
    return per_class, mean


def _gt_by_class(gt: GroundTruth) -> dict[int, dict[str, list[Box]]]:
    out: dict[int, dict[str, list[Box]]] = defaultdict(lambda: defaultdict(list))
    for image_id, objs in gt.boxes.items():
        for box, label in objs:
            out[label][image_id].append(box)
    return out


def corloc(dets: Sequence[Detection], gt: GroundTruth, iou_thresh: float = 0.5) -> tuple[dict[int, float], float]:
    """Fraction of class-positive images whose top detection of that class hits GT."""
    gt_cls = _gt_by_class(gt)
    top: dict[tuple[str, int], Detection] = {}
    for d in dets:
        key = (d.image_id, d.label)
        if key not in top or d.confidence > top[key].confidence:
            top[key] = d
    per_class = {}
    for label in sorted(gt_cls):
        images = gt_cls[label]
        hits = 0
        for image_id, boxes in images.items():
            d = top.get((image_id, label))
            if d is not None and max(iou(d.box, g) for g in boxes) >= iou_thresh:
                hits += 1
        per_class[label] = hits / len(images)
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def average_precision(recall: np.ndarray, precision: np.ndarray, interpolation: str = "continuous") -> float:
    """Area under the precision envelope of a PR curve."""
    if interpolation == "11point":
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            mask = recall >= t
            ap += (precision[mask].max() if mask.any() else 0.0) / 11.0
        return float(ap)
    if interpolation != "continuous":
        raise ValueError(f"unknown AP interpolation {interpolation!r}")
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def voc_map(
    dets: Sequence[Detection],
    gt: GroundTruth,
    iou_thresh: float = 0.5,
    interpolation: str = "continuous",
) -> tuple[dict[int, float], float]:
    """Pascal-VOC style AP per GT class and their mean.

    Detections are ranked by confidence (ties: image id, then input order)
    and greedily matched to the best-overlapping GT box in their image; a
    detection whose best GT is already taken counts as a false positive.
    """
    gt_cls = _gt_by_class(gt)
    ranked = sorted(enumerate(dets), key=lambda t: (-t[1].confidence, t[1].image_id, t[0]))
    per_class = {}
    for label in sorted(gt_cls):
        images = gt_cls[label]
        n_gt = sum(len(b) for b in images.values())
        taken = {image_id: np.zeros(len(b), dtype=bool) for image_id, b in images.items()}
        tp = []
        for _, d in ranked:
            if d.label != label:
                continue
            boxes = images.get(d.image_id, [])
            if not boxes:
                tp.append(False)
                continue
            overlaps = [iou(d.box, g) for g in boxes]
            j = int(np.argmax(overlaps))
            if overlaps[j] >= iou_thresh and not taken[d.image_id][j]:
                taken[d.image_id][j] = True
                tp.append(True)
            else:
                tp.append(False)
        if not tp:
            per_class[label] = 0.0
            continue
        tp_arr = np.array(tp, dtype=np.float64)
        ctp = np.cumsum(tp_arr)
        recall = ctp / n_gt
        precision = ctp / np.arange(1, len(tp_arr) + 1)
        per_class[label] = average_precision(recall, precision, interpolation)
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def multilabel_prf(scores, gts, conf_thresh: float = 0.5, topk: int | None = None) -> dict[str, float]:
    """Macro (per-class, ``-C``) and micro (overall, ``-O``) precision/recall/F1.

    A label is predicted when its score is strictly above ``conf_thresh``
    and, if ``topk`` is set, it ranks among the image's ``topk`` highest
    scores. Per-class F1 is computed from the averaged P and R.
    """
    s = np.asarray(scores, dtype=np.float64)
    g = np.asarray(gts).astype(bool)
    if s.shape != g.shape or s.ndim != 2:
        raise ValueError(f"scores {s.shape} and ground truth {g.shape} must be equal-shape 2-D")
    pred = s > conf_thresh
    if topk is not None:
        order = np.argsort(-s, axis=1, kind="stable")
        in_top = np.zeros_like(pred)
        np.put_along_axis(in_top, order[:, :topk], True, axis=1)
        pred &= in_top
    tp = (pred & g).sum(axis=0)
    fp = (pred & ~g).sum(axis=0)
    fn = (~pred & g).sum(axis=0)
    p_c = np.divide(tp, tp + fp, out=np.zeros(tp.shape, dtype=np.float64), where=(tp + fp) > 0)
    r_c = np.divide(tp, tp + fn, out=np.zeros(tp.shape, dtype=np.float64), where=(tp + fn) > 0)
    pc, rc = float(p_c.mean()), float(r_c.mean())
    TP, FP, FN = tp.sum(), fp.sum(), fn.sum()
    po = float(TP / (TP + FP)) if TP + FP > 0 else 0.0
    ro = float(TP / (TP + FN)) if TP + FN > 0 else 0.0
    return {"P-C": pc, "R-C": rc, "F1-C": _f1(pc, rc), "P-O": po, "R-O": ro, "F1-O": _f1(po, ro)}
