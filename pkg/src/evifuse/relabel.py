"""Discard instances whose classifier prediction disagrees with their label."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .records import InstanceRecord


def predicted_label(scores: Sequence[float]) -> int:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty score vector")
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return int(np.argmax(s))


def relabel_filter(
    instances: list[InstanceRecord], scores: Mapping[str, Sequence[float]]
) -> tuple[list[InstanceRecord], list[InstanceRecord]]:
    """Split ``instances`` into ``(kept, discarded)`` using per-instance scores.

    Kept instances keep their original label; nothing is rewritten.
    Discarded ones are tagged ``relabel:mismatch:<predicted>``.
    """
    kept, discarded = [], []
    for inst in instances:
        if inst.instance_id not in scores:
            raise KeyError(f"no classifier scores for instance {inst.instance_id!r}")
        pred = predicted_label(scores[inst.instance_id])
        if pred == inst.label:
            kept.append(inst if "relabel:kept" in inst.provenance else inst.tagged("relabel:kept"))
        else:
            discarded.append(inst.tagged(f"relabel:mismatch:{pred}"))
    return kept, discarded
