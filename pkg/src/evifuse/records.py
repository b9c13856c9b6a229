"""Instance records passed between pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .geometry import Box


@dataclass(frozen=True)
class InstanceRecord:
    """One harvested object instance with a single class label.

    ``label`` is the 0-based class index (pixel label maps use ``label + 1``).
    ``provenance`` lists the stages that produced or touched the instance,
    e.g. ``("fused",)`` or ``("fused", "relabel:kept")``.
    """

    instance_id: str
    image_id: str
    box: Box
    label: int
    provenance: tuple[str, ...] = ()
    confidence: float | None = None

    def tagged(self, tag: str) -> "InstanceRecord":
        return replace(self, provenance=self.provenance + (tag,))

    def to_json(self) -> dict:
        rec = {
            "schema": "instance",
            "instance_id": self.instance_id,
            "image_id": self.image_id,
            "box": self.box.as_list(),
            "label": self.label,
            "provenance": list(self.provenance),
        }
        if self.confidence is not None:
            rec["confidence"] = self.confidence
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "InstanceRecord":
        return cls(
            instance_id=str(rec["instance_id"]),
            image_id=str(rec["image_id"]),
            box=Box.from_seq(rec["box"]),
            label=int(rec["label"]),
            provenance=tuple(rec.get("provenance", ())),
            confidence=rec.get("confidence"),
        )
