"""Pseudo-label synthesis by filtering and fusing image, instance and pixel level evidence."""

from .anchors import AnchorConfig, generate_anchors
from .config import PipelineConfig
from .fusion import FusionThresholds, fuse_image
from .geometry import Box
from .records import InstanceRecord

__all__ = [
    "AnchorConfig",
    "Box",
    "FusionThresholds",
    "InstanceRecord",
    "PipelineConfig",
    "fuse_image",
    "generate_anchors",
]

__version__ = "0.1.0"
