"""Synthetic scenes and stylized evidence with known ground truth.

Stands in for the external networks (detector, attention, embedding net,
instance classifier) so the pipeline can be graded without any model.
Every render function is deterministic given ``NoiseConfig.seed`` and the
scene's image id.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import Box, iou_matrix
from .heatmap import normalize_heatmaps
from .pixelfusion import LocalAttentionPatch
from .records import InstanceRecord

_STREAMS = {"proposals": 1, "attention": 2, "embeddings": 3, "scores": 4}


@dataclass(frozen=True)
class Scene:
    image_id: str
    width: int
    height: int
    num_classes: int
    objects: tuple[tuple[int, Box], ...]

    @property
    def labels(self) -> np.ndarray:
        y = np.zeros(self.num_classes, dtype=np.uint8)
        for label, _ in self.objects:
            y[label] = 1
        return y

    def gt_map(self) -> np.ndarray:
        """Pixel labels (0 = background, ``c + 1`` = class c); later objects occlude earlier."""
        m = np.zeros((self.height, self.width), dtype=np.uint16)
        for label, b in self.objects:
            m[b.y0 : b.y1, b.x0 : b.x1] = label + 1
        return m

    def to_json(self) -> dict:
        return {
            "schema": "scene",
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "num_classes": self.num_classes,
            "objects": [{"label": label, "box": b.as_list()} for label, b in self.objects],
        }

    @classmethod
    def from_json(cls, rec: dict) -> "Scene":
        objs = tuple((int(o["label"]), Box.from_seq(o["box"])) for o in rec["objects"])
        scene = cls(str(rec["image_id"]), int(rec["width"]), int(rec["height"]), int(rec["num_classes"]), objs)
        for label, b in objs:
            if not b.inside(scene.width, scene.height) or not 0 <= label < scene.num_classes:
                raise ValueError(f"scene {scene.image_id}: bad object {label} {b.as_list()}")
        return scene


@dataclass(frozen=True)
class NoiseConfig:
    score_sigma: float = 0.0
    blur_radius: int = 0
    shrink: float = 1.0
    embedding_sigma: float = 0.0
    outlier_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.score_sigma, self.blur_radius, self.shrink, self.embedding_sigma) < 0:
            raise ValueError("noise parameters must be non-negative")
        if not 0 < self.shrink <= 1:
            raise ValueError(f"shrink must lie in (0, 1], got {self.shrink}")
        if not 0 <= self.outlier_rate <= 1:
            raise ValueError(f"outlier rate must lie in [0, 1], got {self.outlier_rate}")
        if int(self.blur_radius) != self.blur_radius:
            raise ValueError("blur radius must be an integer")


def _rng(seed: int, image_id: str, stream: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(image_id.encode()), _STREAMS[stream]])


def generate_scene(
    seed: int,
    num_classes: int,
    width: int,
    height: int,
    n_objects: tuple[int, int] = (1, 3),
    min_size: int | None = None,
    max_size: int | None = None,
    image_id: str | None = None,
) -> Scene:
    """Random scene with ``n_objects`` objects of pairwise distinct classes.

    Object sides are drawn uniformly from ``[min_size, max_size]``
    (defaults: a sixth and a half of the short image side).
    """
    short = min(width, height)
    min_size = max(2, short // 6) if min_size is None else min_size
    max_size = max(min_size, short // 2) if max_size is None else max_size
    lo, hi = n_objects
    if min_size < 1 or min_size > short or max_size > short:
        raise ValueError(f"object sizes [{min_size}, {max_size}] do not fit a {width}x{height} image")
    if not 1 <= lo <= hi or hi > num_classes:
        raise ValueError(f"object count range {n_objects} invalid for {num_classes} classes")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(lo, hi + 1))
    classes = rng.choice(num_classes, size=n, replace=False)
    objects = []
    for c in classes:
        w = int(rng.integers(min_size, max_size + 1))
        h = int(rng.integers(min_size, max_size + 1))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(0, height - h + 1))
        objects.append((int(c), Box(x0, y0, x0 + w, y0 + h)))
    return Scene(image_id if image_id is not None else f"img{seed:06d}", width, height, num_classes, tuple(objects))


def render_proposal_scores(scene: Scene, boxes, noise: NoiseConfig) -> np.ndarray:
    """``(N, C)`` simulated detector scores for xyxy ``boxes``.

    Class c scores the best IoU against GT objects of class c plus Gaussian
    noise, clamped to [0, 1].
    """
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    scores = np.zeros((len(boxes), scene.num_classes))
    if scene.objects:
        gt = np.array([b.as_list() for _, b in scene.objects])
        overlaps = iou_matrix(boxes, gt)
        for j, (label, _) in enumerate(scene.objects):
            scores[:, label] = np.maximum(scores[:, label], overlaps[:, j])
    if noise.score_sigma > 0:
        scores += _rng(noise.seed, scene.image_id, "proposals").normal(0.0, noise.score_sigma, scores.shape)
    return np.clip(scores, 0.0, 1.0)


def hot_region(b: Box, shrink: float) -> Box:
    """Centred sub-box holding about ``shrink`` of the box area."""
    side = np.sqrt(shrink)
    w = max(1, int(np.floor(b.width * side + 0.5)))
    h = max(1, int(np.floor(b.height * side + 0.5)))
    x0 = b.x0 + (b.width - w) // 2
    y0 = b.y0 + (b.height - h) // 2
    return Box(x0, y0, x0 + w, y0 + h)


def object_attention(scene: Scene, noise: NoiseConfig) -> list[np.ndarray]:
    """Per-object ``(H, W)`` maps: blurred indicator of the shrunken object box."""
    maps = []
    for _, b in scene.objects:
        m = np.zeros((scene.height, scene.width))
        hot = hot_region(b, noise.shrink)
        m[hot.y0 : hot.y1, hot.x0 : hot.x1] = 1.0
        if noise.blur_radius > 0:
            m = ndimage.uniform_filter(m, size=2 * int(noise.blur_radius) + 1, mode="constant")
        maps.append(m)
    return maps


def render_attention(
    scene: Scene, noise: NoiseConfig, instances: list[InstanceRecord] | None = None
) -> tuple[np.ndarray, list[LocalAttentionPatch]]:
    """Global attention ``(C, H, W)`` and local attention patches.

    Patches are cut from the class-wise raw attention over each instance box,
    or over each GT box when ``instances`` is None.
    """
    per_obj = object_attention(scene, noise)
    raw = np.zeros((scene.num_classes, scene.height, scene.width))
    for (label, _), m in zip(scene.objects, per_obj):
        raw[label] = np.maximum(raw[label], m)
    global_att = normalize_heatmaps(raw, scene.labels)

    patches = []
    if instances is None:
        for k, ((label, b), m) in enumerate(zip(scene.objects, per_obj)):
            patches.append(
                LocalAttentionPatch(f"{scene.image_id}:gt{k}", label, b, m[b.y0 : b.y1, b.x0 : b.x1].copy())
            )
    else:
        for inst in instances:
            b = inst.box
            patches.append(
                LocalAttentionPatch(inst.instance_id, inst.label, b, raw[inst.label, b.y0 : b.y1, b.x0 : b.x1].copy())
            )
    return global_att, patches


def class_centroids(num_classes: int, dim: int) -> np.ndarray:
    if dim <= num_classes:
        raise ValueError(f"embedding dimension {dim} must exceed the class count {num_classes}")
    return np.eye(num_classes, dim)


def render_embeddings(
    instances: list[InstanceRecord], scene: Scene, noise: NoiseConfig, dim: int = 32
) -> tuple[np.ndarray, np.ndarray]:
    """Unit embeddings ``(n, dim)`` and a boolean planted-outlier flag per instance.

    Inliers are their class's basis-vector centroid plus isotropic noise whose
    expected norm is ``embedding_sigma``. Planted outliers point away from all
    centroids at once: at least sqrt(2) from every centroid, and 1.6 or more
    when the class count is small enough.
    """
    centroids = class_centroids(scene.num_classes, dim)
    rng = _rng(noise.seed, scene.image_id, "embeddings")
    away = -centroids.sum(axis=0)
    away /= np.linalg.norm(away)
    emb = np.zeros((len(instances), dim))
    flags = np.zeros(len(instances), dtype=bool)
    for i, inst in enumerate(instances):
        jitter = rng.normal(0.0, noise.embedding_sigma / np.sqrt(dim), dim) if noise.embedding_sigma > 0 else 0.0
        if rng.random() < noise.outlier_rate:
            r = rng.normal(size=dim)
            r -= centroids.T @ (centroids @ r)
            v = away + r / np.linalg.norm(r)
            flags[i] = True
        else:
            v = centroids[inst.label] + jitter
        emb[i] = v / np.linalg.norm(v)
    return emb, flags


def render_instance_scores(
    instances: list[InstanceRecord], scene: Scene, noise: NoiseConfig
) -> dict[str, np.ndarray]:
    """Simulated single-label classifier scores keyed by instance id.

    Class c scores the instance box's best IoU with a GT object of class c,
    plus the proposal score noise, clamped to [0, 1].
    """
    if not instances:
        return {}
    boxes = np.array([inst.box.as_list() for inst in instances])
    scores = render_proposal_scores(scene, boxes, NoiseConfig(score_sigma=0.0))
    if noise.score_sigma > 0:
        scores = np.clip(
            scores + _rng(noise.seed, scene.image_id, "scores").normal(0.0, noise.score_sigma, scores.shape), 0.0, 1.0
        )
    return {inst.instance_id: scores[i] for i, inst in enumerate(instances)}
