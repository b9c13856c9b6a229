"""In-memory wiring of the image, instance and pixel level stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import embedfilter, metrics, synth
from .anchors import generate_anchors
from .config import PipelineConfig
from .fusion import fuse_image
from .heatmap import accumulate_heatmaps, background_channel, normalize_heatmaps
from .pixelfusion import (
    LocalAttentionPatch,
    combine_attention,
    instance_attention,
    label_with_uncertainty,
    probability_map,
)
from .records import InstanceRecord
from .relabel import relabel_filter


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def make_scenes(cfg: PipelineConfig) -> list[synth.Scene]:
    s = cfg.synth
    return [
        synth.generate_scene(
            scene_seed(cfg.seed, i),
            s.num_classes,
            s.width,
            s.height,
            s.n_objects,
            s.min_size,
            s.max_size,
            image_id=f"img{i:05d}",
        )
        for i in range(s.num_scenes)
    ]


def object_heatmaps(boxes, scores, labels, width: int, height: int) -> np.ndarray:
    return normalize_heatmaps(accumulate_heatmaps(boxes, scores, width, height), labels)


def pixel_labels(
    heat: np.ndarray,
    global_att: np.ndarray,
    patches: list[LocalAttentionPatch],
    labels,
    tau_u: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(probability_map, label_map)`` for one image."""
    _, height, width = heat.shape
    att = combine_attention(instance_attention(patches, labels, width, height), global_att)
    prob = probability_map(background_channel(heat, labels), background_channel(att, labels), labels)
    return prob, label_with_uncertainty(prob, tau_u)


@dataclass
class SyntheticRun:
    scenes: list[synth.Scene]
    fused: list[InstanceRecord] = field(default_factory=list)
    fusion_dropped: int = 0
    cluster_kept: list[InstanceRecord] = field(default_factory=list)
    cluster_removed: list[InstanceRecord] = field(default_factory=list)
    planted_outliers: set[str] = field(default_factory=set)
    relabel_kept: list[InstanceRecord] = field(default_factory=list)
    relabel_discarded: list[InstanceRecord] = field(default_factory=list)
    label_maps: dict[str, np.ndarray] = field(default_factory=dict)
    harvested: list[InstanceRecord] = field(default_factory=list)

    def ground_truth(self) -> metrics.GroundTruth:
        return metrics.GroundTruth(
            boxes={s.image_id: [(b, label) for label, b in s.objects] for s in self.scenes},
            label_maps={s.image_id: s.gt_map() for s in self.scenes},
        )


def detections_from(instances: list[InstanceRecord]) -> list[metrics.Detection]:
    return [
        metrics.Detection(i.image_id, i.box, i.label, 0.0 if i.confidence is None else i.confidence)
        for i in instances
    ]


def evaluate(
    label_maps: dict[str, np.ndarray],
    instances: list[InstanceRecord],
    gt: metrics.GroundTruth,
    num_classes: int,
    interpolation: str = "continuous",
) -> dict:
    ids = sorted(gt.label_maps)
    report: dict = {}
    if label_maps:
        missing = [i for i in ids if i not in label_maps]
        if missing:
            raise KeyError(f"no label map for images {missing[:5]}")
        pred = [label_maps[i] for i in ids]
        truth = [gt.label_maps[i] for i in ids]
        per, mean = metrics.miou(pred, truth, num_classes, exclude_uncertain=True)
        _, mean_all = metrics.miou(pred, truth, num_classes, exclude_uncertain=False)
        n_pix = sum(p.size for p in pred)
        n_unc = sum(int((p == metrics.UNCERTAIN).sum()) for p in pred)
        report.update(
            miou=mean,
            miou_per_class=[None if np.isnan(v) else float(v) for v in per],
            miou_uncertain_as_miss=mean_all,
            labeled_fraction=1.0 - n_unc / n_pix if n_pix else 0.0,
        )
    dets = detections_from(instances)
    _, report["corloc"] = metrics.corloc(dets, gt)
    _, report["map"] = metrics.voc_map(dets, gt, interpolation=interpolation)
    report["num_detections"] = len(dets)
    return report


def run_synthetic(cfg: PipelineConfig, scenes: list[synth.Scene] | None = None) -> tuple[SyntheticRun, dict]:
    """Generate scenes and evidence, run every stage, and score the result."""
    scenes = make_scenes(cfg) if scenes is None else scenes
    noise = cfg.synth.noise
    run = SyntheticRun(scenes)
    heat: dict[str, np.ndarray] = {}
    global_att: dict[str, np.ndarray] = {}
    embeddings = []

    for scene in scenes:
        anchors = generate_anchors(scene.width, scene.height, cfg.anchors)
        scores = synth.render_proposal_scores(scene, anchors, noise)
        heat[scene.image_id] = object_heatmaps(anchors, scores, scene.labels, scene.width, scene.height)
        global_att[scene.image_id], _ = synth.render_attention(scene, noise)
        res = fuse_image(heat[scene.image_id], global_att[scene.image_id], scene.labels, cfg.fusion, scene.image_id)
        run.fused.extend(res.instances)
        run.fusion_dropped += res.dropped
        emb, flags = synth.render_embeddings(res.instances, scene, noise, cfg.synth.embedding_dim)
        embeddings.append(emb)
        run.planted_outliers.update(i.instance_id for i, f in zip(res.instances, flags) if f)

    emb_all = np.concatenate(embeddings) if run.fused else np.zeros((0, cfg.synth.embedding_dim))
    run.cluster_kept, run.cluster_removed, _ = embedfilter.filter_instances(run.fused, emb_all, cfg.lambda_d)

    by_image: dict[str, list[InstanceRecord]] = {s.image_id: [] for s in scenes}
    for inst in run.fused:
        by_image[inst.image_id].append(inst)
    for scene in scenes:
        insts = by_image[scene.image_id]
        scores = synth.render_instance_scores(insts, scene, noise)
        kept, discarded = relabel_filter(insts, scores)
        run.relabel_kept.extend(kept)
        run.relabel_discarded.extend(discarded)
        _, patches = synth.render_attention(scene, noise, kept)
        prob, lmap = pixel_labels(heat[scene.image_id], global_att[scene.image_id], patches, scene.labels, cfg.tau_u)
        run.label_maps[scene.image_id] = lmap
        run.harvested.extend(metrics.boxes_from_labelmap(lmap, scene.image_id, prob))

    report = evaluate(run.label_maps, run.relabel_kept, run.ground_truth(), cfg.synth.num_classes, cfg.ap_interpolation)
    report.update(
        fused=len(run.fused),
        fusion_dropped=run.fusion_dropped,
        cluster_removed=len(run.cluster_removed),
        relabel_discarded=len(run.relabel_discarded),
        harvested=len(run.harvested),
    )
    return run, report
