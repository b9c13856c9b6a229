"""Stage-per-subcommand driver.

Usage::

    evifuse <stage> [--config PATH] --in DIR --out DIR [--seed N] [--timings]

Inputs are looked up in ``--out`` first and then in ``--in``, so a stage can
run either against a separate input tree or in place on a work directory.
All outputs go to ``--out``. Exit codes: 0 ok, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import embedfilter, formats, metrics, synth
from .anchors import generate_anchors
from .config import ConfigError, PipelineConfig, load_config
from .fusion import fuse_image
from .geometry import Box
from .pipeline import evaluate, make_scenes, object_heatmaps, pixel_labels
from .pixelfusion import LocalAttentionPatch
from .records import InstanceRecord
from .relabel import relabel_filter

log = logging.getLogger("evifuse")

STAGES = ("anchors", "heatmap", "fuse", "cluster", "relabel", "pixels", "harvest", "eval", "synth", "all")


class MissingInput(OSError):
    def __init__(self, path: Path):
        super().__init__(f"missing input: {path}")
        self.path = path


@dataclass
class Workspace:
    src: Path
    dst: Path
    cfg: PipelineConfig
    counts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def find(self, rel: str) -> Path:
        for root in (self.dst, self.src):
            p = root / rel
            if p.exists():
                return p
        raise MissingInput(self.src / rel)

    def has(self, rel: str) -> bool:
        return (self.dst / rel).exists() or (self.src / rel).exists()

    def out(self, rel: str) -> Path:
        return self.dst / rel


@dataclass(frozen=True)
class ImageInfo:
    image_id: str
    width: int
    height: int
    labels: np.ndarray

    def to_json(self) -> dict:
        return {
            "schema": "image",
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "labels": [int(v) for v in self.labels],
        }

    @classmethod
    def from_json(cls, rec: dict) -> "ImageInfo":
        labels = np.asarray(rec["labels"], dtype=np.uint8)
        if labels.ndim != 1 or not set(np.unique(labels)) <= {0, 1}:
            raise ValueError(f"image {rec['image_id']}: labels must be a 0/1 vector")
        if not labels.any():
            raise ValueError(f"image {rec['image_id']}: no class present")
        return cls(str(rec["image_id"]), int(rec["width"]), int(rec["height"]), labels)


def _images(ws: Workspace) -> list[ImageInfo]:
    return [ImageInfo.from_json(r) for r in formats.read_jsonl(ws.find("images.jsonl"), "image")]


def _instances(ws: Workspace, name: str) -> list[InstanceRecord]:
    return [InstanceRecord.from_json(r) for r in formats.read_jsonl(ws.find(name), "instance")]


def _scenes(ws: Workspace) -> list[synth.Scene]:
    return [synth.Scene.from_json(r) for r in formats.read_jsonl(ws.find("scenes.jsonl"), "scene")]


def _check_stack(arr: np.ndarray, img: ImageInfo, channels: int, what: str) -> np.ndarray:
    expected = (channels, img.height, img.width)
    if arr.shape != expected:
        raise ValueError(f"{what} for {img.image_id}: shape {arr.shape}, expected {expected}")
    return arr.astype(np.float64)


# --------------------------------------------------------------------------- stages


def stage_anchors(ws: Workspace) -> None:
    n = 0
    for img in _images(ws):
        boxes = generate_anchors(img.width, img.height, ws.cfg.anchors)
        formats.write_jsonl(
            ws.out(f"anchors/{img.image_id}.jsonl"),
            ({"schema": "anchor", "box": [int(v) for v in b]} for b in boxes),
        )
        n += len(boxes)
    ws.counts["anchors"] = n


def _read_proposals(path: Path, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    boxes, scores = [], []
    for rec in formats.read_jsonl(path, "proposal"):
        s = rec["scores"]
        if len(s) != num_classes:
            raise ValueError(f"{path}: proposal has {len(s)} scores, expected {num_classes}")
        boxes.append(Box.from_seq(rec["box"]).as_list())
        scores.append(s)
    return np.array(boxes, dtype=np.int64).reshape(-1, 4), np.array(scores, dtype=np.float64).reshape(-1, num_classes)


def stage_heatmap(ws: Workspace) -> None:
    n = 0
    for img in _images(ws):
        boxes, scores = _read_proposals(ws.find(f"proposals/{img.image_id}.jsonl"), img.labels.size)
        if np.any((scores < 0) | (scores > 1)):
            raise ValueError(f"proposal scores for {img.image_id} must lie in [0, 1]")
        heat = object_heatmaps(boxes, scores, img.labels, img.width, img.height)
        formats.write_tensor(ws.out(f"heatmaps/{img.image_id}.evt"), heat)
        n += len(boxes)
    ws.counts["proposals"] = n


def stage_fuse(ws: Workspace) -> None:
    instances, dropped = [], 0
    for img in _images(ws):
        c = img.labels.size
        heat = _check_stack(formats.read_tensor(ws.find(f"heatmaps/{img.image_id}.evt")), img, c, "heatmap")
        att = _check_stack(formats.read_tensor(ws.find(f"attention/{img.image_id}.evt")), img, c, "attention")
        res = fuse_image(heat, att, img.labels, ws.cfg.fusion, img.image_id)
        instances.extend(res.instances)
        dropped += res.dropped
    formats.write_jsonl(ws.out("instances.jsonl"), (i.to_json() for i in instances))
    ws.counts.update(fused=len(instances), fusion_dropped=dropped)
    if dropped:
        ws.warnings.append(f"{dropped} fused boxes clipped to nothing and dropped")


def stage_cluster(ws: Workspace) -> None:
    instances = _instances(ws, "instances.jsonl")
    emb = formats.read_tensor(ws.find("embeddings.evt")).astype(np.float64)
    if emb.ndim != 2 or emb.shape[0] != len(instances):
        raise ValueError(f"embeddings shape {emb.shape} does not match {len(instances)} instances")
    kept, removed, per_class = embedfilter.filter_instances(instances, emb, ws.cfg.lambda_d)
    formats.write_jsonl(ws.out("clustered.jsonl"), (i.to_json() for i in kept + removed))
    ids_by_class: dict[int, list[str]] = {}
    for inst in instances:
        ids_by_class.setdefault(inst.label, []).append(inst.instance_id)
    summary = []
    for label, res in sorted(per_class.items()):
        ids = ids_by_class[label]
        summary.append(
            {
                "schema": "cluster",
                "label": label,
                "seed": ids[res.seed],
                "members": [ids[i] for i in res.members],
                "outliers": [ids[i] for i in res.outliers],
                "densities": [int(d) for d in res.densities],
            }
        )
    formats.write_jsonl(ws.out("clusters.jsonl"), summary)
    ws.counts.update(cluster_kept=len(kept), cluster_removed=len(removed))


def stage_relabel(ws: Workspace) -> None:
    instances = _instances(ws, "instances.jsonl")
    scores = {
        str(r["instance_id"]): r["scores"] for r in formats.read_jsonl(ws.find("instance_scores.jsonl"), "instance_scores")
    }
    kept, discarded = relabel_filter(instances, scores)
    formats.write_jsonl(ws.out("relabeled.jsonl"), (i.to_json() for i in kept))
    formats.write_jsonl(ws.out("discarded.jsonl"), (i.to_json() for i in discarded))
    ws.counts.update(relabel_kept=len(kept), relabel_discarded=len(discarded))


def _read_patches(ws: Workspace, image_id: str, keep: set[str]) -> list[LocalAttentionPatch]:
    rel = f"patches/{image_id}.jsonl"
    if not ws.has(rel):
        return []
    out = []
    for r in formats.read_jsonl(ws.find(rel), "patch"):
        if r["instance_id"] in keep:
            out.append(
                LocalAttentionPatch(str(r["instance_id"]), int(r["label"]), Box.from_seq(r["box"]), np.asarray(r["values"], dtype=np.float64))
            )
    return out


def stage_pixels(ws: Workspace) -> None:
    surviving = {i.instance_id for i in _instances(ws, "relabeled.jsonl")}
    uncertain = total = 0
    for img in _images(ws):
        c = img.labels.size
        heat = _check_stack(formats.read_tensor(ws.find(f"heatmaps/{img.image_id}.evt")), img, c, "heatmap")
        att = _check_stack(formats.read_tensor(ws.find(f"attention/{img.image_id}.evt")), img, c, "attention")
        patches = _read_patches(ws, img.image_id, surviving)
        prob, lmap = pixel_labels(heat, att, patches, img.labels, ws.cfg.tau_u)
        formats.write_tensor(ws.out(f"probability/{img.image_id}.evt"), prob)
        formats.write_tensor(ws.out(f"labelmaps/{img.image_id}.evt"), lmap)
        uncertain += int((lmap == metrics.UNCERTAIN).sum())
        total += lmap.size
    ws.counts.update(pixels=total, uncertain_pixels=uncertain)


def stage_harvest(ws: Workspace) -> None:
    out = []
    for img in _images(ws):
        lmap = formats.read_tensor(ws.find(f"labelmaps/{img.image_id}.evt"))
        prob_rel = f"probability/{img.image_id}.evt"
        prob = formats.read_tensor(ws.find(prob_rel)).astype(np.float64) if ws.has(prob_rel) else None
        out.extend(metrics.boxes_from_labelmap(lmap, img.image_id, prob))
    formats.write_jsonl(ws.out("harvested.jsonl"), (i.to_json() for i in out))
    ws.counts["harvested"] = len(out)


def stage_eval(ws: Workspace) -> None:
    scenes = _scenes(ws)
    gt = metrics.GroundTruth(boxes={s.image_id: [(b, label) for label, b in s.objects] for s in scenes})
    num_classes = scenes[0].num_classes if scenes else 0
    for s in scenes:
        rel = f"gt_labelmaps/{s.image_id}.evt"
        gt.label_maps[s.image_id] = formats.read_tensor(ws.find(rel)) if ws.has(rel) else s.gt_map()
    label_maps = {}
    if ws.has("labelmaps"):
        for s in scenes:
            label_maps[s.image_id] = formats.read_tensor(ws.find(f"labelmaps/{s.image_id}.evt"))
    if ws.has("detections.jsonl"):
        dets = [InstanceRecord.from_json(r) for r in formats.read_jsonl(ws.find("detections.jsonl"), "instance")]
    else:
        dets = _instances(ws, "relabeled.jsonl")
    report = evaluate(label_maps, dets, gt, num_classes, ws.cfg.ap_interpolation)
    if ws.has("image_scores.jsonl"):
        recs = {r["image_id"]: r["scores"] for r in formats.read_jsonl(ws.find("image_scores.jsonl"), "image_scores")}
        ids = [s.image_id for s in scenes]
        report["multilabel"] = metrics.multilabel_prf([recs[i] for i in ids], [s.labels for s in scenes])
        report["multilabel_top3"] = metrics.multilabel_prf([recs[i] for i in ids], [s.labels for s in scenes], topk=3)
    formats.write_json(ws.out("metrics.json"), report)
    ws.counts["evaluated_images"] = len(scenes)


def _synth_image_level(ws: Workspace) -> None:
    cfg = ws.cfg
    noise = cfg.synth.noise
    scenes = make_scenes(cfg)
    formats.write_jsonl(ws.out("scenes.jsonl"), (s.to_json() for s in scenes))
    formats.write_jsonl(
        ws.out("images.jsonl"),
        (ImageInfo(s.image_id, s.width, s.height, s.labels).to_json() for s in scenes),
    )
    for s in scenes:
        boxes = generate_anchors(s.width, s.height, cfg.anchors)
        scores = synth.render_proposal_scores(s, boxes, noise)
        formats.write_jsonl(
            ws.out(f"proposals/{s.image_id}.jsonl"),
            ({"schema": "proposal", "box": [int(v) for v in b], "scores": [float(x) for x in sc]} for b, sc in zip(boxes, scores)),
        )
        att, _ = synth.render_attention(s, noise)
        formats.write_tensor(ws.out(f"attention/{s.image_id}.evt"), att)
    ws.counts["scenes"] = len(scenes)


def _synth_instance_level(ws: Workspace) -> None:
    cfg = ws.cfg
    noise = cfg.synth.noise
    scenes = {s.image_id: s for s in _scenes(ws)}
    instances = _instances(ws, "instances.jsonl")
    by_image: dict[str, list[InstanceRecord]] = {i: [] for i in scenes}
    for inst in instances:
        if inst.image_id not in scenes:
            raise ValueError(f"instance {inst.instance_id} refers to unknown scene {inst.image_id}")
        by_image[inst.image_id].append(inst)
    emb_rows = {}
    score_recs = []
    planted = 0
    for image_id, scene in scenes.items():
        insts = by_image[image_id]
        emb, flags = synth.render_embeddings(insts, scene, noise, cfg.synth.embedding_dim)
        planted += int(flags.sum())
        for inst, e in zip(insts, emb):
            emb_rows[inst.instance_id] = e
        for iid, s in synth.render_instance_scores(insts, scene, noise).items():
            score_recs.append({"schema": "instance_scores", "instance_id": iid, "scores": [float(x) for x in s]})
        _, patches = synth.render_attention(scene, noise, insts)
        formats.write_jsonl(
            ws.out(f"patches/{image_id}.jsonl"),
            (
                {"schema": "patch", "instance_id": p.instance_id, "label": p.label, "box": p.box.as_list(), "values": p.patch.tolist()}
                for p in patches
            ),
        )
    emb = np.array([emb_rows[i.instance_id] for i in instances]).reshape(len(instances), cfg.synth.embedding_dim)
    formats.write_tensor(ws.out("embeddings.evt"), emb)
    formats.write_jsonl(ws.out("instance_scores.jsonl"), score_recs)
    ws.counts["planted_outliers"] = planted


def stage_synth(ws: Workspace) -> None:
    """Image-level evidence for fresh scenes, or instance-level evidence once fused instances exist."""
    if ws.has("instances.jsonl") and ws.has("scenes.jsonl"):
        _synth_instance_level(ws)
    else:
        _synth_image_level(ws)


_INSTANCE_EVIDENCE = ("embeddings.evt", "instance_scores.jsonl")


def stage_all(ws: Workspace, timings: dict) -> None:
    oracle = ws.has("scenes.jsonl")

    def run(name, fn):
        t0 = time.perf_counter()
        fn(ws)
        timings[name] = time.perf_counter() - t0
        log.info("%s done in %.3fs", name, timings[name])

    if not ws.has("images.jsonl") and not ws.has("scenes.jsonl"):
        raise MissingInput(ws.src / "images.jsonl")
    run("anchors", stage_anchors)
    run("heatmap", stage_heatmap)
    run("fuse", stage_fuse)
    if oracle and not all(ws.has(f) for f in _INSTANCE_EVIDENCE):
        run("synth", _synth_instance_level)
    run("cluster", stage_cluster)
    run("relabel", stage_relabel)
    run("pixels", stage_pixels)
    run("harvest", stage_harvest)
    if oracle:
        run("eval", stage_eval)
    else:
        ws.warnings.append("no scenes.jsonl ground truth; eval skipped")


STAGE_FUNCS = {
    "anchors": stage_anchors,
    "heatmap": stage_heatmap,
    "fuse": stage_fuse,
    "cluster": stage_cluster,
    "relabel": stage_relabel,
    "pixels": stage_pixels,
    "harvest": stage_harvest,
    "eval": stage_eval,
    "synth": stage_synth,
}


# --------------------------------------------------------------------------- driver


def run_stage(stage: str, cfg: PipelineConfig, src: Path, dst: Path, with_timings: bool = False) -> dict:
    """Run one stage (or ``all``) and write ``report.json``; returns the report."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    dst.mkdir(parents=True, exist_ok=True)
    ws = Workspace(src, dst, cfg)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    if stage == "all":
        stage_all(ws, timings)
    else:
        STAGE_FUNCS[stage](ws)
    timings[stage] = time.perf_counter() - t0
    formats.write_json(ws.out("config.json"), cfg.to_dict())
    report = {"stage": stage, "status": "ok", "counts": ws.counts, "warnings": ws.warnings}
    if with_timings:
        report["timings"] = timings
    formats.write_json(ws.out("report.json"), report)
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evifuse", description="Multi-evidence pseudo-label synthesis pipeline.")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", type=Path, default=None, help="JSON config (defaults used when omitted)")
    p.add_argument("--in", dest="src", type=Path, default=None, help="input directory (default: --out)")
    p.add_argument("--out", dest="dst", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--timings", action="store_true", help="record wall-clock timings in report.json")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(code: int, kind: str, exc: BaseException, path=None, dst: Path | None = None) -> int:
    record = {"status": "error", "kind": kind, "message": str(exc)}
    if path is not None:
        record["path"] = str(path)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if dst is not None:
        try:
            formats.write_json(dst / "error.json", record)
        except OSError:
            pass
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    src = args.src if args.src is not None else args.dst
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        run_stage(args.stage, cfg, src, args.dst, args.timings)
    except MissingInput as exc:
        return _fail(2, "missing_input", exc, exc.path, args.dst)
    except FileNotFoundError as exc:
        return _fail(2, "io", exc, exc.filename, args.dst)
    except (ConfigError, formats.FormatError, ValueError, KeyError) as exc:
        return _fail(1, "validation", exc, dst=args.dst)
    except OSError as exc:
        return _fail(2, "io", exc, getattr(exc, "filename", None), args.dst)
    return 0


if __name__ == "__main__":
    sys.exit(main())
