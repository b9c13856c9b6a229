"""Per-class outlier removal by density-based single-cluster growth.

Also composes class-balanced mini-batches for training an external
metric-learning network on the fused instances.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .records import InstanceRecord

DEFAULT_LAMBDA_D = 0.8


def l2_normalize(vectors) -> np.ndarray:
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if not np.isfinite(v).all():
        raise ValueError("embeddings must be finite")
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("cannot normalize a zero embedding")
    return v / norms


def pairwise_distances(embeddings) -> np.ndarray:
    """Euclidean distance matrix of an ``(n, d)`` array (or list of vectors)."""
    if len(embeddings) == 0:
        return np.zeros((0, 0))
    if any(np.ndim(e) != 1 for e in embeddings):
        raise ValueError("embeddings must be a sequence of 1-D vectors")
    dims = {len(e) for e in embeddings}
    if len(dims) != 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    x = np.asarray(embeddings, dtype=np.float64)
    if len(x) == 1:
        return np.zeros((1, 1))
    return squareform(pdist(x, metric="euclidean"))


def densities(dist: np.ndarray, lambda_d: float = DEFAULT_LAMBDA_D) -> np.ndarray:
    """Number of *other* instances strictly closer than ``lambda_d``."""
    dist = np.asarray(dist)
    close = dist < lambda_d
    np.fill_diagonal(close, False)
    return close.sum(axis=1)


@dataclass(frozen=True)
class ClusterResult:
    densities: np.ndarray
    seed: int
    members: tuple[int, ...]
    outliers: tuple[int, ...]


def density_cluster(dist: np.ndarray, lambda_d: float = DEFAULT_LAMBDA_D, n: int | None = None) -> ClusterResult:
    """Grow one cluster from the densest instance in a single ranked pass.

    Instances are visited by density (descending, ties by index). The first
    is the seed; each later one joins if its density exceeds ``n / 4`` and it
    lies within ``lambda_d`` of some current member. The rest are outliers.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0] if n is None else n
    if n < 1 or dist.shape != (n, n):
        raise ValueError(f"need a non-empty square distance matrix of size {n}, got {dist.shape}")
    dens = densities(dist, lambda_d)
    order = np.lexsort((np.arange(n), -dens))
    seed = int(order[0])
    members = [seed]
    outliers = []
    floor = n / 4
    for i in order[1:]:
        i = int(i)
        if dens[i] > floor and dist[i, members].min() < lambda_d:
            members.append(i)
        else:
            outliers.append(i)
    return ClusterResult(dens, seed, tuple(sorted(members)), tuple(sorted(outliers)))


def filter_instances(
    instances: list[InstanceRecord],
    embeddings,
    lambda_d: float = DEFAULT_LAMBDA_D,
) -> tuple[list[InstanceRecord], list[InstanceRecord], dict[int, ClusterResult]]:
    """Cluster each class independently; return ``(kept, removed, per_class)``.

    ``embeddings[i]`` belongs to ``instances[i]`` and is L2-normalized here.
    Input order is preserved within ``kept`` and ``removed``.
    """
    if len(instances) != len(embeddings):
        raise ValueError(f"{len(instances)} instances but {len(embeddings)} embeddings")
    if not instances:
        return [], [], {}
    emb = l2_normalize(embeddings)
    by_class: dict[int, list[int]] = defaultdict(list)
    for i, inst in enumerate(instances):
        by_class[inst.label].append(i)

    keep = np.zeros(len(instances), dtype=bool)
    results = {}
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        res = density_cluster(pairwise_distances(emb[idx]), lambda_d)
        keep[idx[list(res.members)]] = True
        results[label] = res

    kept = [inst.tagged("cluster:member") for inst, k in zip(instances, keep) if k]
    removed = [inst.tagged("cluster:outlier") for inst, k in zip(instances, keep) if not k]
    return kept, removed, results


@dataclass(frozen=True)
class TripletBatchConfig:
    classes_per_batch: int = 2
    instances_per_class: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.classes_per_batch < 2 or self.instances_per_class < 2:
            raise ValueError("triplet batches need at least 2 classes and 2 instances per class")


def compose_triplet_batches(
    instances: list[InstanceRecord], cfg: TripletBatchConfig, num_batches: int = 1
) -> list[list[int]]:
    """Sample batches of instance indices: ``b`` random classes, ``a`` instances each.

    Classes with fewer than ``a`` instances are sampled with replacement.
    """
    by_class: dict[int, list[int]] = defaultdict(list)
    for i, inst in enumerate(instances):
        by_class[inst.label].append(i)
    labels = sorted(by_class)
    b, a = cfg.classes_per_batch, cfg.instances_per_class
    if len(labels) < b:
        raise ValueError(f"need {b} non-empty classes, found {len(labels)}")
    rng = np.random.default_rng(cfg.seed)
    batches = []
    for _ in range(num_batches):
        batch = []
        for label in rng.choice(labels, size=b, replace=False):
            pool = by_class[int(label)]
            picks = rng.choice(pool, size=a, replace=len(pool) < a)
            batch.extend(int(p) for p in picks)
        batches.append(batch)
    return batches
