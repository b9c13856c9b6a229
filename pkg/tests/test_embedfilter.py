import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evifuse.embedfilter import (
    TripletBatchConfig,
    compose_triplet_batches,
    density_cluster,
    densities,
    filter_instances,
    l2_normalize,
    pairwise_distances,
)
from evifuse.geometry import Box
from evifuse.records import InstanceRecord


def loop_distances(x):
    n = len(x)
    return np.array([[math.sqrt(sum((a - b) ** 2 for a, b in zip(x[i], x[j]))) for j in range(n)] for i in range(n)])


def inst(i, label):
    return InstanceRecord(f"i{i}", "img", Box(0, 0, 2, 2), label)


def test_distances_match_double_loop():
    x = np.random.default_rng(0).normal(size=(7, 5))
    np.testing.assert_allclose(pairwise_distances(x), loop_distances(x.tolist()), atol=1e-12)


def test_distance_input_validation():
    with pytest.raises(ValueError):
        pairwise_distances(np.zeros(4))


def test_l2_normalize():
    v = l2_normalize([[3.0, 4.0], [0.0, 2.0]])
    np.testing.assert_allclose(v, [[0.6, 0.8], [0.0, 1.0]])


def test_density_counts_strictly_closer_others():
    d = np.array([[0.0, 0.8, 0.5], [0.8, 0.0, 0.79], [0.5, 0.79, 0.0]])
    assert densities(d, 0.8).tolist() == [1, 1, 2]


def test_two_pairs_hand_trace():
    # two tight pairs far apart: every density is 1, and 1 > 4/4 fails
    d = np.array(
        [
            [0.0, 0.1, 2.0, 2.0],
            [0.1, 0.0, 2.0, 2.0],
            [2.0, 2.0, 0.0, 0.1],
            [2.0, 2.0, 0.1, 0.0],
        ]
    )
    res = density_cluster(d, 0.8)
    assert res.densities.tolist() == [1, 1, 1, 1]
    assert res.seed == 0
    assert res.members == (0,)
    assert res.outliers == (1, 2, 3)


def test_tight_group_keeps_inliers_and_drops_far_points():
    rng = np.random.default_rng(1)
    inliers = np.array([1.0, 0, 0, 0]) + rng.normal(scale=0.02, size=(8, 4))
    far = np.array([[0, 0, 0, 1.0], [0, 0, 1.0, 0]])
    res = density_cluster(pairwise_distances(np.vstack([inliers, far])), 0.8)
    assert res.members == tuple(range(8))
    assert res.outliers == (8, 9)


def test_seed_is_densest_lowest_index():
    d = np.full((3, 3), 5.0)
    np.fill_diagonal(d, 0)
    assert density_cluster(d).seed == 0
    assert density_cluster(d).members == (0,)


def test_single_instance():
    res = density_cluster(np.zeros((1, 1)))
    assert res.members == (0,) and res.outliers == ()


def test_non_square_rejected():
    with pytest.raises(ValueError):
        density_cluster(np.zeros((2, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_partition_and_permutation_invariance(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    d = pairwise_distances(x)
    res = density_cluster(d, 0.8)
    assert sorted(res.members + res.outliers) == list(range(n))
    # members (other than the seed) have density above n/4
    assert all(res.densities[m] > n / 4 for m in res.members if m != res.seed)
    # the member set does not depend on input order when densities are distinct
    if len(set(res.densities.tolist())) == n:
        perm = rng.permutation(n)
        res2 = density_cluster(d[np.ix_(perm, perm)], 0.8)
        assert sorted(perm[list(res2.members)].tolist()) == list(res.members)


def test_filter_instances_clusters_each_class_separately():
    rng = np.random.default_rng(2)
    a = np.array([1.0, 0, 0]) + rng.normal(scale=0.01, size=(5, 3))
    b = np.array([0, 1.0, 0]) + rng.normal(scale=0.01, size=(5, 3))
    emb = np.vstack([a, b, [[0, 0, 1.0]]])
    insts = [inst(i, 0) for i in range(5)] + [inst(i, 1) for i in range(5, 10)] + [inst(10, 0)]
    kept, removed, per_class = filter_instances(insts, emb)
    assert [i.instance_id for i in removed] == ["i10"]
    assert len(kept) == 10
    assert all(i.provenance[-1] == "cluster:member" for i in kept)
    assert removed[0].provenance[-1] == "cluster:outlier"
    assert set(per_class) == {0, 1}


def test_filter_instances_length_mismatch():
    with pytest.raises(ValueError):
        filter_instances([inst(0, 0)], np.zeros((2, 3)))


def test_triplet_batches():
    insts = [inst(i, i % 3) for i in range(9)] + [inst(9, 3)]
    cfg = TripletBatchConfig(classes_per_batch=3, instances_per_class=2, seed=7)
    batches = compose_triplet_batches(insts, cfg, num_batches=5)
    assert batches == compose_triplet_batches(insts, cfg, num_batches=5)
    for batch in batches:
        assert len(batch) == 6
        labels = [insts[i].label for i in batch]
        groups = [labels[k : k + 2] for k in range(0, 6, 2)]
        assert all(g[0] == g[1] for g in groups)
        assert len({g[0] for g in groups}) == 3


def test_triplet_batches_need_enough_classes():
    with pytest.raises(ValueError):
        compose_triplet_batches([inst(0, 0), inst(1, 0)], TripletBatchConfig())
    with pytest.raises(ValueError):
        TripletBatchConfig(instances_per_class=1)


def test_clique_at_quarter_boundary_is_not_admitted():
    # 3 tight inliers + 5 isolated points: inlier density 2 == 8/4, and the
    # admission rule is strict, so only the seed survives
    x = np.zeros((8, 8))
    x[:3, 0] = 1.0
    x[0, 1] = x[1, 2] = 0.01
    for k in range(5):
        x[3 + k, 3 + k] = 1.0
    res = density_cluster(pairwise_distances(l2_normalize(x)), 0.8)
    assert res.densities[:3].tolist() == [2, 2, 2]
    assert res.members == (res.seed,)
    assert res.seed in (0, 1, 2)
