import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.cluster import DBSCAN as SkDBSCAN
from sklearn.cluster import HDBSCAN as SkHDBSCAN

from oracles import all_permutation_equal, brute_hdbscan_labels, brute_stabilities
from past.clustering import (
    PseudoLabeling,
    cluster_means,
    core_distances,
    dbscan,
    default_eps,
    hdbscan,
    hdbscan_tree,
    kmeans,
    kmeans_fit,
    write_labels_csv,
)
from past.embeddings import pairwise_euclidean
from past.errors import InvalidEps, InvalidK, InvalidMinSamples


def blobs(seed, sizes, spread=0.3, gap=6.0, dim=2):
    rng = np.random.default_rng(seed)
    centres = rng.normal(0, gap, (len(sizes), dim))
    x = np.vstack([c + rng.normal(0, spread, (s, dim)) for c, s in zip(centres, sizes)])
    truth = np.repeat(np.arange(len(sizes)), sizes)
    return x, truth


def sk_hdbscan(D, s):
    return SkHDBSCAN(min_cluster_size=s, min_samples=s, metric="precomputed").fit(D).labels_


def members_of(tree):
    up = {int(c): int(p) for p, c in zip(tree.parent, tree.child)}
    out = {c: set() for c in tree.cluster_ids()}
    for point in range(tree.n):
        node = up.get(point)
        while node is not None:
            out[node].add(point)
            node = up.get(node)
    return out


def test_from_assignments_orders_by_first_member():
    lab = PseudoLabeling.from_assignments([7, -1, 3, 7, 3, 9])
    assert lab.labels.tolist() == [0, -1, 1, 0, 1, 2]
    assert lab.num_clusters == 3
    assert lab.selected.tolist() == [0, 2, 3, 4, 5]
    assert lab.cluster_sizes().tolist() == [2, 2, 1]


def test_two_blobs_exact():
    x, truth = blobs(0, [20, 20], gap=10)
    lab = hdbscan(pairwise_euclidean(x), 5)
    assert lab.num_clusters == 2
    assert np.all(lab.labels >= 0)
    assert all_permutation_equal(lab.labels, truth)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("sizes", [[30, 30], [25, 30, 35]])
def test_matches_sklearn_reference(seed, sizes):
    x, _ = blobs(seed, sizes)
    D = pairwise_euclidean(x)
    assert all_permutation_equal(hdbscan(D, 5).labels, sk_hdbscan(D, 5))


@pytest.mark.parametrize("seed", range(15))
def test_stabilities_match_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(6, 13))
    x = rng.normal(size=(n, 2))
    x[: n // 2] += 4
    D = pairwise_euclidean(x)
    s = int(rng.integers(2, 4))
    tree = hdbscan_tree(D, s)
    got = sorted(((frozenset(m), tree.stability[c]) for c, m in members_of(tree).items()), key=lambda r: sorted(r[0]))
    want = brute_stabilities(D, s)
    assert [g[0] for g in got] == [w[0] for w in want]
    for (_, a), (_, b) in zip(got, want):
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_labels_match_brute_force(seed):
    x, _ = blobs(seed, [8, 10, 12], spread=0.5, gap=3.0)
    D = pairwise_euclidean(x)
    assert all_permutation_equal(hdbscan(D, 4).labels, brute_hdbscan_labels(D, 4))


def test_bridge_point_at_split_level_is_noise():
    # the middle point's core distance equals both of its links, so it is cut off
    # exactly when the two squares separate
    square = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    x = np.vstack([square, square + [4, 0], [[2.5, 0.5]]])
    D = pairwise_euclidean(x)
    lab = hdbscan(D, 3)
    assert lab.labels[-1] == -1 and lab.num_clusters == 2
    assert all_permutation_equal(lab.labels, brute_hdbscan_labels(D, 3))


def test_tied_merges_split_in_one_step():
    # 3 identical squares in a row: every gap is the same, so the root splits three ways
    square = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    x = np.vstack([square + [5 * k, 0] for k in range(3)])
    tree = hdbscan_tree(pairwise_euclidean(x), 3)
    children = [int(c) for p, c in zip(tree.parent, tree.child) if p == tree.root and c >= tree.n]
    assert len(children) == 3
    assert hdbscan(pairwise_euclidean(x), 3).num_clusters == 3


def test_small_n_is_all_noise():
    lab = hdbscan(pairwise_euclidean(np.random.default_rng(0).normal(size=(4, 2))), 5)
    assert lab.num_clusters == 0 and np.all(lab.labels == -1)


def test_rejects_small_s_min():
    with pytest.raises(InvalidMinSamples):
        hdbscan(np.zeros((3, 3)), 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_invariance_and_min_size(seed):
    x, _ = blobs(seed, [12, 15, 9], spread=0.5, gap=4)
    D = pairwise_euclidean(x)
    perm = np.random.default_rng(seed).permutation(len(x))
    a = hdbscan(D, 4)
    b = hdbscan(D[np.ix_(perm, perm)], 4)
    assert all_permutation_equal(a.labels[perm], b.labels)
    assert np.all(a.cluster_sizes() >= 4)
    assert np.array_equal(a.labels, hdbscan(D, 4).labels)


def test_core_distance_counts_self():
    D = pairwise_euclidean(np.array([[0.0], [1.0], [3.0]]))
    assert core_distances(D, 2).tolist() == [1.0, 1.0, 2.0]


def test_dbscan_identical_points_and_isolated_point():
    D = pairwise_euclidean(np.array([[0.0], [0.0], [0.0], [9.0]]))
    lab = dbscan(D, 0.1, 2)
    assert lab.labels.tolist() == [0, 0, 0, -1]


@pytest.mark.parametrize("seed", range(5))
def test_dbscan_matches_sklearn(seed):
    x, truth = blobs(seed, [15, 20], spread=0.3, gap=10)
    D = pairwise_euclidean(x)
    eps = default_eps(D, 5)
    ours = dbscan(D, eps, 5)
    ref = SkDBSCAN(eps=eps, min_samples=5, metric="precomputed").fit(D).labels_
    assert all_permutation_equal(ours.labels, ref)
    assert np.all(ours.cluster_sizes() >= 5)


def test_dbscan_rejects_bad_eps():
    with pytest.raises(InvalidEps):
        dbscan(np.zeros((2, 2)), 0.0, 2)


def test_kmeans_two_pairs():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    res = kmeans_fit(x, 2, seed=0)
    assert res.labeling.labels.tolist() == [0, 0, 1, 1]
    np.testing.assert_allclose(res.centroids, [[0.0, 0.5], [10.0, 0.5]])


def test_kmeans_k_equals_n():
    x = np.random.default_rng(0).normal(size=(6, 3))
    res = kmeans_fit(x, 6, seed=1)
    assert res.labeling.num_clusters == 6
    assert res.inertia_trace[-1] == pytest.approx(0.0, abs=1e-20)


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_inertia_never_increases(seed):
    x = np.random.default_rng(seed).normal(size=(30, 2))
    trace = np.array(kmeans_fit(x, 3, seed=seed).inertia_trace)
    assert np.all(np.diff(trace) <= 1e-12)


@pytest.mark.parametrize("k", [0, 5])
def test_kmeans_invalid_k(k):
    with pytest.raises(InvalidK):
        kmeans(np.zeros((4, 2)), k)


def test_cluster_means():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [4.0, 4.0]])
    lab = PseudoLabeling(np.array([0, 0, 1]), 2)
    np.testing.assert_allclose(cluster_means(x, lab), [[0.5, 0.5], [4.0, 4.0]])


def test_cluster_means_naive():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(20, 3))
    lab = PseudoLabeling.from_assignments(rng.integers(-1, 4, 20))
    means = cluster_means(x, lab)
    for c in range(lab.num_clusters):
        rows = [x[i] for i in range(20) if lab.labels[i] == c]
        acc = np.zeros(3)
        for r in rows:
            acc += r
        np.testing.assert_allclose(means[c], acc / len(rows), atol=1e-12)


def test_labels_csv(tmp_path):
    write_labels_csv(PseudoLabeling(np.array([0, -1, 1]), 2), tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text() == "id,pseudo_label\n0,0\n1,-1\n2,1\n"
