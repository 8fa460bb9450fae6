import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from lifegraph import (
    ConfigError,
    KmeansConfig,
    NmfConfig,
    adjusted_rand_index,
    compare_direct_vs_metagraph,
    elbow_curve,
    kmeans,
    suggest_k,
)


def test_k1_closed_form():
    r = np.random.default_rng(0)
    X = r.random((40, 3))
    result = kmeans(X, KmeansConfig(k=1, n_restarts=2, seed=0))
    assert np.allclose(result.centroids[0], X.mean(axis=0))
    assert result.distortion == pytest.approx(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean())


def test_perfectly_separable_duplicates():
    locations = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [7.0, 7.0]])
    X = np.repeat(locations, 10, axis=0)
    result = kmeans(X, KmeansConfig(k=4, n_restarts=5, seed=1))
    assert result.distortion == 0.0
    groups = {tuple(loc): set() for loc in locations}
    for row, g in zip(X, result.assignment):
        groups[tuple(row)].add(int(g))
    assert all(len(g) == 1 for g in groups.values())
    assert len({next(iter(g)) for g in groups.values()}) == 4


def _gaussian_blobs(r, k, per, d=3, spread=8.0):
    centers = r.normal(0, spread, (k, d))
    points = np.vstack([c + r.normal(0, 0.5, (per, d)) for c in centers])
    labels = np.repeat(np.arange(k), per)
    return points, labels


def best_match_rate(truth, found, k):
    contingency = np.zeros((k, k))
    for t, f in zip(truth, found):
        contingency[t, f] += 1
    rows, cols = linear_sum_assignment(-contingency)
    return contingency[rows, cols].sum() / len(truth)


def test_three_gaussians_recovered():
    r = np.random.default_rng(5)
    points, truth = _gaussian_blobs(r, 3, 67)
    res = kmeans(points, KmeansConfig(k=3, n_restarts=10, seed=2))
    assert best_match_rate(truth, res.assignment, 3) >= 0.98


def test_seed_determinism_and_restart_winner():
    r = np.random.default_rng(1)
    points, _ = _gaussian_blobs(r, 4, 30)
    cfg = KmeansConfig(k=4, n_restarts=6, seed=33)
    a = kmeans(points, cfg)
    b = kmeans(points, cfg)
    assert np.array_equal(a.assignment, b.assignment)
    assert np.array_equal(a.centroids, b.centroids)
    assert a.restart == b.restart


def test_sparse_and_dense_points_agree():
    r = np.random.default_rng(2)
    dense = r.random((50, 20)) * (r.random((50, 20)) > 0.5)
    cfg = KmeansConfig(k=3, n_restarts=3, seed=4)
    a = kmeans(dense, cfg)
    b = kmeans(sp.csr_matrix(dense), cfg)
    assert np.array_equal(a.assignment, b.assignment)
    assert np.allclose(a.centroids, b.centroids)


def test_k_exceeding_points_is_fatal():
    with pytest.raises(ConfigError):
        kmeans(np.ones((3, 2)), KmeansConfig(k=4, seed=0))


def test_fixpoint_property():
    r = np.random.default_rng(7)
    points, _ = _gaussian_blobs(r, 3, 40)
    res = kmeans(points, KmeansConfig(k=3, n_restarts=4, seed=5))
    d = ((points[:, None, :] - res.centroids[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(np.argmin(d, axis=1), res.assignment)
    for g in range(3):
        member = res.assignment == g
        assert np.allclose(res.centroids[g], points[member].mean(axis=0))


def test_elbow_single_k():
    r = np.random.default_rng(3)
    X = r.random((30, 2))
    curve = elbow_curve(X, range(1, 2), KmeansConfig(seed=0))
    assert len(curve) == 1 and curve[0][0] == 1
    assert curve[0][1] == pytest.approx(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean())


def test_elbow_flat_after_separable_k():
    locations = np.array([[i * 10.0, 0.0] for i in range(7)])
    X = np.repeat(locations, 12, axis=0)
    curve = elbow_curve(X, range(1, 10), KmeansConfig(n_restarts=8, seed=6))
    d = dict(curve)
    assert d[7] == pytest.approx(0.0, abs=1e-12)
    assert d[8] == pytest.approx(0.0, abs=1e-12)
    values = [v for _, v in curve]
    assert all(values[i + 1] <= values[i] + 1e-9 for i in range(len(values) - 1))


def test_suggest_k_hand_example():
    assert suggest_k([(1, 100.0), (2, 10.0), (3, 9.0), (4, 8.0)]) == 2


def test_suggest_k_linear_and_flat_curves():
    linear = [(k, 100.0 - 10 * k) for k in range(1, 6)]
    assert suggest_k(linear) == 2  # all second differences zero, lowest interior k
    flat = [(k, 5.0) for k in range(1, 6)]
    assert suggest_k(flat) == 2
    assert suggest_k([(1, 1.0), (2, 0.5)]) is None


def test_ari_identity_and_permutation():
    labels = np.array([0, 0, 1, 1, 2, 2, 2])
    assert adjusted_rand_index(labels, labels) == pytest.approx(1.0)
    relabeled = np.array([5, 5, 2, 2, 9, 9, 9])
    assert adjusted_rand_index(labels, relabeled) == pytest.approx(1.0)


def test_ari_symmetry():
    r = np.random.default_rng(8)
    a = r.integers(0, 4, 200)
    b = r.integers(0, 3, 200)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a))


def test_ari_independent_labelings_near_zero():
    r = np.random.default_rng(10)
    a = r.integers(0, 7, 10_000)
    b = r.integers(0, 7, 10_000)
    assert abs(adjusted_rand_index(a, b)) < 0.02


def test_ari_length_mismatch_fatal():
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0, 1, 2])


def _planted_matrix(r, n, u, k_groups, rank=3, noise=0.05):
    """Columns near a rank-`rank` cone with k_groups coefficient blobs."""
    W_true = r.random((n, rank))
    centers = r.random((k_groups, rank)) * 4.0
    groups = np.repeat(np.arange(k_groups), u // k_groups)
    coeff = centers[groups] * (1.0 + r.normal(0, noise, (len(groups), rank)))
    T = W_true @ np.abs(coeff).T
    return T, groups


def test_identical_columns_degenerate_agreement():
    T = np.tile(np.arange(1.0, 6.0)[:, None], (1, 3))
    report = compare_direct_vs_metagraph(T, NmfConfig(rank=1, seed=0),
                                         KmeansConfig(k=1, n_restarts=2, seed=0))
    assert report.ari == 1.0


def test_direct_vs_metagraph_agree_on_planted_structure():
    r = np.random.default_rng(20)
    T, groups = _planted_matrix(r, n=60, u=210, k_groups=7)
    report = compare_direct_vs_metagraph(
        T, NmfConfig(rank=3, seed=1), KmeansConfig(k=7, n_restarts=10, seed=2))
    assert report.ari >= 0.7
    assert adjusted_rand_index(report.direct_assignment, groups) >= 0.7
    assert report.direct_runtime_s > 0 and report.nmf_runtime_s > 0
