"""K-means in embedding space, the direct high-dimensional baseline, and
their agreement/performance comparison.

The same Lloyd implementation serves both sides of the comparison: points
may be a dense array or a CSR matrix (rows = points), so the baseline runs
on raw sparse probability columns against dense centroids.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .factorization import NmfConfig, nmf


@dataclass(frozen=True)
class KmeansConfig:
    k: int = 7
    n_restarts: int = 10
    max_iters: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.n_restarts < 1 or self.max_iters < 1:
            raise ConfigError("k, n_restarts and max_iters must be at least 1")


@dataclass
class ClusterResult:
    assignment: np.ndarray   # point -> group id
    centroids: np.ndarray    # k x d
    distortion: float        # mean squared distance to assigned centroid
    iterations_run: int
    restart: int


def _row_sq_norms(X) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


def _sq_distances(X, x_norms: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    cross = X @ centroids.T
    if sp.issparse(cross):
        cross = np.asarray(cross.todense())
    d = x_norms[:, None] - 2.0 * np.asarray(cross) + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    return np.maximum(d, 0.0)


def _group_means(X, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    m = X.shape[0]
    indicator = sp.csr_matrix((np.ones(m), (labels, np.arange(m))), shape=(k, m))
    sums = indicator @ X
    if sp.issparse(sums):
        sums = np.asarray(sums.todense())
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    return np.asarray(sums), counts


def _as_dense_row(X, idx: int) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X[idx].todense()).ravel()
    return np.asarray(X[idx], dtype=np.float64)


def _kmeans_pp_init(X, x_norms: np.ndarray, k: int, rng) -> np.ndarray:
    m = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    first = int(rng.integers(m))
    centroids[0] = _as_dense_row(X, first)
    d2 = _sq_distances(X, x_norms, centroids[:1]).ravel()
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(rng.choice(m, p=d2 / total))
        else:
            pick = int(rng.integers(m))
        centroids[c] = _as_dense_row(X, pick)
        d2 = np.minimum(d2, _sq_distances(X, x_norms, centroids[c:c + 1]).ravel())
    return centroids


def _lloyd(X, x_norms: np.ndarray, centroids: np.ndarray, max_iters: int):
    k = centroids.shape[0]
    labels = None
    for iteration in range(1, max_iters + 1):
        d = _sq_distances(X, x_norms, centroids)
        new_labels = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        sums, counts = _group_means(X, labels, k)
        nonempty = counts > 0
        centroids = centroids.copy()
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        # reseed each empty centroid at the point farthest from its
        # currently assigned centroid, one distinct point per empty cluster
        empty = np.nonzero(~nonempty)[0]
        if empty.size:
            d_assigned = d[np.arange(len(labels)), labels].copy()
            for c in empty:
                far = int(np.argmax(d_assigned))
                centroids[c] = _as_dense_row(X, far)
                d_assigned[far] = -1.0
    d_final = _sq_distances(X, x_norms, centroids)
    distortion = float(d_final[np.arange(len(labels)), labels].mean())
    return labels, centroids, distortion, iteration


def kmeans(points, cfg: KmeansConfig) -> ClusterResult:
    """Best-of-restarts seeded k-means.

    points: (m, d) dense array or CSR matrix, m >= k. Each restart draws its
    centroids with k-means++ from an independently derived seed and runs
    Lloyd iterations to an assignment fixpoint; the restart with the lowest
    distortion wins, ties broken by restart index, so the result is fully
    determined by (points, cfg).
    """
    m = points.shape[0]
    if cfg.k > m:
        raise ConfigError(f"k = {cfg.k} exceeds the number of points {m}")
    X = points if sp.issparse(points) else np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError("points must be a 2-D array")
    x_norms = _row_sq_norms(X)
    best: ClusterResult | None = None
    for restart in range(cfg.n_restarts):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, restart]))
        centroids = _kmeans_pp_init(X, x_norms, cfg.k, rng)
        labels, centroids, distortion, iters = _lloyd(X, x_norms, centroids, cfg.max_iters)
        if best is None or distortion < best.distortion:
            best = ClusterResult(labels, centroids, distortion, iters, restart)
    return best


def elbow_curve(points, k_range, cfg: KmeansConfig) -> list[tuple[int, float]]:
    """Best-of-restarts distortion for each k, as plot-ready pairs."""
    curve = []
    for k in k_range:
        result = kmeans(points, KmeansConfig(k=k, n_restarts=cfg.n_restarts,
                                             max_iters=cfg.max_iters, seed=cfg.seed))
        curve.append((k, result.distortion))
    return curve


def suggest_k(curve: list[tuple[int, float]]) -> int | None:
    """k at the sharpest inflection of the distortion curve.

    Scores each interior k by the discrete second difference of log
    distortion, i.e. how much larger the proportional drop into k is than
    the drop after it. The log scale is what makes the score comparable
    across the curve: absolute second differences are always dominated by
    the first split when distortions span orders of magnitude, which would
    bury the inflection the curve is read for. Advisory only; the
    pipeline's k always comes from configuration. Needs at least three
    curve points; ties resolve to the smallest k.
    """
    if len(curve) < 3:
        return None
    ks = [k for k, _ in curve]
    ds = [d for _, d in curve]
    floor = max(max(ds) * 1e-15, 1e-300)  # zero distortion: perfectly separable
    logs = [np.log(max(d, floor)) for d in ds]
    best_k, best_val = None, -np.inf
    for i in range(1, len(curve) - 1):
        val = logs[i - 1] - 2.0 * logs[i] + logs[i + 1]
        if val > best_val + 1e-12:
            best_k, best_val = ks[i], val
    return best_k


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected pair-counting agreement between two labelings.

    Permutation-invariant and symmetric; 1.0 for identical partitions. The
    degenerate case with zero adjustment denominator (for example both
    labelings a single cluster) is 1.0 by convention.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("labelings must be equal-length 1-D sequences")
    n = len(a)
    if n == 0:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n_a = ai.max() + 1
    n_b = bi.max() + 1
    contingency = np.bincount(ai * n_b + bi, minlength=n_a * n_b).reshape(n_a, n_b)

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return x * (x - 1.0) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    denominator = 0.5 * (sum_a + sum_b) - expected
    if abs(denominator) < 1e-12:
        return 1.0
    return float((sum_ij - expected) / denominator)


@dataclass
class ComparisonReport:
    direct_runtime_s: float
    nmf_runtime_s: float
    metagraph_kmeans_runtime_s: float
    speedup: float
    ari: float
    direct_distortion: float
    metagraph_distortion: float
    direct_assignment: np.ndarray
    metagraph_assignment: np.ndarray

    def to_dict(self) -> dict:
        return {
            "direct_runtime_s": self.direct_runtime_s,
            "nmf_runtime_s": self.nmf_runtime_s,
            "metagraph_kmeans_runtime_s": self.metagraph_kmeans_runtime_s,
            "speedup": self.speedup,
            "ari": self.ari,
            "direct_distortion": self.direct_distortion,
            "metagraph_distortion": self.metagraph_distortion,
        }


def compare_direct_vs_metagraph(T, nmf_cfg: NmfConfig, km_cfg: KmeansConfig) -> ComparisonReport:
    """Cluster raw columns directly versus factorize-then-cluster.

    The direct baseline runs k-means on the n-dimensional columns of T; the
    other path reduces T to rank-k coordinates first and clusters those.
    Wall times are measured separately (factorization itemized) and the two
    assignments are compared with the adjusted Rand index. Distortions are
    reported each in its own space.
    """
    columns = T.T if sp.issparse(T) else np.asarray(T).T
    if sp.issparse(columns):
        columns = columns.tocsr()

    t0 = time.perf_counter()
    direct = kmeans(columns, km_cfg)
    direct_s = time.perf_counter() - t0

    factorization = nmf(T, nmf_cfg)
    t0 = time.perf_counter()
    meta = kmeans(factorization.H.T, km_cfg)
    meta_km_s = time.perf_counter() - t0

    metagraph_total = factorization.wall_s + meta_km_s
    return ComparisonReport(
        direct_runtime_s=direct_s,
        nmf_runtime_s=factorization.wall_s,
        metagraph_kmeans_runtime_s=meta_km_s,
        speedup=direct_s / metagraph_total if metagraph_total > 0 else float("inf"),
        ari=adjusted_rand_index(direct.assignment, meta.assignment),
        direct_distortion=direct.distortion,
        metagraph_distortion=meta.distortion,
        direct_assignment=direct.assignment,
        metagraph_assignment=meta.assignment,
    )
