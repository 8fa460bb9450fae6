"""Density-based clustering of one user's stay-point centroids.

Classic DBSCAN with haversine distances and fully deterministic behavior:
points are visited in input order, and a border point keeps the first
cluster that reaches it. Small inputs use a quadratic neighbor scan; large
inputs switch to a spatial grid index that yields identical labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .staypoint import EARTH_RADIUS_M, StayPoint, haversine_m

NOISE = -1
_UNSET = -2

# Above this size the grid index replaces the quadratic neighbor scan.
_BRUTE_LIMIT = 2000

_METERS_PER_DEG = EARTH_RADIUS_M * np.pi / 180.0


@dataclass(frozen=True)
class DbscanParams:
    eps_m: float = 30.0
    min_pts: int = 10

    def __post_init__(self):
        if self.eps_m <= 0:
            raise ValueError("eps_m must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be at least 1")


def _neighbors_brute(lat: np.ndarray, lon: np.ndarray, eps_m: float) -> list[np.ndarray]:
    d = haversine_m(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    within = d <= eps_m
    return [np.nonzero(row)[0] for row in within]


def _neighbors_grid(lat: np.ndarray, lon: np.ndarray, eps_m: float) -> list[np.ndarray]:
    # Cell sizes are chosen so any two points within eps_m meters fall in
    # adjacent cells: latitude cells are eps in degrees, longitude cells use
    # the shrink factor at the most poleward latitude present.
    cell_lat = eps_m / _METERS_PER_DEG
    max_abs_lat = float(np.abs(lat).max())
    cos_floor = max(np.cos(np.radians(min(max_abs_lat, 89.0))), 1e-6)
    cell_lon = eps_m / (_METERS_PER_DEG * cos_floor)

    ci = np.floor(lat / cell_lat).astype(np.int64)
    cj = np.floor(lon / cell_lon).astype(np.int64)
    cells: dict[tuple[int, int], list[int]] = {}
    for idx, key in enumerate(zip(ci.tolist(), cj.tolist())):
        cells.setdefault(key, []).append(idx)

    neighbors: list[np.ndarray] = []
    for idx in range(len(lat)):
        cand: list[int] = []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                cand.extend(cells.get((ci[idx] + di, cj[idx] + dj), ()))
        cand_arr = np.sort(np.asarray(cand, dtype=np.int64))
        d = haversine_m(lat[idx], lon[idx], lat[cand_arr], lon[cand_arr])
        neighbors.append(cand_arr[d <= eps_m])
    return neighbors


def dbscan(lat: np.ndarray, lon: np.ndarray, params: DbscanParams,
           index: str = "auto") -> np.ndarray:
    """Label points with DBSCAN cluster ids (NOISE = -1).

    A point is core when its eps-neighborhood (including itself) holds at
    least min_pts points. Clusters are discovered in input order and get
    consecutive ids from 0; border points are assigned when their cluster's
    expansion first reaches them, which makes the labeling deterministic.

    index selects the neighbor search: "brute", "grid", or "auto"
    (brute up to 2000 points, grid beyond).
    """
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    n = len(lat)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if index == "auto":
        index = "brute" if n <= _BRUTE_LIMIT else "grid"
    if index == "brute":
        neighbors = _neighbors_brute(lat, lon, params.eps_m)
    elif index == "grid":
        neighbors = _neighbors_grid(lat, lon, params.eps_m)
    else:
        raise ValueError(f"unknown neighbor index {index!r}")

    labels = np.full(n, _UNSET, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != _UNSET:
            continue
        if len(neighbors[i]) < params.min_pts:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        seeds = list(neighbors[i])
        pos = 0
        while pos < len(seeds):
            q = seeds[pos]
            pos += 1
            if labels[q] == NOISE:
                labels[q] = cluster  # border point, first cluster keeps it
            if labels[q] != _UNSET:
                continue
            labels[q] = cluster
            if len(neighbors[q]) >= params.min_pts:
                seeds.extend(neighbors[q])
        cluster += 1
    return labels


def cluster_user_stays(stays: list[StayPoint], params: DbscanParams,
                       index: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """DBSCAN one user's stay centroids.

    Returns (labels, centroids) where labels aligns with stays (NOISE = -1)
    and centroids is a (n_clusters, 2) array of per-cluster mean lat/lon.
    """
    if not stays:
        return np.empty(0, dtype=np.int64), np.empty((0, 2))
    lat = np.array([s.lat for s in stays])
    lon = np.array([s.lon for s in stays])
    labels = dbscan(lat, lon, params, index=index)
    n_clusters = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    centroids = np.empty((n_clusters, 2))
    for c in range(n_clusters):
        member = labels == c
        centroids[c, 0] = lat[member].mean()
        centroids[c, 1] = lon[member].mean()
    return labels, centroids
