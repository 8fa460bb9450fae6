"""Post-clustering analytics.

Group profiles turn edge probabilities back into hour-by-label occupancy,
regional statistics bin users by home location on a local metric grid, and
the transition matrix tracks how users move between groups from weekday to
weekend behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import stats as scipy_stats

from .graph import HOURS, SupportGraph
from .staypoint import EARTH_RADIUS_M

_METERS_PER_DEG = EARTH_RADIUS_M * np.pi / 180.0


@dataclass
class GroupProfile:
    group: int
    members: int
    labels: tuple[str, ...]
    occupancy: np.ndarray  # 24 x len(labels), rows sum to 1


def occupancy_projector(graph: SupportGraph) -> sp.csr_matrix:
    """Sparse map from edge probabilities to (hour, label) occupancy.

    Occupancy of (h, label) sums outgoing edge probabilities for h <= 22;
    the last layer has no outgoing edges, so hour 23 sums incoming ones.
    """
    label_pos = {lab: i for i, lab in enumerate(graph.labels)}
    n_labels = len(graph.labels)
    rows, cols = [], []
    for idx, (hour, src, dst) in enumerate(graph.edges):
        rows.append(hour * n_labels + label_pos[src])
        cols.append(idx)
        if hour + 1 == HOURS - 1:
            rows.append((hour + 1) * n_labels + label_pos[dst])
            cols.append(idx)
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(HOURS * n_labels, graph.n))


def group_profiles(assignment: np.ndarray, vectors, graph: SupportGraph,
                   display_threshold: float = 0.01) -> list[GroupProfile]:
    """Mean hour-by-label occupancy per group.

    vectors is the (n, u) matrix of per-owner probability columns aligned
    with assignment. display_threshold is carried to the export flag only;
    cells below it are flagged, never dropped.
    """
    projector = occupancy_projector(graph)
    n_labels = len(graph.labels)
    dense = np.asarray(vectors.todense()) if sp.issparse(vectors) else np.asarray(vectors)
    profiles = []
    for group in range(int(assignment.max()) + 1 if len(assignment) else 0):
        member_idx = np.nonzero(assignment == group)[0]
        if member_idx.size:
            mean_column = dense[:, member_idx].mean(axis=1)
            occ = np.asarray(projector @ mean_column).reshape(HOURS, n_labels)
        else:
            occ = np.zeros((HOURS, n_labels))
        profiles.append(GroupProfile(group, int(member_idx.size), graph.labels, occ))
    return profiles


@dataclass
class GridCell:
    row: int
    col: int
    total: int
    shares: np.ndarray
    stddev: float


@dataclass
class GridStats:
    cells: list[GridCell]
    cell_size_m: float
    anchor: tuple[float, float]  # south-west corner (lat, lon)
    excluded_cells: int


def _project_to_grid(lat, lon, anchor_lat, anchor_lon, mid_lat, cell_size_m):
    x = (np.asarray(lon) - anchor_lon) * _METERS_PER_DEG * np.cos(np.radians(mid_lat))
    y = (np.asarray(lat) - anchor_lat) * _METERS_PER_DEG
    return np.floor(y / cell_size_m).astype(int), np.floor(x / cell_size_m).astype(int)


def regional_stats(home_lat, home_lon, assignment: np.ndarray, n_groups: int,
                   cell_size_m: float = 500.0, min_cell_population: int = 5) -> GridStats:
    """Per-grid-cell group shares of the home population.

    Homes are binned on a local equirectangular grid anchored at the
    south-west corner of their bounding box (longitude scaled by the cosine
    of the mid latitude). Cells with fewer than min_cell_population users
    are excluded. The share standard deviation uses the population divisor
    (the number of groups).
    """
    home_lat = np.asarray(home_lat, dtype=np.float64)
    home_lon = np.asarray(home_lon, dtype=np.float64)
    if len(home_lat) == 0:
        return GridStats([], cell_size_m, (0.0, 0.0), 0)
    anchor = (float(home_lat.min()), float(home_lon.min()))
    mid_lat = 0.5 * (home_lat.min() + home_lat.max())
    rows, cols = _project_to_grid(home_lat, home_lon, anchor[0], anchor[1], mid_lat, cell_size_m)

    counts: dict[tuple[int, int], np.ndarray] = {}
    for r, c, g in zip(rows.tolist(), cols.tolist(), np.asarray(assignment).tolist()):
        cell = counts.setdefault((r, c), np.zeros(n_groups, dtype=np.int64))
        cell[g] += 1

    cells = []
    excluded = 0
    for (r, c) in sorted(counts):
        cell_counts = counts[(r, c)]
        total = int(cell_counts.sum())
        if total < min_cell_population:
            excluded += 1
            continue
        shares = cell_counts / total
        stddev = float(np.sqrt(np.mean((shares - shares.mean()) ** 2)))
        cells.append(GridCell(r, c, total, shares, stddev))
    return GridStats(cells, cell_size_m, anchor, excluded)


def home_work_grid(home_lat, home_lon, work_lat, work_lon,
                   cell_size_m: float = 500.0) -> list[tuple[int, int, int, int, float, float]]:
    """Per-cell home and workplace counts, raw and normalized to [0, 1].

    Exported so detected residential/working populations can be compared
    against external census-style grids; the anchor covers both point sets.
    """
    all_lat = np.concatenate([home_lat, work_lat]) if len(work_lat) else np.asarray(home_lat)
    all_lon = np.concatenate([home_lon, work_lon]) if len(work_lon) else np.asarray(home_lon)
    if len(all_lat) == 0:
        return []
    anchor_lat, anchor_lon = float(all_lat.min()), float(all_lon.min())
    mid_lat = 0.5 * (all_lat.min() + all_lat.max())
    cells: dict[tuple[int, int], list[int]] = {}
    for lat, lon, slot in ((home_lat, home_lon, 0), (work_lat, work_lon, 1)):
        if len(lat) == 0:
            continue
        rows, cols = _project_to_grid(lat, lon, anchor_lat, anchor_lon, mid_lat, cell_size_m)
        for r, c in zip(rows.tolist(), cols.tolist()):
            cells.setdefault((r, c), [0, 0])[slot] += 1
    max_home = max((v[0] for v in cells.values()), default=0) or 1
    max_work = max((v[1] for v in cells.values()), default=0) or 1
    return [(r, c, v[0], v[1], v[0] / max_home, v[1] / max_work)
            for (r, c), v in sorted(cells.items())]


def group_share_correlations(grid: GridStats, n_groups: int):
    """Pearson r and two-tailed p across cells for every group-share pair.

    p comes from t = r * sqrt((m - 2) / (1 - r^2)) against Student's t with
    m - 2 degrees of freedom. Pairs with a zero-variance share, or |r| = 1
    where the t statistic degenerates, report NaN rather than a value.
    """
    m = len(grid.cells)
    if m < 3:
        raise ValueError("correlations need at least 3 included cells")
    shares = np.stack([cell.shares for cell in grid.cells])  # m x k
    r = np.full((n_groups, n_groups), np.nan)
    p = np.full((n_groups, n_groups), np.nan)
    centered = shares - shares.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    for i in range(n_groups):
        for j in range(n_groups):
            if norms[i] == 0 or norms[j] == 0:
                continue
            rij = float((centered[:, i] * centered[:, j]).sum() / (norms[i] * norms[j]))
            rij = min(max(rij, -1.0), 1.0)
            r[i, j] = rij
            if 1.0 - rij * rij > 0:
                t = rij * np.sqrt((m - 2) / (1.0 - rij * rij))
                p[i, j] = 2.0 * float(scipy_stats.t.sf(abs(t), m - 2))
    return r, p


@dataclass
class TransitionMatrix:
    counts: np.ndarray       # k x k ints, weekday group -> weekend group
    row_percent: np.ndarray  # rows sum to 100 where nonempty
    excluded_users: int


def nearest_centroid(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (np.einsum("ij,ij->i", points, points)[:, None]
         - 2.0 * points @ centroids.T
         + np.einsum("ij,ij->i", centroids, centroids)[None, :])
    return np.argmin(d, axis=1)


def weekday_weekend_transitions(weekday_coords: dict[str, np.ndarray],
                                weekend_coords: dict[str, np.ndarray],
                                centroids: np.ndarray) -> TransitionMatrix:
    """Classify both coordinates of each user and count group moves.

    Users missing either coordinate are excluded. Rows of row_percent sum
    to 100 for rows with any mass.
    """
    users = sorted(set(weekday_coords) & set(weekend_coords))
    excluded = len(set(weekday_coords) | set(weekend_coords)) - len(users)
    k = centroids.shape[0]
    counts = np.zeros((k, k), dtype=np.int64)
    if users:
        wd = np.stack([weekday_coords[u] for u in users])
        we = np.stack([weekend_coords[u] for u in users])
        g_wd = nearest_centroid(wd, centroids)
        g_we = nearest_centroid(we, centroids)
        np.add.at(counts, (g_wd, g_we), 1)
    row_sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        row_percent = np.where(row_sums > 0, counts * 100.0 / row_sums, 0.0)
    return TransitionMatrix(counts, row_percent, excluded)
