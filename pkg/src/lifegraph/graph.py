"""Hourly day paths, the population support graph, and T-A vectors.

A day path is a 24-hour chain of labels (the significant-place category
occupying each hour, U when none). The support graph is the union of all
per-day chains: 24 node layers, edges only between consecutive hours, each
edge carrying a unique index assigned layer by layer in canonical label
order H < W < N < D < O < U. A day is then a binary edge-indicator vector
with exactly 23 ones, and a user is the mean of their day vectors, which
makes every layer pair sum to one.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvariantError
from .util import SECONDS_PER_DAY, SECONDS_PER_HOUR, weekday

BASE_LABELS = ("H", "W", "N", "D", "O", "U")
_BASE_RANK = {c: i for i, c in enumerate(BASE_LABELS)}

HOURS = 24
EDGE_STAGES = HOURS - 1


def label_rank(label: str) -> tuple[int, int]:
    """Sort key for canonical label order; handles ordinal tokens like N2."""
    if label in _BASE_RANK:
        return (_BASE_RANK[label], 0)
    return (_BASE_RANK[label[0]], int(label[1:]))


@dataclass(frozen=True)
class LabeledDwell:
    """A stay resolved to its significant place."""

    arv_t: int
    lev_t: int
    category: str
    place_id: int


@dataclass(frozen=True)
class DayPath:
    user_id: str
    day: int                 # local epoch day
    labels: tuple[str, ...]  # 24 entries

    def __post_init__(self):
        if len(self.labels) != HOURS:
            raise ValueError("a day path has exactly 24 hourly labels")


def label_day(dwells: list[LabeledDwell], user_id: str, day: int,
              distinct_others: int = 0) -> DayPath:
    """Label each hour of a calendar day with its dominant significant place.

    Among dwells overlapping [h:00, h+1:00) the longest overlap wins; ties
    go to the earlier arrival, then category order H<W<N<D<O, then the lower
    place id. Hours without any overlapping dwell are U. With
    distinct_others = k > 0, places of category N/D/O get within-day ordinal
    tokens (N1, N2, ...) in order of first appearance, capped at k.
    """
    day_start = day * SECONDS_PER_DAY
    winners: list[tuple[str, int] | None] = [None] * HOURS
    for dw in dwells:
        if dw.lev_t <= day_start or dw.arv_t >= day_start + SECONDS_PER_DAY:
            continue
        rank = _BASE_RANK[dw.category]
        h_first = max((dw.arv_t - day_start) // SECONDS_PER_HOUR, 0)
        h_last = min((dw.lev_t - 1 - day_start) // SECONDS_PER_HOUR, HOURS - 1)
        for h in range(h_first, h_last + 1):
            lo = day_start + h * SECONDS_PER_HOUR
            overlap = min(dw.lev_t, lo + SECONDS_PER_HOUR) - max(dw.arv_t, lo)
            if overlap <= 0:
                continue
            cand = (-overlap, dw.arv_t, rank, dw.place_id, dw.category)
            prev = winners[h]
            if prev is None or cand < prev:
                winners[h] = cand

    labels = []
    ordinals: dict[tuple[str, int], int] = {}
    next_ordinal: dict[str, int] = {}
    for h in range(HOURS):
        if winners[h] is None:
            labels.append("U")
            continue
        _, _, _, place_id, category = winners[h]
        if distinct_others and category in ("N", "D", "O"):
            key = (category, place_id)
            if key not in ordinals:
                nxt = next_ordinal.get(category, 0) + 1
                next_ordinal[category] = nxt
                ordinals[key] = min(nxt, distinct_others)
            labels.append(f"{category}{ordinals[key]}")
        else:
            labels.append(category)
    return DayPath(user_id, day, tuple(labels))


def label_user_days(dwells: list[LabeledDwell], user_id: str, days,
                    distinct_others: int = 0) -> list[DayPath]:
    """label_day over many days, narrowing the dwell list per day."""
    dwells = sorted(dwells, key=lambda d: (d.arv_t, d.lev_t))
    arvs = [d.arv_t for d in dwells]
    levs_max = np.maximum.accumulate([d.lev_t for d in dwells]) if dwells else []
    paths = []
    for day in days:
        day_start = day * SECONDS_PER_DAY
        hi = bisect_left(arvs, day_start + SECONDS_PER_DAY)
        lo = bisect_right(levs_max[:hi].tolist(), day_start) if hi else 0
        paths.append(label_day(dwells[lo:hi], user_id, day, distinct_others))
    return paths


@dataclass(frozen=True)
class SupportGraph:
    edges: tuple[tuple[int, str, str], ...]
    edge_index: dict
    nodes: frozenset
    labels: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.edges)


def build_support_graph(paths) -> SupportGraph:
    """Union every day path into one indexed layer graph.

    Nodes are (hour, label) pairs seen in any path; an edge exists when some
    path transitions between its endpoints. Indices ascend by layer, then by
    source and target label in canonical order, so the graph is independent
    of path input order.
    """
    edge_set: set[tuple[int, str, str]] = set()
    node_set: set[tuple[int, str]] = set()
    for path in paths:
        labels = path.labels
        node_set.update((h, labels[h]) for h in range(HOURS))
        edge_set.update((h, labels[h], labels[h + 1]) for h in range(EDGE_STAGES))
    edges = tuple(sorted(edge_set, key=lambda e: (e[0], label_rank(e[1]), label_rank(e[2]))))
    labels = tuple(sorted({lab for _, lab in node_set}, key=label_rank))
    return SupportGraph(
        edges=edges,
        edge_index={e: i for i, e in enumerate(edges)},
        nodes=frozenset(node_set),
        labels=labels,
    )


def day_to_ta_vector(path: DayPath, graph: SupportGraph) -> np.ndarray:
    """Indices of the day's 23 edges; the sparse form of its binary vector."""
    try:
        return np.fromiter(
            (graph.edge_index[(h, path.labels[h], path.labels[h + 1])]
             for h in range(EDGE_STAGES)),
            dtype=np.int64, count=EDGE_STAGES)
    except KeyError as missing:
        raise InvariantError(
            f"day path edge {missing.args[0]} is not in the support graph; "
            "the graph must be built from the same corpus") from None


def average_vector(day_vectors: list[np.ndarray], n: int) -> np.ndarray:
    """Elementwise mean of binary day vectors given as index arrays."""
    if not day_vectors:
        raise ValueError("average_vector needs at least one day")
    counts = np.bincount(np.concatenate(day_vectors), minlength=n)
    return counts / float(len(day_vectors))


def is_weekend(day: int, extra_days=frozenset()) -> bool:
    return weekday(day) >= 5 or day in extra_days


MODE_ALL_DAYS = "all-days"
MODE_SPLIT = "split"


@dataclass
class TotalMatrix:
    matrix: sp.csr_matrix          # n x u, column per owner
    column_owners: list[str]
    excluded_users: list[str]

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def u(self) -> int:
        return self.matrix.shape[1]

    def column(self, j: int) -> np.ndarray:
        return np.asarray(self.matrix[:, j].todense()).ravel()


def assemble_total_matrix(user_days, n: int, mode: str = MODE_ALL_DAYS,
                          weekend_extra=frozenset()) -> TotalMatrix:
    """Stack per-user average vectors into the n x u matrix.

    user_days is an iterable of (user_id, day_numbers, day_vectors) with the
    vectors as edge-index arrays. Columns follow ascending user_id; in split
    mode each user contributes a weekday column then a weekend column, and
    users lacking either day class are excluded (reported on the result).
    """
    if mode not in (MODE_ALL_DAYS, MODE_SPLIT):
        raise ValueError(f"unknown matrix mode {mode!r}")
    owners: list[str] = []
    columns: list[np.ndarray] = []
    excluded: list[str] = []
    for user_id, days, vectors in sorted(user_days, key=lambda t: t[0]):
        if len(vectors) == 0:
            excluded.append(user_id)
            continue
        if mode == MODE_ALL_DAYS:
            owners.append(user_id)
            columns.append(average_vector(list(vectors), n))
        else:
            wk = [v for d, v in zip(days, vectors) if not is_weekend(d, weekend_extra)]
            we = [v for d, v in zip(days, vectors) if is_weekend(d, weekend_extra)]
            if not wk or not we:
                excluded.append(user_id)
                continue
            owners.append(f"{user_id}:weekday")
            columns.append(average_vector(wk, n))
            owners.append(f"{user_id}:weekend")
            columns.append(average_vector(we, n))
    if columns:
        dense = np.column_stack(columns)
        matrix = sp.csr_matrix(dense)
    else:
        matrix = sp.csr_matrix((n, 0))
    return TotalMatrix(matrix=matrix, column_owners=owners, excluded_users=excluded)
