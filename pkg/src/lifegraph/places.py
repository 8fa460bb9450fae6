"""Semantic categories for a user's stay clusters.

Each DBSCAN cluster becomes one significant place with a category:
H home, N other nighttime spot, W workplace, D other daytime spot,
O other. Home is the cluster with the strongest nighttime candidacy,
workplace the strongest daytime candidacy among the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

from .spatial import NOISE
from .staypoint import StayPoint
from .util import SECONDS_PER_DAY, epoch_day, weekday

CATEGORIES = ("H", "N", "W", "D", "O")


@dataclass(frozen=True)
class PlaceParams:
    """Clock windows and candidacy thresholds.

    Windows are [start, end) in local seconds-of-day; a night window whose
    start exceeds its end wraps past midnight. A stay is a candidate when
    its interval overlaps a window instance and its total duration strictly
    exceeds min_candidate_duration_s; daytime instances must fall on a
    workday. A cluster qualifies when its candidate stays cover strictly
    more than min_candidate_days distinct calendar dates.
    """

    night_start_s: int = 20 * 3600
    night_end_s: int = 6 * 3600
    day_start_s: int = 9 * 3600
    day_end_s: int = 19 * 3600
    min_candidate_duration_s: int = 5400
    min_candidate_days: int = 10
    workdays: frozenset[int] = frozenset({0, 1, 2, 3, 4})  # Mon..Fri
    excluded_days: frozenset[int] = frozenset()  # epoch days dropped from workdays

    def is_workday(self, day: int) -> bool:
        return weekday(day) in self.workdays and day not in self.excluded_days


@dataclass(frozen=True)
class CandidateStats:
    night_days: int
    night_duration_s: int
    day_days: int
    day_duration_s: int


@dataclass(frozen=True)
class SignificantPlace:
    user_id: str
    place_id: int
    category: str
    lat: float
    lon: float
    n_stays: int
    stats: CandidateStats


def _overlapping_days(arv: int, lev: int, start_s: int, end_s: int) -> list[int]:
    """Epoch days whose window instance overlaps the half-open [arv, lev)."""
    days = []
    for d in range(epoch_day(arv) - 1, epoch_day(max(lev - 1, arv)) + 1):
        w0 = d * SECONDS_PER_DAY + start_s
        if end_s > start_s:
            w1 = d * SECONDS_PER_DAY + end_s
        else:
            w1 = (d + 1) * SECONDS_PER_DAY + end_s  # wraps past midnight
        if arv < w1 and w0 < lev:
            days.append(d)
    return days


def candidate_stats(stays: list[StayPoint], params: PlaceParams) -> CandidateStats:
    """Nighttime/daytime candidacy statistics for one cluster's stays.

    Day counts are distinct calendar dates of candidate arrivals; durations
    sum each candidate stay's full length, not just the in-window part.
    """
    night_dates: set[int] = set()
    day_dates: set[int] = set()
    night_duration = 0
    day_duration = 0
    for s in stays:
        if s.duration_s <= params.min_candidate_duration_s:
            continue
        if _overlapping_days(s.arv_t, s.lev_t, params.night_start_s, params.night_end_s):
            night_dates.add(epoch_day(s.arv_t))
            night_duration += s.duration_s
        day_hits = _overlapping_days(s.arv_t, s.lev_t, params.day_start_s, params.day_end_s)
        if any(params.is_workday(d) for d in day_hits):
            day_dates.add(epoch_day(s.arv_t))
            day_duration += s.duration_s
    return CandidateStats(len(night_dates), night_duration, len(day_dates), day_duration)


def classify_places(user_id: str, clusters: list[tuple[int, float, float, list[StayPoint]]],
                    params: PlaceParams) -> list[SignificantPlace]:
    """Assign one category per cluster.

    clusters holds (place_id, lat, lon, member stays). Home is the
    night-qualified cluster with the most candidate days (duration, then
    lowest place_id break ties); the workplace is picked the same way from
    the day-qualified remainder. Leftover qualified clusters become N or D,
    dual-qualified ones going to the side with more candidate days (duration
    tiebreak, then N); everything else is O. Users with no night-qualified
    cluster get no home and are expected to be excluded downstream.
    """
    stats = {pid: candidate_stats(member, params) for pid, _, _, member in clusters}
    night_q = {pid for pid, st in stats.items() if st.night_days > params.min_candidate_days}
    day_q = {pid for pid, st in stats.items() if st.day_days > params.min_candidate_days}

    home_id = None
    if night_q:
        home_id = min(night_q, key=lambda p: (-stats[p].night_days, -stats[p].night_duration_s, p))
    work_candidates = day_q - ({home_id} if home_id is not None else set())
    work_id = None
    if work_candidates:
        work_id = min(work_candidates, key=lambda p: (-stats[p].day_days, -stats[p].day_duration_s, p))

    places = []
    for pid, lat, lon, member in clusters:
        st = stats[pid]
        if pid == home_id:
            category = "H"
        elif pid == work_id:
            category = "W"
        elif pid in night_q and pid in day_q:
            if st.night_days != st.day_days:
                category = "N" if st.night_days > st.day_days else "D"
            elif st.night_duration_s != st.day_duration_s:
                category = "N" if st.night_duration_s > st.day_duration_s else "D"
            else:
                category = "N"
        elif pid in night_q:
            category = "N"
        elif pid in day_q:
            category = "D"
        else:
            category = "O"
        places.append(SignificantPlace(user_id, pid, category, lat, lon, len(member), st))
    return places


def group_stays_by_cluster(stays: list[StayPoint], labels,
                           centroids) -> list[tuple[int, float, float, list[StayPoint]]]:
    """Package DBSCAN output as classify_places input, dropping noise stays."""
    clusters: list[tuple[int, float, float, list[StayPoint]]] = []
    for pid in range(len(centroids)):
        member = [s for s, lab in zip(stays, labels) if lab == pid]
        clusters.append((pid, float(centroids[pid][0]), float(centroids[pid][1]), member))
    assert all(lab == NOISE or 0 <= lab < len(centroids) for lab in labels)
    return clusters
