"""Stay-location extraction from a user's time-sorted GPS fixes.

A stay is a maximal run of fixes confined within a radius of its first
(anchor) fix for at least a minimum duration. Before extraction, teleport
noise is removed with a one-pass speed filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters between WGS84 points.

    Accepts scalars or numpy arrays (broadcasting applies). Symmetric, and
    exactly zero for identical coordinates.
    """
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class StayParams:
    """Thresholds for stay detection.

    max_radius_m: every fix of a stay lies within this distance of the
        stay's anchor fix.
    min_duration_s: minimum span between the first and last fix of a stay.
    speed_sigma_mult: noise filter removes fixes whose implied speed exceeds
        mean + this many standard deviations of the user's positive speeds.
    """

    max_radius_m: float = 200.0
    min_duration_s: int = 1800
    speed_sigma_mult: float = 3.0

    def __post_init__(self):
        if self.max_radius_m <= 0 or self.min_duration_s <= 0 or self.speed_sigma_mult <= 0:
            raise ValueError("stay parameters must be strictly positive")


@dataclass(frozen=True)
class StayPoint:
    """One dwell: centroid, arrival and leave times (local epoch seconds)."""

    user_id: str
    lat: float
    lon: float
    arv_t: int
    lev_t: int
    n_fixes: int

    @property
    def duration_s(self) -> int:
        return self.lev_t - self.arv_t


def filter_noise(ts: np.ndarray, lat: np.ndarray, lon: np.ndarray,
                 speed_sigma_mult: float = 3.0):
    """Remove teleport fixes by a single-pass speed threshold.

    The implied speed of each fix is the distance from its predecessor over
    the elapsed time. Fixes whose speed exceeds mean + mult * std of the
    stream's positive speeds are dropped; the first fix is always kept.
    Streams of <= 2 fixes, or with no positive speeds, come back unchanged.

    Returns (ts, lat, lon) with order preserved.
    """
    n = len(ts)
    if n <= 2:
        return ts, lat, lon
    dt = np.maximum(np.diff(ts), 1)  # guard duplicate timestamps
    dist = haversine_m(lat[:-1], lon[:-1], lat[1:], lon[1:])
    speed = dist / dt
    positive = speed[speed > 0]
    if positive.size == 0:
        return ts, lat, lon
    threshold = positive.mean() + speed_sigma_mult * positive.std()
    keep = np.ones(n, dtype=bool)
    keep[1:] = speed <= threshold
    return ts[keep], lat[keep], lon[keep]


def extract_stay_points(user_id: str, ts: np.ndarray, lat: np.ndarray,
                        lon: np.ndarray, params: StayParams) -> list[StayPoint]:
    """Anchor-scan stay extraction over a sorted, noise-filtered fix stream.

    From anchor index i, the run extends to the largest m such that every
    fix in (i, m] lies within max_radius_m of fix i. If the run spans at
    least min_duration_s it is emitted as a stay (centroid = unweighted mean
    of member fixes, arv_t/lev_t = first/last fix time) and the scan resumes
    at m + 1; otherwise it resumes at i + 1.
    """
    n = len(ts)
    stays: list[StayPoint] = []
    if n < 2:
        return stays

    phi = np.radians(lat)
    cos_phi = np.cos(phi)
    lam = np.radians(lon)

    def run_end(i: int) -> int:
        # Largest m with all fixes i+1..m within the radius of fix i,
        # scanned in geometrically growing chunks to stay vectorized.
        m = i
        j0 = i + 1
        chunk = 64
        while j0 < n:
            j1 = min(n, j0 + chunk)
            dphi = phi[j0:j1] - phi[i]
            dlam = lam[j0:j1] - lam[i]
            a = np.sin(dphi / 2.0) ** 2 + cos_phi[i] * cos_phi[j0:j1] * np.sin(dlam / 2.0) ** 2
            d = 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
            bad = np.nonzero(d > params.max_radius_m)[0]
            if bad.size:
                return j0 + int(bad[0]) - 1
            m = j1 - 1
            j0 = j1
            chunk *= 2
        return m

    i = 0
    while i < n - 1:
        m = run_end(i)
        if m > i and ts[m] - ts[i] >= params.min_duration_s:
            stays.append(StayPoint(
                user_id=user_id,
                lat=float(lat[i:m + 1].mean()),
                lon=float(lon[i:m + 1].mean()),
                arv_t=int(ts[i]),
                lev_t=int(ts[m]),
                n_fixes=m - i + 1,
            ))
            i = m + 1
        else:
            i += 1
    return stays
