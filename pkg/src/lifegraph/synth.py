"""Seeded synthetic GPS populations with ground truth.

Each user belongs to one of seven behavioral archetypes (home stayer,
teleworker, home-and-about, traveler, balanced, regular office, long-hours
office). An archetype is a daily schedule template: dwell blocks at the
user's personal places with per-user and per-day jitter, home filling the
gaps. GPS fixes are emitted on a fixed interval grid with Gaussian position
noise during dwells and straight-line interpolation during moves.

Output is deterministic: the spec plus its seed fully determine every byte,
and each user draws from an independent derived stream, so generation order
does not matter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import UserTrack
from .util import SECONDS_PER_DAY, date_to_epoch_day, derive_seed, epoch_day_to_date, weekday

from datetime import date

# All synthetic corpora start on this Monday; day indices count from here.
START_DAY = date_to_epoch_day(date(2013, 1, 7))

LABELS = ("H", "W", "N", "D", "O", "U")
_CAT_RANK = {c: i for i, c in enumerate(LABELS)}
_U_CODE = LABELS.index("U")

_TRAIT_SIGMA_H = 0.10   # per-user shift of the whole schedule, hours
_JITTER_SIGMA_H = 0.07  # per-day jitter on each dwell boundary, hours
_MIN_PLACE_SEPARATION_M = 500.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int
    archetype_mix: tuple[tuple[str, float], ...]
    n_days: int
    sample_interval_s: int = 300
    gps_noise_sigma_m: float = 10.0
    dropout_prob: float = 0.0
    bbox: tuple[float, float, float, float] = (35.50, 35.75, 139.45, 139.80)
    seed: int = 0

    def __post_init__(self):
        total = sum(f for _, f in self.archetype_mix)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"archetype fractions sum to {total}, expected 1")
        for name, _ in self.archetype_mix:
            if name not in ARCHETYPES:
                raise ValueError(f"unknown archetype {name!r}")
        lat_min, lat_max, lon_min, lon_max = self.bbox
        if not (lat_min < lat_max and lon_min < lon_max):
            raise ValueError("bbox must be (lat_min, lat_max, lon_min, lon_max)")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")
        if self.n_users < 0 or self.n_days < 1 or self.sample_interval_s < 1:
            raise ValueError("n_users, n_days, sample_interval_s out of range")


@dataclass(frozen=True)
class TruePlace:
    key: str
    category: str
    lat: float
    lon: float


@dataclass
class UserTruth:
    user_id: str
    archetype: str
    places: list[TruePlace]
    days: np.ndarray        # epoch days covered
    labels: np.ndarray      # (n_days, 24) int8 codes into LABELS

    def place(self, category: str) -> TruePlace | None:
        for p in self.places:
            if p.category == category:
                return p
        return None


@dataclass
class GroundTruth:
    users: list[UserTruth]
    by_user: dict[str, UserTruth] = field(init=False)

    def __post_init__(self):
        self.by_user = {u.user_id: u for u in self.users}


# --- archetype schedule templates -----------------------------------------
#
# A template factory draws any per-user traits once, then returns the daily
# planner: (rng, workday, dow) -> away-from-home blocks as (place pool,
# nominal start hour, nominal end hour). Dwells meant to stay in the "other"
# bucket are kept under ~85 minutes so they never reach candidate duration,
# while workplaces and the one frequent daytime spot (studio) are long and
# regular. Boundaries sit on hour marks where possible: the hourly labeling
# then has wide winner margins and survives the sampling-grid quantization.

_Away = tuple[tuple[str, ...], float, float]


def _t_home_stayer(rng):
    # short weekend errands split the otherwise continuous home dwell into
    # enough separate stays for density clustering; weekdays stay pure home
    def plan(rng, workday, dow) -> list[_Away]:
        if not workday and rng.random() < 0.8:
            return [(("err1", "err2"), 11.0, 12.0)]
        return []
    return plan


def _t_telework(rng):
    # two fixed office weekdays per user: the day mix is constant, so the
    # group stays tight in embedding space
    office_days = set(int(d) for d in rng.permutation(5)[:2])

    def plan(rng, workday, dow) -> list[_Away]:
        if workday and dow in office_days:
            aways = [(("work",), 9.0, 16.0)]
            if rng.random() < 0.30:
                aways.append((("cafe",), 16.5, 17.5))
            return aways
        if rng.random() < 0.35:
            return [(("cafe",), 14.0, 15.0)]
        return []
    return plan


def _t_home_other(rng):
    pool = ("spot1", "spot2", "spot3", "spot4")

    def plan(rng, workday, dow) -> list[_Away]:
        aways = []
        if rng.random() < 0.90:
            aways.append((pool, 9.0, 10.33))
        if rng.random() < 0.80:
            aways.append((pool, 11.0, 12.33))
        if rng.random() < 0.80:
            aways.append((pool, 14.0, 15.33))
        if rng.random() < 0.55:
            aways.append((pool, 17.0, 18.33))
        return aways
    return plan


def _t_traveler(rng):
    hops = ("hop1", "hop2", "hop3")
    stops = ("stop1", "stop2", "stop3", "stop4")

    def plan(rng, workday, dow) -> list[_Away]:
        aways = [(hops, 9.0, 10.0), (stops, 11.0, 12.0), (hops, 13.5, 14.5)]
        if rng.random() < 0.55:
            aways.append((("night",), 19.5, 22.5))
        return aways
    return plan


def _t_balanced(rng):
    def plan(rng, workday, dow) -> list[_Away]:
        if workday:
            aways = [(("work",), 10.0, 14.0)]
            if rng.random() < 0.55:
                aways.append((("studio",), 15.0, 18.0))
            elif rng.random() < 0.50:
                aways.append((("fun",), 15.0, 16.25))
            return aways
        if rng.random() < 0.9:
            return [(("fun",), 11.0, 13.0)]
        return []
    return plan


def _t_office_regular(rng):
    def plan(rng, workday, dow) -> list[_Away]:
        if workday:
            aways = [(("work",), 9.0, 18.0)]
            if rng.random() < 0.45:
                aways.append((("gym",), 19.0, 20.0))
            return aways
        if rng.random() < 0.5:
            return [(("wkd1", "wkd2"), 10.5, 11.75)]
        return []
    return plan


def _t_office_long(rng):
    def plan(rng, workday, dow) -> list[_Away]:
        if workday:
            return [(("work",), 8.5, 21.5)]
        if dow == 5 and rng.random() < 0.70:
            return [(("work",), 10.0, 16.0)]
        if dow == 6 and rng.random() < 0.35:
            return [(("work",), 10.0, 16.0)]
        return []
    return plan


@dataclass(frozen=True)
class Archetype:
    name: str
    place_categories: tuple[tuple[str, str], ...]  # (key, category), home first
    template: object

    @property
    def place_keys(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.place_categories)


ARCHETYPES: dict[str, Archetype] = {a.name: a for a in (
    Archetype("home_stayer", (("home", "H"), ("err1", "O"), ("err2", "O")), _t_home_stayer),
    Archetype("telework", (("home", "H"), ("work", "W"), ("cafe", "O")), _t_telework),
    Archetype("home_other", (("home", "H"), ("spot1", "O"), ("spot2", "O"),
                             ("spot3", "O"), ("spot4", "O")), _t_home_other),
    Archetype("traveler", (("home", "H"), ("hop1", "O"), ("hop2", "O"), ("hop3", "O"),
                           ("stop1", "O"), ("stop2", "O"), ("stop3", "O"), ("stop4", "O"),
                           ("night", "N")), _t_traveler),
    Archetype("balanced", (("home", "H"), ("work", "W"), ("studio", "D"),
                           ("fun", "O")), _t_balanced),
    Archetype("office_regular", (("home", "H"), ("work", "W"), ("gym", "O"),
                                 ("wkd1", "O"), ("wkd2", "O")), _t_office_regular),
    Archetype("office_long", (("home", "H"), ("work", "W")), _t_office_long),
)}

OFFICE_ARCHETYPES = ("office_regular", "office_long")


def apportion(n: int, mix: tuple[tuple[str, float], ...]) -> list[int]:
    """Largest-remainder apportionment of n users over mix fractions."""
    quotas = [n * f for _, f in mix]
    counts = [int(q) for q in quotas]
    remainders = sorted(range(len(mix)), key=lambda i: (counts[i] - quotas[i], i))
    for i in range(n - sum(counts)):
        counts[remainders[i]] += 1
    return counts


_N_TOWNS = 6
_TOWN_SIGMA_M = 1200.0
_METERS_PER_DEG = 6_371_000.0 * np.pi / 180.0


def town_centers(spec: SyntheticSpec) -> np.ndarray:
    """Corpus-level residential centers; homes cluster around these."""
    rng = np.random.default_rng(derive_seed(spec.seed, "towns"))
    lat_min, lat_max, lon_min, lon_max = spec.bbox
    pad_lat = 0.1 * (lat_max - lat_min)
    pad_lon = 0.1 * (lon_max - lon_min)
    lat = rng.uniform(lat_min + pad_lat, lat_max - pad_lat, _N_TOWNS)
    lon = rng.uniform(lon_min + pad_lon, lon_max - pad_lon, _N_TOWNS)
    return np.column_stack([lat, lon])


def _place_layout(rng, bbox, keys, towns) -> dict[str, tuple[float, float]]:
    from .staypoint import haversine_m

    lat_min, lat_max, lon_min, lon_max = bbox
    placed: dict[str, tuple[float, float]] = {}
    town = towns[int(rng.integers(len(towns)))]
    for key in keys:
        for _ in range(400):
            if key == "home":
                lat = town[0] + rng.normal(0.0, _TOWN_SIGMA_M) / _METERS_PER_DEG
                lon = town[1] + rng.normal(0.0, _TOWN_SIGMA_M) / (
                    _METERS_PER_DEG * np.cos(np.radians(town[0])))
                lat = min(max(lat, lat_min), lat_max)
                lon = min(max(lon, lon_min), lon_max)
            else:
                lat = rng.uniform(lat_min, lat_max)
                lon = rng.uniform(lon_min, lon_max)
            lat = round(float(lat), 6)
            lon = round(float(lon), 6)
            if all(haversine_m(lat, lon, plat, plon) >= _MIN_PLACE_SEPARATION_M
                   for plat, plon in placed.values()):
                placed[key] = (lat, lon)
                break
        else:
            raise ValueError("bbox too small to place places 500 m apart")
    return placed


def _assemble_day(rng, aways: list[_Away], trait: float) -> list[tuple[str, float, float]]:
    """Turn away blocks into a full-day dwell chain with home filling gaps."""
    segs = []
    for pool, start_h, end_h in aways:
        key = pool[int(rng.integers(len(pool)))] if len(pool) > 1 else pool[0]
        s = start_h + trait + rng.normal(0.0, _JITTER_SIGMA_H)
        e = end_h + trait + rng.normal(0.0, _JITTER_SIGMA_H)
        s = min(max(s, 0.3), 23.3)
        e = min(max(e, s + 0.2), 23.3)
        if e - s >= 0.15:
            segs.append((key, s, e))
    segs.sort(key=lambda kse: kse[1])
    cleaned = []
    cursor = 0.0
    for key, s, e in segs:
        s = max(s, cursor + 0.08)
        if e - s >= 0.15:
            cleaned.append((key, s, e))
            cursor = e

    plan: list[tuple[str, float, float]] = []
    cursor = 0.0
    for key, s, e in cleaned:
        home_end = s - 0.25
        if home_end - cursor >= 0.25:
            plan.append(("home", cursor, home_end))
        plan.append((key, s, e))
        cursor = e
    plan.append(("home", min(cursor + 0.25, 23.7), 24.0))
    return plan


def _true_day_labels(plan, place_cat, place_idx) -> np.ndarray:
    """Hourly labels for a day plan: longest-overlap dwell wins each hour.

    Ties break on earlier dwell start, then category order H<W<N<D<O, then
    the place's registry index. Hours with no dwell overlap are U.
    """
    codes = np.full(24, _U_CODE, dtype=np.int8)
    best = [None] * 24
    for key, s, e in plan:
        rank = _CAT_RANK[place_cat[key]]
        idx = place_idx[key]
        for h in range(max(int(s), 0), min(int(np.ceil(e)), 24)):
            overlap = min(e, h + 1.0) - max(s, float(h))
            if overlap <= 0:
                continue
            cand = (-overlap, s, rank, idx)
            if best[h] is None or cand < best[h]:
                best[h] = cand
                codes[h] = rank
    return codes


def _emit_fixes(rng, spec, plans, places, place_keys):
    """Vectorized fix generation for one user across all days."""
    starts = []
    ends = []
    pidx = []
    key_index = {k: i for i, k in enumerate(place_keys)}
    for di, plan in enumerate(plans):
        base = (START_DAY + di) * SECONDS_PER_DAY
        for key, s, e in plan:
            starts.append(base + int(round(s * 3600)))
            ends.append(base + int(round(e * 3600)))
            pidx.append(key_index[key])
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    pidx = np.asarray(pidx, dtype=np.int64)
    place_lat = np.array([places[k][0] for k in place_keys])
    place_lon = np.array([places[k][1] for k in place_keys])

    t0 = START_DAY * SECONDS_PER_DAY
    ts = np.arange(t0, t0 + spec.n_days * SECONDS_PER_DAY, spec.sample_interval_s, dtype=np.int64)

    seg = np.searchsorted(starts, ts, side="right") - 1
    in_dwell = ts < ends[seg]

    lat = np.empty(len(ts))
    lon = np.empty(len(ts))
    dwell_place = pidx[seg[in_dwell]]
    lat[in_dwell] = place_lat[dwell_place]
    lon[in_dwell] = place_lon[dwell_place]

    mv = ~in_dwell
    if mv.any():
        i = seg[mv]
        frac = (ts[mv] - ends[i]) / (starts[i + 1] - ends[i])
        lat[mv] = place_lat[pidx[i]] + frac * (place_lat[pidx[i + 1]] - place_lat[pidx[i]])
        lon[mv] = place_lon[pidx[i]] + frac * (place_lon[pidx[i + 1]] - place_lon[pidx[i]])

    if spec.gps_noise_sigma_m > 0:
        n_dwell = int(in_dwell.sum())
        noise = rng.normal(0.0, spec.gps_noise_sigma_m, size=(n_dwell, 2))
        meters_per_deg = 6_371_000.0 * np.pi / 180.0
        lat[in_dwell] += noise[:, 0] / meters_per_deg
        lon[in_dwell] += noise[:, 1] / (meters_per_deg * np.cos(np.radians(lat[in_dwell])))

    if spec.dropout_prob > 0:
        keep = rng.random(len(ts)) >= spec.dropout_prob
        ts, lat, lon = ts[keep], lat[keep], lon[keep]

    return ts, np.round(lat, 6), np.round(lon, 6)


def _generate_user(spec: SyntheticSpec, index: int, archetype: Archetype, towns):
    user_id = f"u{index:05d}"
    rng = np.random.default_rng(derive_seed(spec.seed, "synth-user", index))

    placed = _place_layout(rng, spec.bbox, archetype.place_keys, towns)
    trait = float(rng.normal(0.0, _TRAIT_SIGMA_H))
    planner = archetype.template(rng)
    place_cat = dict(archetype.place_categories)
    place_idx = {k: i for i, (k, _) in enumerate(archetype.place_categories)}

    plans = []
    labels = np.empty((spec.n_days, 24), dtype=np.int8)
    days = np.arange(START_DAY, START_DAY + spec.n_days, dtype=np.int64)
    for di in range(spec.n_days):
        day = START_DAY + di
        dow = weekday(day)
        plan = _assemble_day(rng, planner(rng, dow < 5, dow), trait)
        plans.append(plan)
        labels[di] = _true_day_labels(plan, place_cat, place_idx)

    ts, lat, lon = _emit_fixes(rng, spec, plans, placed, archetype.place_keys)
    track = UserTrack(user_id, ts, lat, lon)
    truth = UserTruth(
        user_id=user_id,
        archetype=archetype.name,
        places=[TruePlace(k, c, *placed[k]) for k, c in archetype.place_categories],
        days=days,
        labels=labels,
    )
    return track, truth


def iter_synthetic(spec: SyntheticSpec):
    """Yield (UserTrack, UserTruth) per user in ascending user_id order."""
    counts = apportion(spec.n_users, spec.archetype_mix)
    towns = town_centers(spec)
    index = 0
    for (name, _), count in zip(spec.archetype_mix, counts):
        archetype = ARCHETYPES[name]
        for _ in range(count):
            yield _generate_user(spec, index, archetype, towns)
            index += 1


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[UserTrack], GroundTruth]:
    tracks = []
    truths = []
    for track, truth in iter_synthetic(spec):
        tracks.append(track)
        truths.append(truth)
    return tracks, GroundTruth(truths)


def equal_mix(names=None) -> tuple[tuple[str, float], ...]:
    """Even archetype mix over the given names (default: all seven)."""
    names = tuple(names) if names is not None else tuple(ARCHETYPES)
    return tuple((name, 1.0 / len(names)) for name in names)
