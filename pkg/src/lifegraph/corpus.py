"""Raw GPS ingestion.

The input contract is a UTF-8 CSV with header ``user_id,timestamp,lat,lon``.
Timestamps are either integer UTC epoch seconds (shifted into local time by
tz_offset_s at ingestion) or naive ISO-8601 strings, which are taken to be
local civil time already; ISO strings carrying an explicit UTC offset are
converted and then shifted. After parsing, everything downstream works in
local epoch seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import pandas as pd
import polars as pl

CSV_HEADER = ["user_id", "timestamp", "lat", "lon"]

_NAIVE_EPOCH = datetime(1970, 1, 1)


class ParseError(ValueError):
    """Unusable input file (missing or garbled header)."""


@dataclass(frozen=True)
class GpsRecord:
    """One raw fix: UTC epoch seconds plus WGS84 degrees."""

    user_id: str
    timestamp: int
    lat: float
    lon: float


@dataclass
class UserTrack:
    """One user's fixes in local time, sorted ascending by timestamp."""

    user_id: str
    ts: np.ndarray  # int64 local epoch seconds
    lat: np.ndarray
    lon: np.ndarray

    def __len__(self) -> int:
        return len(self.ts)


@dataclass
class ParseReport:
    rows_read: int = 0
    rows_skipped: int = 0
    users: int = 0
    skip_reasons: dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str, count: int = 1):
        if count:
            self.rows_skipped += count
            self.skip_reasons[reason] = self.skip_reasons.get(reason, 0) + count


def _iso_to_local_epoch(value: str, tz_offset_s: int):
    try:
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        return None
    if dt.tzinfo is None:
        return int((dt - _NAIVE_EPOCH).total_seconds())
    return int(dt.astimezone(timezone.utc).timestamp()) + tz_offset_s


def _parse_chunk(df: pd.DataFrame, tz_offset_s: int, report: ParseReport):
    ts_raw = df["timestamp"].astype(str).str.strip()
    numeric = pd.to_numeric(ts_raw, errors="coerce")
    local_ts = np.full(len(df), np.iinfo(np.int64).min, dtype=np.int64)

    is_int = (numeric.notna() & (np.floor(numeric.fillna(0.5)) == numeric.fillna(0.5))).to_numpy()
    local_ts[is_int] = numeric.to_numpy()[is_int].astype(np.int64) + tz_offset_s
    report.skip("non_integer_timestamp", int((numeric.notna().to_numpy() & ~is_int).sum()))

    n_bad_iso = 0
    for idx in np.nonzero(numeric.isna().to_numpy())[0]:
        parsed = _iso_to_local_epoch(ts_raw.iloc[idx], tz_offset_s)
        if parsed is None:
            n_bad_iso += 1
        else:
            local_ts[idx] = parsed
    report.skip("unparseable_timestamp", n_bad_iso)

    ts_ok = local_ts != np.iinfo(np.int64).min
    nonpos = is_int & (numeric.fillna(0).to_numpy() <= 0)
    report.skip("non_positive_timestamp", int(nonpos.sum()))
    ts_ok &= ~nonpos

    lat = pd.to_numeric(df["lat"], errors="coerce").to_numpy(dtype=np.float64)
    lon = pd.to_numeric(df["lon"], errors="coerce").to_numpy(dtype=np.float64)
    coord_ok = (np.isfinite(lat) & np.isfinite(lon)
                & (np.abs(lat) <= 90.0) & (np.abs(lon) <= 180.0))
    report.skip("out_of_range_coordinates", int((ts_ok & ~coord_ok).sum()))
    good = ts_ok & coord_ok
    return df["user_id"].to_numpy()[good], local_ts[good], lat[good], lon[good]


def parse_gps_csv(path, tz_offset_s: int = 0,
                  chunk_rows: int = 2_000_000) -> tuple[list[UserTrack], ParseReport]:
    """Parse a GPS CSV into per-user tracks sorted by local timestamp.

    Users come back in ascending user_id order; rows may arrive in any
    order. Malformed rows (bad numbers, out-of-range coordinates,
    non-positive epoch timestamps) are counted and skipped; a missing or
    wrong header raises ParseError; an empty file is an empty corpus. The
    file is read in chunks so corpora larger than memory-resident frames
    still parse.
    """
    report = ParseReport()
    per_user: dict[str, list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = {}
    try:
        # round_trip: the only pandas float parser that is correctly rounded,
        # which the byte-level reproducibility contract depends on
        reader = pd.read_csv(path, dtype={"user_id": str, "timestamp": str},
                             skip_blank_lines=True, chunksize=chunk_rows,
                             float_precision="round_trip")
    except pd.errors.EmptyDataError:
        return [], report
    with reader:
        for chunk in reader:
            if list(chunk.columns) != CSV_HEADER:
                raise ParseError(
                    f"expected header {','.join(CSV_HEADER)!r}, "
                    f"got {','.join(map(str, chunk.columns))!r}")
            report.rows_read += len(chunk)
            users, local_ts, lat, lon = _parse_chunk(chunk, tz_offset_s, report)
            if not len(users):
                continue
            order = np.argsort(users, kind="stable")
            users = users[order]
            local_ts, lat, lon = local_ts[order], lat[order], lon[order]
            boundaries = np.nonzero(users[1:] != users[:-1])[0] + 1
            starts = np.concatenate(([0], boundaries))
            ends = np.concatenate((boundaries, [len(users)]))
            for s, e in zip(starts, ends):
                per_user.setdefault(str(users[s]), []).append(
                    (local_ts[s:e], lat[s:e], lon[s:e]))

    tracks: list[UserTrack] = []
    for user_id in sorted(per_user):
        parts = per_user[user_id]
        ts = np.concatenate([p[0] for p in parts])
        lat = np.concatenate([p[1] for p in parts])
        lon = np.concatenate([p[2] for p in parts])
        order = np.argsort(ts, kind="stable")
        tracks.append(UserTrack(user_id, ts[order], lat[order], lon[order]))
    report.users = len(tracks)
    return tracks, report


def write_gps_csv(path, tracks, tz_offset_s: int = 0, append: bool = False):
    """Write tracks as the input CSV contract (UTC epoch integer timestamps).

    Coordinates are written with 6 decimals; tracks carrying values already
    rounded to 6 decimals round-trip exactly through parse_gps_csv.
    """
    frames = []
    for t in tracks:
        frames.append(pl.DataFrame({
            "user_id": np.repeat(t.user_id, len(t)),
            "timestamp": t.ts - tz_offset_s,
            "lat": t.lat,
            "lon": t.lon,
        }))
    if frames:
        out = pl.concat(frames)
    else:
        out = pl.DataFrame({"user_id": pl.Series([], dtype=pl.String),
                            "timestamp": pl.Series([], dtype=pl.Int64),
                            "lat": pl.Series([], dtype=pl.Float64),
                            "lon": pl.Series([], dtype=pl.Float64)})
    if append:
        with open(path, "ab") as fh:
            out.write_csv(fh, float_precision=6, include_header=False)
    else:
        out.write_csv(path, float_precision=6)


def track_to_records(track: UserTrack, tz_offset_s: int = 0) -> list[GpsRecord]:
    return [GpsRecord(track.user_id, int(t) - tz_offset_s, float(la), float(lo))
            for t, la, lo in zip(track.ts, track.lat, track.lon)]
