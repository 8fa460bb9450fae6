"""Shared helpers: local-time arithmetic, seed derivation, ordered worker maps.

All timestamps downstream of ingestion are "local epoch seconds": seconds
since 1970-01-01 00:00 in the corpus's civil time zone. Hour-of-day and
calendar-date logic is then plain integer arithmetic with no DST handling,
which is exactly what the wall-clock classification rules need.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from datetime import date, timedelta

SECONDS_PER_DAY = 86_400
SECONDS_PER_HOUR = 3_600

_EPOCH_DATE = date(1970, 1, 1)


def hour_of_day(local_ts):
    """Hour 0..23 of a local epoch timestamp (scalar or array)."""
    return (local_ts % SECONDS_PER_DAY) // SECONDS_PER_HOUR


def epoch_day(local_ts):
    """Calendar day index (days since 1970-01-01, local) of a timestamp."""
    return local_ts // SECONDS_PER_DAY


def weekday(day: int) -> int:
    """Weekday of an epoch day, Monday=0 .. Sunday=6 (1970-01-01 was a Thursday)."""
    return (day + 3) % 7


def epoch_day_to_date(day: int) -> date:
    return _EPOCH_DATE + timedelta(days=int(day))


def date_to_epoch_day(d: date) -> int:
    return (d - _EPOCH_DATE).days


def iso_to_epoch_day(s: str) -> int:
    return date_to_epoch_day(date.fromisoformat(s))


def derive_seed(seed: int, name: str, index: int = 0) -> int:
    """Derive an independent stream seed from the global seed.

    The scheme is a stable counter hash: sha256 over "seed:name:index",
    truncated to 64 bits. Every module draws its randomness from a seed
    derived this way, so one global seed reproduces the whole run.
    """
    digest = hashlib.sha256(f"{seed}:{name}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def map_ordered(fn, items, threads: int = 1):
    """Map fn over items, preserving input order in the result list.

    With threads > 1 the work runs on a thread pool; results are still
    collected in input order, so the output is identical at any pool size.
    """
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
