"""Run configuration: a sectioned key=value file validated up front.

Every stage reads the same file; unknown sections or keys are rejected
before any work starts. One global seed under [run] derives each module's
stream seed unless that module sets its own.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .errors import ConfigError
from .factorization import NmfConfig
from .clustering import KmeansConfig
from .graph import MODE_ALL_DAYS, MODE_SPLIT
from .places import PlaceParams
from .spatial import DbscanParams
from .staypoint import StayParams
from .synth import ARCHETYPES, SyntheticSpec, equal_mix
from .util import derive_seed, iso_to_epoch_day

_WEEKDAY_NAMES = {"mon": 0, "tue": 1, "wed": 2, "thu": 3, "fri": 4, "sat": 5, "sun": 6}


def _parse_window(text: str) -> tuple[int, int]:
    try:
        start, end = text.split("-")
        h0, m0 = (int(x) for x in start.strip().split(":"))
        h1, m1 = (int(x) for x in end.strip().split(":"))
    except ValueError:
        raise ConfigError(f"window {text!r} must look like HH:MM-HH:MM") from None
    return h0 * 3600 + m0 * 60, h1 * 3600 + m1 * 60


def _parse_mix(text: str):
    text = text.strip()
    if text == "equal":
        return equal_mix()
    mix = []
    for part in text.split(","):
        try:
            name, frac = part.split(":")
            mix.append((name.strip(), float(frac)))
        except ValueError:
            raise ConfigError(f"archetype_mix entry {part!r} must be name:fraction") from None
        if mix[-1][0] not in ARCHETYPES:
            raise ConfigError(f"unknown archetype {mix[-1][0]!r}")
    return tuple(mix)


def _parse_bbox(text: str):
    try:
        values = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"bbox {text!r} must be four comma-separated floats") from None
    if len(values) != 4:
        raise ConfigError("bbox needs lat_min,lat_max,lon_min,lon_max")
    return values


def _parse_workdays(text: str) -> frozenset[int]:
    days = set()
    for part in text.split(","):
        name = part.strip().lower()
        if name not in _WEEKDAY_NAMES:
            raise ConfigError(f"unknown weekday {part!r}")
        days.add(_WEEKDAY_NAMES[name])
    return frozenset(days)


def _parse_dates(text: str) -> frozenset[int]:
    text = text.strip()
    if not text:
        return frozenset()
    try:
        return frozenset(iso_to_epoch_day(part.strip()) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"exclude_dates: {exc}") from None


# section -> key -> (converter, default-as-string or None meaning required/optional)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "input_path": (str, ""),
        "output_dir": (str, ""),
        "mode": (str, MODE_ALL_DAYS),
        "seed": (int, "0"),
    },
    "corpus": {
        "tz_offset_s": (int, "32400"),
        "sample_interval_s": (int, "300"),
        "gps_noise_sigma_m": (float, "10.0"),
        "dropout_prob": (float, "0.0"),
        "seed": (int, None),
        "n_users": (int, "100"),
        "n_days": (int, "60"),
        "archetype_mix": (_parse_mix, "equal"),
        "bbox": (_parse_bbox, "35.50,35.75,139.45,139.80"),
    },
    "staypoint": {
        "max_radius_m": (float, "200.0"),
        "min_duration_s": (int, "1800"),
        "speed_sigma_mult": (float, "3.0"),
    },
    "dbscan": {
        "eps_m": (float, "30.0"),
        "min_pts": (int, "10"),
    },
    "places": {
        "night_window": (_parse_window, "20:00-06:00"),
        "day_window": (_parse_window, "09:00-19:00"),
        "min_candidate_duration_s": (int, "5400"),
        "min_candidate_days": (int, "10"),
        "workdays": (_parse_workdays, "mon,tue,wed,thu,fri"),
        "exclude_dates": (_parse_dates, ""),
    },
    "lifegraph": {
        "empty_day_policy": (str, "skip"),
        "distinct_others": (int, "0"),
    },
    "nmf": {
        "rank": (int, "3"),
        "max_iters": (int, "500"),
        "rel_tol": (float, "1e-5"),
        "epsilon": (float, "1e-12"),
        "seed": (int, None),
        "rank_sweep_max": (int, "8"),
        "strong_threshold": (float, "1.0"),
    },
    "kmeans": {
        "k": (int, "7"),
        "n_restarts": (int, "10"),
        "max_iters": (int, "300"),
        "seed": (int, None),
        "elbow_k_max": (int, "10"),
    },
    "analysis": {
        "cell_size_m": (float, "500.0"),
        "min_cell_population": (int, "5"),
        "display_threshold": (float, "0.01"),
    },
}


@dataclass
class RunConfig:
    raw: dict[str, dict[str, object]]
    source_text: dict[str, dict[str, str]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.raw[section]

    @property
    def seed(self) -> int:
        return self.raw["run"]["seed"]

    @property
    def mode(self) -> str:
        return self.raw["run"]["mode"]

    @property
    def input_path(self) -> str | None:
        return self.raw["run"]["input_path"] or None

    @property
    def output_dir(self) -> str | None:
        return self.raw["run"]["output_dir"] or None

    def module_seed(self, name: str) -> int:
        explicit = self.raw.get(name, {}).get("seed")
        return explicit if explicit is not None else derive_seed(self.seed, name)

    def synthetic_spec(self) -> SyntheticSpec:
        c = self.raw["corpus"]
        return SyntheticSpec(
            n_users=c["n_users"], archetype_mix=c["archetype_mix"], n_days=c["n_days"],
            sample_interval_s=c["sample_interval_s"], gps_noise_sigma_m=c["gps_noise_sigma_m"],
            dropout_prob=c["dropout_prob"], bbox=c["bbox"], seed=self.module_seed("corpus"))

    def stay_params(self) -> StayParams:
        s = self.raw["staypoint"]
        return StayParams(max_radius_m=s["max_radius_m"], min_duration_s=s["min_duration_s"],
                          speed_sigma_mult=s["speed_sigma_mult"])

    def dbscan_params(self) -> DbscanParams:
        d = self.raw["dbscan"]
        return DbscanParams(eps_m=d["eps_m"], min_pts=d["min_pts"])

    def place_params(self) -> PlaceParams:
        p = self.raw["places"]
        night = p["night_window"]
        day = p["day_window"]
        return PlaceParams(
            night_start_s=night[0], night_end_s=night[1],
            day_start_s=day[0], day_end_s=day[1],
            min_candidate_duration_s=p["min_candidate_duration_s"],
            min_candidate_days=p["min_candidate_days"],
            workdays=p["workdays"], excluded_days=p["exclude_dates"])

    def nmf_config(self) -> NmfConfig:
        n = self.raw["nmf"]
        return NmfConfig(rank=n["rank"], max_iters=n["max_iters"], rel_tol=n["rel_tol"],
                         epsilon=n["epsilon"], seed=self.module_seed("nmf"))

    def kmeans_config(self) -> KmeansConfig:
        k = self.raw["kmeans"]
        return KmeansConfig(k=k["k"], n_restarts=k["n_restarts"],
                            max_iters=k["max_iters"], seed=self.module_seed("kmeans"))

    def snapshot(self) -> dict:
        """The validated configuration as written, for the run manifest."""
        return {section: dict(keys) for section, keys in self.source_text.items()}


def load_config(path=None, text: str | None = None,
                overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Read, validate and type a run configuration.

    Raises ConfigError on unknown sections/keys, untyped values, or
    violated cross-field constraints; nothing runs until this passes.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if overrides:
        for section, kv in overrides.items():
            if not parser.has_section(section):
                parser.add_section(section)
            for key, value in kv.items():
                parser.set(section, key, value)

    raw: dict[str, dict[str, object]] = {}
    source: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    for section, keys in _SCHEMA.items():
        raw[section] = {}
        source[section] = {}
        for key, (convert, default) in keys.items():
            if parser.has_option(section, key):
                value_text = parser.get(section, key)
            elif default is not None:
                value_text = default
            else:
                raw[section][key] = None  # optional, e.g. per-module seed
                continue
            try:
                raw[section][key] = convert(value_text)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {key} = {value_text!r}: {exc}") from None
            source[section][key] = value_text

    mode = raw["run"]["mode"]
    if mode not in (MODE_ALL_DAYS, MODE_SPLIT):
        raise ConfigError(f"mode must be {MODE_ALL_DAYS!r} or {MODE_SPLIT!r}, got {mode!r}")
    if raw["lifegraph"]["empty_day_policy"] not in ("skip", "label-u"):
        raise ConfigError("empty_day_policy must be 'skip' or 'label-u'")
    if raw["lifegraph"]["distinct_others"] < 0:
        raise ConfigError("distinct_others must be >= 0")
    if not 0.0 <= raw["corpus"]["dropout_prob"] < 1.0:
        raise ConfigError("dropout_prob must be in [0, 1)")
    cfg = RunConfig(raw=raw, source_text=source)
    # construct every typed param set now so invalid values fail before any stage
    cfg.synthetic_spec()
    cfg.stay_params()
    cfg.dbscan_params()
    cfg.place_params()
    cfg.nmf_config()
    cfg.kmeans_config()
    return cfg
