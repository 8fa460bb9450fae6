"""Stage orchestration and artifact IO.

Each stage reads its upstream artifacts (or the in-memory results when run
as part of ``pipeline``), writes its own artifacts atomically, and updates
``manifest.json``. Artifact contents are deterministic for a given config
and seed; the manifest additionally carries wall-clock timings, so it is
the one file excluded from byte-for-byte reproducibility.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
import polars as pl
import scipy.sparse as sp

from . import __version__
from .analysis import (
    group_profiles,
    group_share_correlations,
    home_work_grid,
    regional_stats,
    weekday_weekend_transitions,
)
from .clustering import ClusterResult, compare_direct_vs_metagraph, elbow_curve, kmeans, suggest_k
from .config import RunConfig
from .corpus import UserTrack, parse_gps_csv, write_gps_csv
from .errors import ConfigError, InvariantError, MissingArtifactError
from .factorization import Factorization, align_basis, nmf, strong_pattern
from .graph import (
    MODE_SPLIT,
    LabeledDwell,
    SupportGraph,
    TotalMatrix,
    assemble_total_matrix,
    build_support_graph,
    day_to_ta_vector,
    label_rank,
    label_user_days,
)
from .places import SignificantPlace, CandidateStats, classify_places, group_stays_by_cluster
from .spatial import cluster_user_stays
from .staypoint import StayPoint, extract_stay_points, filter_noise
from .synth import iter_synthetic
from .util import epoch_day, epoch_day_to_date, iso_to_epoch_day, map_ordered

GPS_CSV = "gps.csv"
TRUTH_ARCHETYPES = "ground_truth_archetypes.csv"
TRUTH_LABELS = "ground_truth_labels.csv"
TRUTH_PLACES = "ground_truth_places.csv"
STAYS_CSV = "stays.csv"
OBSERVED_DAYS_CSV = "observed_days.csv"
CLUSTERS_CSV = "clusters.csv"
PLACES_CSV = "places.csv"
SUPPORT_GRAPH_CSV = "support_graph.csv"
TA_MATRIX_CSV = "ta_matrix.csv"
TA_MATRIX_JSON = "ta_matrix.json"
TA_MATRIX_SPLIT_CSV = "ta_matrix_split.csv"
TA_MATRIX_SPLIT_JSON = "ta_matrix_split.json"
BASIS_W_CSV = "basis_w.csv"
COORDS_H_CSV = "coords_h.csv"
BASIS_W_SPLIT_CSV = "basis_w_split.csv"
COORDS_H_SPLIT_CSV = "coords_h_split.csv"
STRONG_PATTERNS_CSV = "strong_patterns.csv"
RANK_ERROR_CSV = "rank_error.csv"
ASSIGNMENTS_CSV = "assignments.csv"
CENTROIDS_CSV = "centroids.csv"
ELBOW_CSV = "elbow.csv"
PROFILES_CSV = "profiles.csv"
GRID_CSV = "grid.csv"
CORRELATIONS_CSV = "correlations.csv"
TRANSITIONS_CSV = "transitions.csv"
HOME_WORK_GRID_CSV = "home_work_grid.csv"
COMPARISON_JSON = "comparison.json"
COMPARISON_PROFILES_CSV = "comparison_profiles.csv"
MANIFEST_JSON = "manifest.json"

# Files that must be byte-identical across reruns of the same config+seed
# (the manifest carries timings and is exempt).
DETERMINISTIC_ARTIFACTS = [
    GPS_CSV, TRUTH_ARCHETYPES, TRUTH_LABELS, TRUTH_PLACES, STAYS_CSV,
    OBSERVED_DAYS_CSV, CLUSTERS_CSV, PLACES_CSV, SUPPORT_GRAPH_CSV,
    TA_MATRIX_CSV, TA_MATRIX_JSON, TA_MATRIX_SPLIT_CSV, TA_MATRIX_SPLIT_JSON,
    BASIS_W_CSV, COORDS_H_CSV, BASIS_W_SPLIT_CSV, COORDS_H_SPLIT_CSV,
    STRONG_PATTERNS_CSV, RANK_ERROR_CSV, ASSIGNMENTS_CSV, CENTROIDS_CSV,
    ELBOW_CSV, PROFILES_CSV, GRID_CSV, CORRELATIONS_CSV, TRANSITIONS_CSV,
    HOME_WORK_GRID_CSV,
]


def _atomic_replace(path: str, write_fn):
    tmp = f"{path}.tmp"
    write_fn(tmp)
    os.replace(tmp, path)


def _write_df(path: str, df: pd.DataFrame):
    # float columns go through repr: shortest form that round-trips exactly,
    # so reloading an artifact reproduces the in-memory values bit for bit
    out = df.copy()
    for col in out.columns:
        if out[col].dtype == np.float64:
            out[col] = out[col].map(repr)
    _atomic_replace(path, lambda tmp: out.to_csv(tmp, index=False))


def _read_df(path: str, **kwargs) -> pd.DataFrame:
    # the round_trip parser is the only one that inverts repr exactly
    return pd.read_csv(path, float_precision="round_trip", **kwargs)


def _write_json(path: str, payload: dict):
    _atomic_replace(path, lambda tmp: open(tmp, "w", encoding="utf-8").write(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"))


def _require(out: str, *names: str) -> None:
    missing = [n for n in names if not os.path.exists(os.path.join(out, n))]
    if missing:
        raise MissingArtifactError(
            f"missing upstream artifact(s) in {out}: {', '.join(missing)}")


# --- per-user processing ----------------------------------------------------

@dataclass
class UserResult:
    user_id: str
    stays: list[StayPoint]
    observed_days: np.ndarray
    cluster_labels: np.ndarray | None = None
    places: list[SignificantPlace] | None = None

    @property
    def has_home(self) -> bool:
        return bool(self.places) and any(p.category == "H" for p in self.places)

    def dwells(self) -> list[LabeledDwell]:
        category = {p.place_id: p.category for p in self.places}
        out = []
        for stay, label in zip(self.stays, self.cluster_labels):
            label = int(label)
            if label >= 0:
                out.append(LabeledDwell(stay.arv_t, stay.lev_t, category[label], label))
        return out


def extract_user(track: UserTrack, stay_params) -> UserResult:
    ts, lat, lon = filter_noise(track.ts, track.lat, track.lon, stay_params.speed_sigma_mult)
    stays = extract_stay_points(track.user_id, ts, lat, lon, stay_params)
    observed = np.unique(epoch_day(ts)) if len(ts) else np.empty(0, dtype=np.int64)
    return UserResult(track.user_id, stays, observed)


def detect_user(result: UserResult, dbscan_params, place_params) -> UserResult:
    labels, centroids = cluster_user_stays(result.stays, dbscan_params)
    clusters = group_stays_by_cluster(result.stays, labels, centroids)
    result.cluster_labels = labels
    result.places = classify_places(result.user_id, clusters, place_params)
    return result


def user_day_vectors(result: UserResult, graph_or_none, distinct_others: int,
                     empty_day_policy: str):
    """Day paths for one user per the empty-day policy; vectors if graph given."""
    if empty_day_policy == "skip":
        days = result.observed_days
    else:  # label-u: every calendar day in the user's observed range
        if len(result.observed_days) == 0:
            days = result.observed_days
        else:
            days = np.arange(result.observed_days.min(), result.observed_days.max() + 1)
    paths = label_user_days(result.dwells(), result.user_id, days, distinct_others)
    if graph_or_none is None:
        return days, paths
    vectors = [day_to_ta_vector(p, graph_or_none) for p in paths]
    return days, vectors


# --- pipeline state ---------------------------------------------------------

@dataclass
class PipelineState:
    users: list[UserResult] | None = None
    graph: SupportGraph | None = None
    matrix: TotalMatrix | None = None
    matrix_split: TotalMatrix | None = None
    fact: Factorization | None = None
    fact_split: Factorization | None = None
    cluster: ClusterResult | None = None
    owners: list[str] | None = None


# --- artifact writers / loaders ----------------------------------------------

def _stays_frame(users: list[UserResult]) -> pd.DataFrame:
    rows = {"user_id": [], "stay_idx": [], "lat": [], "lon": [],
            "arv_t": [], "lev_t": [], "n_fixes": []}
    for u in users:
        for idx, s in enumerate(u.stays):
            rows["user_id"].append(u.user_id)
            rows["stay_idx"].append(idx)
            rows["lat"].append(s.lat)
            rows["lon"].append(s.lon)
            rows["arv_t"].append(s.arv_t)
            rows["lev_t"].append(s.lev_t)
            rows["n_fixes"].append(s.n_fixes)
    return pd.DataFrame(rows)


def _load_stays(out: str) -> dict[str, list[StayPoint]]:
    df = _read_df(os.path.join(out, STAYS_CSV), dtype={"user_id": str})
    stays: dict[str, list[StayPoint]] = {}
    for row in df.sort_values(["user_id", "stay_idx"]).itertuples(index=False):
        stays.setdefault(row.user_id, []).append(StayPoint(
            row.user_id, float(row.lat), float(row.lon),
            int(row.arv_t), int(row.lev_t), int(row.n_fixes)))
    return stays


def _load_observed(out: str) -> dict[str, np.ndarray]:
    df = _read_df(os.path.join(out, OBSERVED_DAYS_CSV), dtype={"user_id": str})
    observed: dict[str, list[int]] = {}
    for row in df.itertuples(index=False):
        observed.setdefault(row.user_id, []).append(iso_to_epoch_day(row.date))
    return {u: np.asarray(sorted(days), dtype=np.int64) for u, days in observed.items()}


def _load_user_results(out: str) -> list[UserResult]:
    _require(out, STAYS_CSV, OBSERVED_DAYS_CSV)
    stays = _load_stays(out)
    observed = _load_observed(out)
    users = sorted(set(stays) | set(observed))
    return [UserResult(u, stays.get(u, []),
                       observed.get(u, np.empty(0, dtype=np.int64))) for u in users]


def _attach_detection(out: str, users: list[UserResult]) -> list[UserResult]:
    _require(out, CLUSTERS_CSV, PLACES_CSV)
    cl = _read_df(os.path.join(out, CLUSTERS_CSV), dtype={"user_id": str})
    labels: dict[str, dict[int, int]] = {}
    for row in cl.itertuples(index=False):
        labels.setdefault(row.user_id, {})[int(row.stay_idx)] = int(row.cluster_id)
    pf = _read_df(os.path.join(out, PLACES_CSV), dtype={"user_id": str})
    places: dict[str, list[SignificantPlace]] = {}
    for row in pf.itertuples(index=False):
        stats = CandidateStats(int(row.night_days), 0, int(row.day_days), 0)
        places.setdefault(row.user_id, []).append(SignificantPlace(
            row.user_id, int(row.place_id), str(row.category),
            float(row.lat), float(row.lon), 0, stats))
    for u in users:
        per_stay = labels.get(u.user_id, {})
        u.cluster_labels = np.asarray(
            [per_stay.get(i, -1) for i in range(len(u.stays))], dtype=np.int64)
        u.places = places.get(u.user_id, [])
    return users


def _write_graph(out: str, graph: SupportGraph):
    df = pd.DataFrame({
        "edge_index": range(graph.n),
        "hour": [e[0] for e in graph.edges],
        "src_label": [e[1] for e in graph.edges],
        "dst_label": [e[2] for e in graph.edges],
    })
    _write_df(os.path.join(out, SUPPORT_GRAPH_CSV), df)


def _load_graph(out: str) -> SupportGraph:
    _require(out, SUPPORT_GRAPH_CSV)
    df = _read_df(os.path.join(out, SUPPORT_GRAPH_CSV))
    edges = tuple((int(r.hour), str(r.src_label), str(r.dst_label))
                  for r in df.sort_values("edge_index").itertuples(index=False))
    nodes = {(h, src) for h, src, _ in edges} | {(h + 1, dst) for h, _, dst in edges}
    labels = tuple(sorted({lab for _, lab in nodes}, key=label_rank))
    return SupportGraph(edges=edges, edge_index={e: i for i, e in enumerate(edges)},
                        nodes=frozenset(nodes), labels=labels)


def _write_matrix(out: str, matrix: TotalMatrix, csv_name: str, json_name: str):
    coo = matrix.matrix.tocoo()
    order = np.lexsort((coo.row, coo.col))
    df = pd.DataFrame({"col": coo.col[order], "row": coo.row[order],
                       "value": coo.data[order]})
    _write_df(os.path.join(out, csv_name), df)
    _write_json(os.path.join(out, json_name), {
        "n": matrix.n, "u": matrix.u,
        "column_owners": matrix.column_owners,
        "excluded_users": matrix.excluded_users,
    })


def _load_matrix(out: str, csv_name: str, json_name: str) -> TotalMatrix:
    _require(out, csv_name, json_name)
    with open(os.path.join(out, json_name), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    df = _read_df(os.path.join(out, csv_name))
    matrix = sp.csr_matrix(
        (df["value"].to_numpy(), (df["row"].to_numpy(), df["col"].to_numpy())),
        shape=(sidecar["n"], sidecar["u"]))
    return TotalMatrix(matrix=matrix, column_owners=list(sidecar["column_owners"]),
                       excluded_users=list(sidecar["excluded_users"]))


def _write_factor(out: str, fact: Factorization, owners: list[str],
                  w_name: str, h_name: str):
    w_cols = {"edge_index": range(fact.W.shape[0])}
    for j in range(fact.rank):
        w_cols[f"basis_{j}"] = fact.W[:, j]
    _write_df(os.path.join(out, w_name), pd.DataFrame(w_cols))
    h_cols = {"owner": owners}
    for j in range(fact.rank):
        h_cols[f"coord_{j}"] = fact.H[j, :]
    _write_df(os.path.join(out, h_name), pd.DataFrame(h_cols))


def _load_coords(out: str, h_name: str) -> tuple[list[str], np.ndarray]:
    _require(out, h_name)
    df = _read_df(os.path.join(out, h_name), dtype={"owner": str})
    coord_cols = [c for c in df.columns if c.startswith("coord_")]
    return list(df["owner"]), df[coord_cols].to_numpy(dtype=np.float64).T


def _load_basis(out: str, w_name: str) -> np.ndarray:
    _require(out, w_name)
    df = _read_df(os.path.join(out, w_name))
    basis_cols = [c for c in df.columns if c.startswith("basis_")]
    return df.sort_values("edge_index")[basis_cols].to_numpy(dtype=np.float64)


# --- manifest ---------------------------------------------------------------

def _manifest_path(out: str) -> str:
    return os.path.join(out, MANIFEST_JSON)


def _load_manifest(out: str, cfg: RunConfig) -> dict:
    path = _manifest_path(out)
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {"tool": "lifegraph", "version": __version__, "seed": cfg.seed,
            "config": cfg.snapshot(), "stages": {}, "counts": {}}


def _update_manifest(out: str, cfg: RunConfig, stage: str, wall_s: float, counts: dict):
    manifest = _load_manifest(out, cfg)
    manifest["stages"][stage] = {"wall_s": wall_s, **counts}
    manifest["counts"].update(counts)
    _write_json(_manifest_path(out), manifest)


# --- stages -----------------------------------------------------------------

def _synth_stream(cfg: RunConfig, out: str, counts_out: dict, flush_every: int = 50):
    """Write synth artifacts incrementally while yielding each user."""
    spec = cfg.synthetic_spec()
    tz = cfg["corpus"]["tz_offset_s"]
    gps_path = os.path.join(out, GPS_CSV)
    labels_path = os.path.join(out, TRUTH_LABELS)
    tmp_gps = gps_path + ".tmp"
    tmp_labels = labels_path + ".tmp"

    pl.DataFrame({"user_id": pl.Series([], dtype=pl.String),
                  "timestamp": pl.Series([], dtype=pl.Int64),
                  "lat": pl.Series([], dtype=pl.Float64),
                  "lon": pl.Series([], dtype=pl.Float64)}).write_csv(tmp_gps)
    with open(tmp_labels, "w", encoding="utf-8") as fh:
        fh.write("user_id,date,hour,label\n")

    track_buffer: list[UserTrack] = []
    label_frames: list[pl.DataFrame] = []
    archetype_rows = []
    place_rows = []
    hours = np.arange(24)

    def flush():
        if track_buffer:
            write_gps_csv(tmp_gps, track_buffer, tz_offset_s=tz, append=True)
            track_buffer.clear()
        if label_frames:
            with open(tmp_labels, "ab") as fh:
                pl.concat(label_frames).write_csv(fh, include_header=False)
            label_frames.clear()

    n_fixes = 0
    n_users = 0
    from .synth import LABELS as TRUE_LABELS

    for track, truth in iter_synthetic(spec):
        n_users += 1
        n_fixes += len(track)
        archetype_rows.append((truth.user_id, truth.archetype))
        for place in truth.places:
            place_rows.append((truth.user_id, place.key, place.category,
                               place.lat, place.lon))
        dates = [epoch_day_to_date(d).isoformat() for d in truth.days]
        n_days = len(truth.days)
        label_frames.append(pl.DataFrame({
            "user_id": np.repeat(truth.user_id, n_days * 24),
            "date": np.repeat(np.asarray(dates, dtype=object), 24),
            "hour": np.tile(hours, n_days),
            "label": np.asarray(TRUE_LABELS, dtype=object)[truth.labels.ravel()],
        }))
        track_buffer.append(track)
        if len(track_buffer) >= flush_every:
            flush()
        yield track, truth

    flush()
    os.replace(tmp_gps, gps_path)
    os.replace(tmp_labels, labels_path)
    _write_df(os.path.join(out, TRUTH_ARCHETYPES),
              pd.DataFrame(archetype_rows, columns=["user_id", "archetype"]))
    _write_df(os.path.join(out, TRUTH_PLACES),
              pd.DataFrame(place_rows, columns=["user_id", "place_id", "category", "lat", "lon"]))
    counts_out.update(users_generated=n_users, fixes=n_fixes)


def stage_synth(cfg: RunConfig, out: str, state: PipelineState, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    counts: dict = {}
    for _ in _synth_stream(cfg, out, counts):
        pass
    _update_manifest(out, cfg, "synth", time.perf_counter() - t0, counts)
    return counts


def _write_extract_artifacts(out: str, users: list[UserResult]) -> dict:
    _write_df(os.path.join(out, STAYS_CSV), _stays_frame(users))
    rows = {"user_id": [], "date": []}
    for u in users:
        for d in u.observed_days:
            rows["user_id"].append(u.user_id)
            rows["date"].append(epoch_day_to_date(int(d)).isoformat())
    _write_df(os.path.join(out, OBSERVED_DAYS_CSV), pd.DataFrame(rows))
    return {"users_ingested": len(users), "stays": sum(len(u.stays) for u in users)}


def stage_extract_stays(cfg: RunConfig, out: str, state: PipelineState, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    if state.users is None:
        input_path = cfg.input_path or os.path.join(out, GPS_CSV)
        if not os.path.exists(input_path):
            raise MissingArtifactError(f"no input corpus at {input_path}")
        tracks, report = parse_gps_csv(input_path, cfg["corpus"]["tz_offset_s"])
        params = cfg.stay_params()
        state.users = map_ordered(lambda t: extract_user(t, params), tracks, threads)
        extra = {"rows_read": report.rows_read, "rows_skipped": report.rows_skipped}
    else:
        extra = {}
    counts = _write_extract_artifacts(out, state.users) | extra
    _update_manifest(out, cfg, "extract-stays", time.perf_counter() - t0, counts)
    return counts


def stage_detect_places(cfg: RunConfig, out: str, state: PipelineState, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    if state.users is None:
        state.users = _load_user_results(out)
    if any(u.places is None for u in state.users):
        db = cfg.dbscan_params()
        pp = cfg.place_params()
        state.users = map_ordered(lambda u: detect_user(u, db, pp), state.users, threads)

    cl_rows = {"user_id": [], "stay_idx": [], "cluster_id": []}
    pl_rows = {"user_id": [], "place_id": [], "category": [], "lat": [], "lon": [],
               "night_days": [], "day_days": []}
    n_clusters = 0
    users_with_home = 0
    for u in state.users:
        for idx, label in enumerate(u.cluster_labels):
            cl_rows["user_id"].append(u.user_id)
            cl_rows["stay_idx"].append(idx)
            cl_rows["cluster_id"].append(int(label))
        n_clusters += len(u.places)
        if not u.has_home:
            continue
        users_with_home += 1
        for p in u.places:
            pl_rows["user_id"].append(p.user_id)
            pl_rows["place_id"].append(p.place_id)
            pl_rows["category"].append(p.category)
            pl_rows["lat"].append(p.lat)
            pl_rows["lon"].append(p.lon)
            pl_rows["night_days"].append(p.stats.night_days)
            pl_rows["day_days"].append(p.stats.day_days)
    _write_df(os.path.join(out, CLUSTERS_CSV), pd.DataFrame(cl_rows))
    _write_df(os.path.join(out, PLACES_CSV), pd.DataFrame(pl_rows))
    counts = {"users_ingested": len(state.users), "users_with_home": users_with_home,
              "clusters": n_clusters}
    _update_manifest(out, cfg, "detect-places", time.perf_counter() - t0, counts)
    return counts


def stage_build_graph(cfg: RunConfig, out: str, state: PipelineState, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    if state.users is None:
        state.users = _attach_detection(out, _load_user_results(out))
    homed = [u for u in state.users if u.has_home]
    distinct = cfg["lifegraph"]["distinct_others"]
    policy = cfg["lifegraph"]["empty_day_policy"]

    paths_per_user = map_ordered(
        lambda u: user_day_vectors(u, None, distinct, policy), homed, threads)
    graph = build_support_graph(p for _, paths in paths_per_user for p in paths)

    user_days = []
    for u, (days, paths) in zip(homed, paths_per_user):
        vectors = [day_to_ta_vector(p, graph) for p in paths]
        user_days.append((u.user_id, [p.day for p in paths], vectors))

    matrix = assemble_total_matrix(user_days, graph.n, mode="all-days")
    state.graph = graph
    state.matrix = matrix
    _write_graph(out, graph)
    _write_matrix(out, matrix, TA_MATRIX_CSV, TA_MATRIX_JSON)
    counts = {"n": graph.n, "u": matrix.u,
              "day_paths": sum(len(v) for _, _, v in user_days)}
    if cfg.mode == MODE_SPLIT:
        weekend_extra = cfg.place_params().excluded_days
        matrix_split = assemble_total_matrix(user_days, graph.n, mode=MODE_SPLIT,
                                             weekend_extra=weekend_extra)
        state.matrix_split = matrix_split
        _write_matrix(out, matrix_split, TA_MATRIX_SPLIT_CSV, TA_MATRIX_SPLIT_JSON)
        counts["u_split"] = matrix_split.u
        counts["split_excluded_users"] = len(matrix_split.excluded_users)
    _update_manifest(out, cfg, "build-graph", time.perf_counter() - t0, counts)
    return counts


def stage_factorize(cfg: RunConfig, out: str, state: PipelineState, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    if state.matrix is None:
        state.matrix = _load_matrix(out, TA_MATRIX_CSV, TA_MATRIX_JSON)
    if state.graph is None:
        state.graph = _load_graph(out)
    nmf_cfg = cfg.nmf_config()
    fact = nmf(state.matrix.matrix, nmf_cfg)
    state.fact = fact
    _write_factor(out, fact, state.matrix.column_owners, BASIS_W_CSV, COORDS_H_CSV)

    strong_rows = {"basis": [], "hour": [], "src_label": [], "dst_label": [], "weight": []}
    threshold = cfg["nmf"]["strong_threshold"]
    for b in range(fact.rank):
        for edge in strong_pattern(fact.W, b, state.graph, threshold):
            strong_rows["basis"].append(edge.basis)
            strong_rows["hour"].append(edge.hour)
            strong_rows["src_label"].append(edge.src_label)
            strong_rows["dst_label"].append(edge.dst_label)
            strong_rows["weight"].append(edge.weight)
    _write_df(os.path.join(out, STRONG_PATTERNS_CSV), pd.DataFrame(strong_rows))

    sweep_rows = {"rank": [], "rel_error": []}
    max_rank = min(cfg["nmf"]["rank_sweep_max"], min(state.matrix.n, state.matrix.u))
    for rank in range(1, max_rank + 1):
        sweep = nmf(state.matrix.matrix, replace(nmf_cfg, rank=rank))
        sweep_rows["rank"].append(rank)
        sweep_rows["rel_error"].append(sweep.reconstruction_error(state.matrix.matrix))
    _write_df(os.path.join(out, RANK_ERROR_CSV), pd.DataFrame(sweep_rows))

    counts = {"nmf_rank": fact.rank, "nmf_iterations": fact.iterations,
              "nmf_rel_error": fact.reconstruction_error(state.matrix.matrix)}
    if cfg.mode == MODE_SPLIT:
        if state.matrix_split is None:
            state.matrix_split = _load_matrix(out, TA_MATRIX_SPLIT_CSV, TA_MATRIX_SPLIT_JSON)
        fact_split = nmf(state.matrix_split.matrix, nmf_cfg)
        state.fact_split = fact_split
        _write_factor(out, fact_split, state.matrix_split.column_owners,
                      BASIS_W_SPLIT_CSV, COORDS_H_SPLIT_CSV)
        counts["nmf_split_iterations"] = fact_split.iterations
    _update_manifest(out, cfg, "factorize", time.perf_counter() - t0, counts)
    return counts


def stage_cluster(cfg: RunConfig, out: str, state: PipelineState, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    if state.fact is not None and state.matrix is not None:
        owners = state.matrix.column_owners
        points = state.fact.H.T
    else:
        owners, H = _load_coords(out, COORDS_H_CSV)
        points = H.T
    km_cfg = cfg.kmeans_config()
    result = kmeans(points, km_cfg)
    state.cluster = result
    state.owners = owners

    _write_df(os.path.join(out, ASSIGNMENTS_CSV),
              pd.DataFrame({"owner": owners, "group": result.assignment}))
    cent_cols = {"group": range(km_cfg.k)}
    for j in range(points.shape[1]):
        cent_cols[f"coord_{j}"] = result.centroids[:, j]
    _write_df(os.path.join(out, CENTROIDS_CSV), pd.DataFrame(cent_cols))

    k_max = min(cfg["kmeans"]["elbow_k_max"], points.shape[0])
    curve = elbow_curve(points, range(1, k_max + 1), km_cfg)
    _write_df(os.path.join(out, ELBOW_CSV),
              pd.DataFrame(curve, columns=["k", "distortion"]))
    suggestion = suggest_k(curve)
    counts = {"kmeans_k": km_cfg.k, "groups": km_cfg.k,
              "suggested_k": suggestion, "distortion": result.distortion}
    _update_manifest(out, cfg, "cluster", time.perf_counter() - t0, counts)
    return counts


def _homes_and_works(users: list[UserResult]):
    homes: dict[str, tuple[float, float]] = {}
    works: dict[str, tuple[float, float]] = {}
    for u in users:
        if not u.has_home:
            continue
        for p in u.places:
            if p.category == "H":
                homes[u.user_id] = (p.lat, p.lon)
            elif p.category == "W":
                works[u.user_id] = (p.lat, p.lon)
    return homes, works


def stage_analyze(cfg: RunConfig, out: str, state: PipelineState, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    if state.users is None:
        state.users = _attach_detection(out, _load_user_results(out))
    if state.graph is None:
        state.graph = _load_graph(out)
    if state.matrix is None:
        state.matrix = _load_matrix(out, TA_MATRIX_CSV, TA_MATRIX_JSON)
    if state.cluster is None or state.owners is None:
        _require(out, ASSIGNMENTS_CSV, CENTROIDS_CSV)
        adf = _read_df(os.path.join(out, ASSIGNMENTS_CSV), dtype={"owner": str})
        owners = list(adf["owner"])
        assignment = adf["group"].to_numpy(dtype=np.int64)
        cdf = _read_df(os.path.join(out, CENTROIDS_CSV))
        centroids = cdf[[c for c in cdf.columns if c.startswith("coord_")]].to_numpy()
    else:
        owners = state.owners
        assignment = state.cluster.assignment
        centroids = state.cluster.centroids
    if owners != state.matrix.column_owners:
        raise InvariantError("assignments do not align with the T-A matrix columns")

    k = cfg["kmeans"]["k"]
    threshold = cfg["analysis"]["display_threshold"]
    profiles = group_profiles(assignment, state.matrix.matrix, state.graph, threshold)
    prof_rows = {"group": [], "hour": [], "label": [], "probability": [], "above_threshold": []}
    for prof in profiles:
        for hour in range(prof.occupancy.shape[0]):
            for li, label in enumerate(prof.labels):
                value = float(prof.occupancy[hour, li])
                prof_rows["group"].append(prof.group)
                prof_rows["hour"].append(hour)
                prof_rows["label"].append(label)
                prof_rows["probability"].append(value)
                prof_rows["above_threshold"].append(value > threshold)
    _write_df(os.path.join(out, PROFILES_CSV), pd.DataFrame(prof_rows))

    homes, works = _homes_and_works(state.users)
    owner_homes = [homes[o] for o in owners if o in homes]
    home_assign = np.asarray([g for o, g in zip(owners, assignment) if o in homes])
    grid = regional_stats(
        np.asarray([h[0] for h in owner_homes]), np.asarray([h[1] for h in owner_homes]),
        home_assign, k,
        cell_size_m=cfg["analysis"]["cell_size_m"],
        min_cell_population=cfg["analysis"]["min_cell_population"])
    grid_rows = {"row": [], "col": [], "total": [], "stddev": []}
    share_cols = {f"share_g{g}": [] for g in range(k)}
    for cell in grid.cells:
        grid_rows["row"].append(cell.row)
        grid_rows["col"].append(cell.col)
        grid_rows["total"].append(cell.total)
        grid_rows["stddev"].append(cell.stddev)
        for g in range(k):
            share_cols[f"share_g{g}"].append(cell.shares[g])
    grid_df = pd.DataFrame({**{c: grid_rows[c] for c in ("row", "col", "total")},
                            **share_cols, "stddev": grid_rows["stddev"]})
    _write_df(os.path.join(out, GRID_CSV), grid_df)

    corr_rows = {"group_a": [], "group_b": [], "r": [], "p": []}
    if len(grid.cells) >= 3:
        r, p = group_share_correlations(grid, k)
        for a in range(k):
            for b in range(k):
                corr_rows["group_a"].append(a)
                corr_rows["group_b"].append(b)
                corr_rows["r"].append(r[a, b])
                corr_rows["p"].append(p[a, b])
    _write_df(os.path.join(out, CORRELATIONS_CSV), pd.DataFrame(corr_rows))

    hw = home_work_grid(
        np.asarray([v[0] for v in homes.values()]), np.asarray([v[1] for v in homes.values()]),
        np.asarray([v[0] for v in works.values()]), np.asarray([v[1] for v in works.values()]),
        cell_size_m=cfg["analysis"]["cell_size_m"])
    _write_df(os.path.join(out, HOME_WORK_GRID_CSV), pd.DataFrame(
        hw, columns=["row", "col", "home_count", "work_count", "home_norm", "work_norm"]))

    counts = {"grid_cells": len(grid.cells), "grid_excluded_cells": grid.excluded_cells}
    if cfg.mode == MODE_SPLIT:
        if state.fact_split is not None and state.matrix_split is not None:
            split_owners = state.matrix_split.column_owners
            H_split = state.fact_split.H
            W_split = state.fact_split.W
        else:
            split_owners, H_split = _load_coords(out, COORDS_H_SPLIT_CSV)
            W_split = _load_basis(out, BASIS_W_SPLIT_CSV)
        W_all = state.fact.W if state.fact is not None else _load_basis(out, BASIS_W_CSV)
        # the split factorization's axis order and scale are arbitrary;
        # express its coordinates on the all-days basis before classifying
        perm, scale = align_basis(W_all, W_split)
        H_aligned = H_split[perm, :] * scale[:, None]
        weekday_coords: dict[str, np.ndarray] = {}
        weekend_coords: dict[str, np.ndarray] = {}
        for j, owner in enumerate(split_owners):
            user, _, day_class = owner.partition(":")
            if day_class == "weekday":
                weekday_coords[user] = H_aligned[:, j]
            elif day_class == "weekend":
                weekend_coords[user] = H_aligned[:, j]
        transitions = weekday_weekend_transitions(weekday_coords, weekend_coords, centroids)
        tr_rows = {"from_group": [], "to_group": [], "count": [], "row_percent": []}
        for a in range(k):
            for b in range(k):
                tr_rows["from_group"].append(a)
                tr_rows["to_group"].append(b)
                tr_rows["count"].append(int(transitions.counts[a, b]))
                tr_rows["row_percent"].append(float(transitions.row_percent[a, b]))
        _write_df(os.path.join(out, TRANSITIONS_CSV), pd.DataFrame(tr_rows))
        counts["transition_users"] = int(transitions.counts.sum())
    _update_manifest(out, cfg, "analyze", time.perf_counter() - t0, counts)
    return counts


def stage_compare_baseline(cfg: RunConfig, out: str, state: PipelineState, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    if state.matrix is None:
        state.matrix = _load_matrix(out, TA_MATRIX_CSV, TA_MATRIX_JSON)
    if state.graph is None:
        state.graph = _load_graph(out)
    report = compare_direct_vs_metagraph(state.matrix.matrix, cfg.nmf_config(),
                                         cfg.kmeans_config())
    _write_json(os.path.join(out, COMPARISON_JSON), report.to_dict())

    rows = {"run": [], "group": [], "hour": [], "label": [], "probability": []}
    for run, assignment in (("direct", report.direct_assignment),
                            ("metagraph", report.metagraph_assignment)):
        for prof in group_profiles(assignment, state.matrix.matrix, state.graph):
            for hour in range(prof.occupancy.shape[0]):
                for li, label in enumerate(prof.labels):
                    rows["run"].append(run)
                    rows["group"].append(prof.group)
                    rows["hour"].append(hour)
                    rows["label"].append(label)
                    rows["probability"].append(float(prof.occupancy[hour, li]))
    _write_df(os.path.join(out, COMPARISON_PROFILES_CSV), pd.DataFrame(rows))
    counts = {"comparison_ari": report.ari, "comparison_speedup": report.speedup}
    _update_manifest(out, cfg, "compare-baseline", time.perf_counter() - t0, counts)
    return counts


def run_pipeline(cfg: RunConfig, out: str, threads: int = 1) -> dict:
    """synth (when no input_path) through analyze, sharing one state.

    When the corpus is synthesized, generation and stay extraction are fused
    into one streaming pass; artifacts are identical to running the stages
    separately because the GPS CSV round-trips losslessly.
    """
    t0 = time.perf_counter()
    state = PipelineState()
    stay_params = cfg.stay_params()
    if cfg.input_path is None:
        t_synth = time.perf_counter()
        users = []
        synth_counts: dict = {}
        for track, _ in _synth_stream(cfg, out, synth_counts):
            users.append(extract_user(track, stay_params))
        state.users = users
        _update_manifest(out, cfg, "synth", time.perf_counter() - t_synth, synth_counts)
    counts = {}
    counts |= stage_extract_stays(cfg, out, state, threads)
    counts |= stage_detect_places(cfg, out, state, threads)
    counts |= stage_build_graph(cfg, out, state, threads)
    counts |= stage_factorize(cfg, out, state, threads)
    counts |= stage_cluster(cfg, out, state, threads)
    counts |= stage_analyze(cfg, out, state, threads)
    _update_manifest(out, cfg, "pipeline", time.perf_counter() - t0, {})
    return counts


STAGES = {
    "synth": stage_synth,
    "extract-stays": stage_extract_stays,
    "detect-places": stage_detect_places,
    "build-graph": stage_build_graph,
    "factorize": stage_factorize,
    "cluster": stage_cluster,
    "analyze": stage_analyze,
    "compare-baseline": stage_compare_baseline,
}


def run_stage(stage: str, cfg: RunConfig, output_dir: str | None = None,
              threads: int = 1) -> dict:
    """Run one stage (or 'pipeline') against an output directory."""
    out = output_dir or cfg.output_dir
    if out is None:
        raise ConfigError("no output_dir configured (set [run] output_dir or pass --output-dir)")
    os.makedirs(out, exist_ok=True)
    if stage == "pipeline":
        return run_pipeline(cfg, out, threads)
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    return STAGES[stage](cfg, out, PipelineState(), threads)
