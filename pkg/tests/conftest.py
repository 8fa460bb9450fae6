"""Shared fixtures: a mid-size synthetic corpus processed through the
front half of the pipeline, reused by the module test suites."""

from __future__ import annotations

import numpy as np
import pytest

import lifegraph as lg
from lifegraph.pipeline import PipelineState, detect_user, extract_user, user_day_vectors


UNIT_SPEC = lg.SyntheticSpec(
    n_users=42,
    archetype_mix=lg.equal_mix(),
    n_days=56,
    gps_noise_sigma_m=5.0,
    dropout_prob=0.05,
    seed=977,
)


@pytest.fixture(scope="session")
def unit_corpus():
    tracks, truth = lg.generate_synthetic(UNIT_SPEC)
    return tracks, truth


@pytest.fixture(scope="session")
def processed_users(unit_corpus):
    tracks, _ = unit_corpus
    stay_params = lg.StayParams()
    db = lg.DbscanParams()
    pp = lg.PlaceParams()
    return [detect_user(extract_user(t, stay_params), db, pp) for t in tracks]


@pytest.fixture(scope="session")
def corpus_graph(processed_users):
    """Support graph, per-user day vectors, and the all-days matrix."""
    homed = [u for u in processed_users if u.has_home]
    per_user = [user_day_vectors(u, None, 0, "skip") for u in homed]
    graph = lg.build_support_graph(p for _, paths in per_user for p in paths)
    user_days = []
    for u, (days, paths) in zip(homed, per_user):
        vectors = [lg.day_to_ta_vector(p, graph) for p in paths]
        user_days.append((u.user_id, [p.day for p in paths], vectors))
    matrix = lg.assemble_total_matrix(user_days, graph.n, mode="all-days")
    return graph, user_days, matrix


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def brute_force_dbscan(lat, lon, eps_m, min_pts):
    """Independent oracle: explicit eps-neighbor graph, density connectivity.

    Core points come from the full distance matrix; clusters are connected
    components of the core-core subgraph, numbered by the visit order of
    their first core point. A border point takes the lowest-numbered
    adjacent component, which mirrors full cluster expansion in discovery
    order.
    """
    from lifegraph import NOISE, haversine_m

    n = len(lat)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    d = haversine_m(np.asarray(lat)[:, None], np.asarray(lon)[:, None],
                    np.asarray(lat)[None, :], np.asarray(lon)[None, :])
    adj = d <= eps_m
    core = adj.sum(axis=1) >= min_pts

    component = np.full(n, -1)
    n_comp = 0
    for i in range(n):
        if not core[i] or component[i] >= 0:
            continue
        stack = [i]
        component[i] = n_comp
        while stack:
            q = stack.pop()
            for nb in np.nonzero(adj[q] & core)[0]:
                if component[nb] < 0:
                    component[nb] = n_comp
                    stack.append(nb)
        n_comp += 1

    labels = np.full(n, NOISE, dtype=np.int64)
    for i in range(n):
        if core[i]:
            labels[i] = component[i]
        else:
            adjacent = component[adj[i] & core]
            if adjacent.size:
                labels[i] = adjacent.min()
    return labels
