"""Non-negative factorization of the total T-A matrix.

T (n x u) ~ W (n x k) @ H (k x u), minimizing the squared Frobenius error
by alternating exact nonnegative coordinate updates over basis columns
(HALS): each update solves its one-column subproblem in closed form and
clips at zero, so both factors stay nonnegative and the objective never
increases. Columns of W are the basis patterns spanning the embedding
space; columns of H place each owner in that space, with the all-zero
coordinate corresponding to the empty graph. No normalization is applied
to either factor, so basis weights keep the raw data scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .graph import SupportGraph


@dataclass(frozen=True)
class NmfConfig:
    rank: int = 3
    max_iters: int = 500
    rel_tol: float = 1e-5
    epsilon: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("rank must be at least 1")
        if self.rel_tol <= 0 or self.epsilon <= 0:
            raise ConfigError("tolerances must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")


@dataclass
class Factorization:
    W: np.ndarray                 # n x k, nonnegative
    H: np.ndarray                 # k x u, nonnegative
    objective_trace: np.ndarray   # squared Frobenius error per iteration
    iterations: int
    wall_s: float = 0.0

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    def reconstruction_error(self, T) -> float:
        """Relative Frobenius error of W @ H against T."""
        norm = sp.linalg.norm(T) if sp.issparse(T) else np.linalg.norm(T)
        if norm == 0:
            return 0.0
        return float(np.sqrt(max(self.objective_trace[-1], 0.0)) / norm)


def _wt_t(W: np.ndarray, T) -> np.ndarray:
    if sp.issparse(T):
        return np.asarray((T.T @ W).T)
    return W.T @ T


def _t_ht(T, H: np.ndarray) -> np.ndarray:
    if sp.issparse(T):
        return np.asarray(T @ H.T)
    return T @ H.T


# Exact per-column sweeps repeated per iteration; the heavy products against
# T are computed once per iteration and reused across sweeps.
_INNER_SWEEPS = 2


def _update_h(H: np.ndarray, WtT: np.ndarray, WtW: np.ndarray, epsilon: float):
    for _ in range(_INNER_SWEEPS):
        for j in range(H.shape[0]):
            delta = (WtT[j] - WtW[j] @ H) / max(WtW[j, j], epsilon)
            H[j] = np.maximum(H[j] + delta, 0.0)


def _update_w(W: np.ndarray, THt: np.ndarray, HHt: np.ndarray, epsilon: float):
    for _ in range(_INNER_SWEEPS):
        for j in range(W.shape[1]):
            delta = (THt[:, j] - W @ HHt[:, j]) / max(HHt[j, j], epsilon)
            W[:, j] = np.maximum(W[:, j] + delta, 0.0)


def nmf(T, cfg: NmfConfig) -> Factorization:
    """Factorize a nonnegative matrix with seeded alternating updates.

    Both factors start as uniform draws in (0, 1]. Each iteration updates H
    column-block by column-block against the frozen W, then W against the
    frozen H; every block update is the exact nonnegative minimizer of its
    subproblem, so the objective is nonincreasing by construction. The
    squared Frobenius objective is recorded per iteration and the loop stops
    once its relative decrease falls under rel_tol. Sparse input keeps all
    products against T sparse-aware.
    """
    n, u = T.shape
    if cfg.rank > min(n, u):
        raise ConfigError(f"rank {cfg.rank} exceeds min(n, u) = {min(n, u)}")
    t_start = time.perf_counter()
    norm_sq = float((T.multiply(T)).sum()) if sp.issparse(T) else float((T * T).sum())
    if norm_sq == 0.0:
        return Factorization(
            W=np.zeros((n, cfg.rank)), H=np.zeros((cfg.rank, u)),
            objective_trace=np.zeros(1), iterations=0,
            wall_s=time.perf_counter() - t_start)

    rng = np.random.default_rng(cfg.seed)
    W = 1.0 - rng.random((n, cfg.rank))
    H = 1.0 - rng.random((cfg.rank, u))

    trace: list[float] = []
    iterations = 0
    for _ in range(cfg.max_iters):
        WtT = _wt_t(W, T)
        if iterations:  # objective of the state reached by the last iteration
            objective = norm_sq - 2.0 * float(np.sum(WtT * H)) \
                + float(np.sum((W.T @ W) * (H @ H.T)))
            previous = trace[-1] if trace else norm_sq
            trace.append(objective)
            # stop on stalled relative decrease, or on an essentially exact fit
            if objective <= norm_sq * 1e-15:
                break
            if previous > 0 and (previous - objective) / previous < cfg.rel_tol:
                break
        _update_h(H, WtT, W.T @ W, cfg.epsilon)
        _update_w(W, _t_ht(T, H), H @ H.T, cfg.epsilon)
        iterations += 1
    else:
        WtT = _wt_t(W, T)
        trace.append(norm_sq - 2.0 * float(np.sum(WtT * H))
                     + float(np.sum((W.T @ W) * (H @ H.T))))

    return Factorization(W=W, H=H, objective_trace=np.asarray(trace),
                         iterations=iterations, wall_s=time.perf_counter() - t_start)


def embed(column, W: np.ndarray, cfg: NmfConfig) -> np.ndarray:
    """Nonnegative coordinates of new columns against a frozen basis.

    Solves the per-column nonnegative least squares with the same H update
    and stopping rule as nmf, W frozen. column may be a single length-n
    vector or an (n, m) block; training columns map back onto their own H
    coordinates, a zero column maps to the origin, and scaling a column
    scales its coordinate.
    """
    vec = np.asarray(column.todense()) if sp.issparse(column) else np.asarray(column, dtype=np.float64)
    single = vec.ndim == 1
    V = vec.reshape(-1, 1) if single else vec
    if V.shape[0] != W.shape[0]:
        raise ConfigError(f"column length {V.shape[0]} does not match basis rows {W.shape[0]}")
    norm_sq = float((V * V).sum())
    if norm_sq == 0.0:
        out = np.zeros((W.shape[1], V.shape[1]))
        return out.ravel() if single else out

    rng = np.random.default_rng(cfg.seed)
    H = 1.0 - rng.random((W.shape[1], V.shape[1]))
    WtV = W.T @ V
    WtW = W.T @ W
    previous = None
    for _ in range(cfg.max_iters):
        _update_h(H, WtV, WtW, cfg.epsilon)
        objective = norm_sq - 2.0 * float(np.sum(WtV * H)) + float(np.sum(WtW * (H @ H.T)))
        if objective <= norm_sq * 1e-15:
            break
        if previous is not None and previous > 0 and (previous - objective) / previous < cfg.rel_tol:
            break
        previous = objective
    return H.ravel() if single else H


def align_basis(W_ref: np.ndarray, W_other: np.ndarray):
    """Match another factorization's axes onto a reference basis.

    Basis column order and scale are arbitrary across runs, so coordinates
    from two factorizations are only comparable after matching columns by
    cosine similarity and rescaling. Returns (perm, scale) such that
    reference axis i corresponds to W_other[:, perm[i]], and a coordinate
    row H_other[perm[i]] * scale[i] is expressed on the reference scale.
    """
    from scipy.optimize import linear_sum_assignment

    def unit(M):
        norms = np.linalg.norm(M, axis=0)
        return M / np.where(norms > 0, norms, 1.0)

    cosine = unit(W_ref).T @ unit(W_other)
    _, perm = linear_sum_assignment(-cosine)
    ref_norms = np.linalg.norm(W_ref, axis=0)
    other_norms = np.linalg.norm(W_other, axis=0)
    scale = other_norms[perm] / np.where(ref_norms > 0, ref_norms, 1.0)
    return perm, scale


def matched_cosines(W_ref: np.ndarray, W_other: np.ndarray) -> np.ndarray:
    """Cosine of each reference axis against its aligned counterpart."""
    perm, _ = align_basis(W_ref, W_other)
    norms_r = np.linalg.norm(W_ref, axis=0)
    norms_o = np.linalg.norm(W_other, axis=0)
    dots = np.einsum("ij,ij->j", W_ref, W_other[:, perm])
    return dots / np.maximum(norms_r * norms_o[perm], 1e-300)


@dataclass(frozen=True)
class StrongEdge:
    basis: int
    hour: int
    src_label: str
    dst_label: str
    weight: float


def strong_pattern(W: np.ndarray, basis: int, graph: SupportGraph,
                   threshold: float = 1.0) -> list[StrongEdge]:
    """Edges whose basis weight exceeds the threshold, by layer then weight.

    This is the inspection view of one basis column: the dominant hourly
    transitions it encodes, ready for plotting or export.
    """
    column = W[:, basis]
    picked = [
        StrongEdge(basis, hour, src, dst, float(column[idx]))
        for idx, (hour, src, dst) in enumerate(graph.edges)
        if column[idx] > threshold
    ]
    picked.sort(key=lambda e: (e.hour, -e.weight, e.src_label, e.dst_label))
    return picked
