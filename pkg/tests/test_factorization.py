import numpy as np
import pytest
import scipy.sparse as sp

from lifegraph import (
    ConfigError,
    DayPath,
    NmfConfig,
    build_support_graph,
    embed,
    nmf,
    strong_pattern,
)


def test_rank_one_product_recovered():
    r = np.random.default_rng(0)
    w = r.random(50)
    h = r.random(80)
    T = np.outer(w, h)
    fact = nmf(T, NmfConfig(rank=1, seed=1))
    rel = np.linalg.norm(T - fact.W @ fact.H) / np.linalg.norm(T)
    assert rel <= 1e-3


def test_zero_matrix_factorizes_to_zero():
    fact = nmf(np.zeros((10, 6)), NmfConfig(rank=2, seed=0))
    assert not fact.W.any() and not fact.H.any()
    assert np.array_equal(fact.objective_trace, [0.0])


def test_objective_nonincreasing_on_random_matrices():
    r = np.random.default_rng(4)
    for trial in range(5):
        T = r.random((100, 200))
        fact = nmf(T, NmfConfig(rank=3, seed=trial, rel_tol=1e-9, max_iters=120))
        trace = fact.objective_trace
        assert np.all(trace[1:] <= trace[:-1] * (1 + 1e-10))


def test_nonnegativity_and_determinism():
    r = np.random.default_rng(9)
    T = sp.csr_matrix(r.random((60, 40)) * (r.random((60, 40)) > 0.5))
    cfg = NmfConfig(rank=4, seed=123)
    a = nmf(T, cfg)
    b = nmf(T, cfg)
    assert (a.W >= 0).all() and (a.H >= 0).all()
    assert np.array_equal(a.W, b.W) and np.array_equal(a.H, b.H)
    assert np.array_equal(a.objective_trace, b.objective_trace)


def test_sparse_and_dense_agree():
    r = np.random.default_rng(2)
    dense = r.random((30, 20)) * (r.random((30, 20)) > 0.6)
    cfg = NmfConfig(rank=2, seed=5, max_iters=60, rel_tol=1e-12)
    a = nmf(dense, cfg)
    b = nmf(sp.csr_matrix(dense), cfg)
    assert np.allclose(a.W, b.W, atol=1e-10)
    assert np.allclose(a.objective_trace, b.objective_trace, rtol=1e-10)


def test_rank_exceeding_dimensions_is_fatal():
    with pytest.raises(ConfigError):
        nmf(np.ones((3, 5)), NmfConfig(rank=4, seed=0))


def test_exact_rank3_recovery_across_seeds():
    r = np.random.default_rng(77)
    W_true = r.random((80, 3))
    H_true = r.random((3, 120))
    T = W_true @ H_true
    good = 0
    for seed in range(10):
        fact = nmf(T, NmfConfig(rank=3, seed=seed, rel_tol=1e-10, max_iters=500))
        rel = np.linalg.norm(T - fact.W @ fact.H) / np.linalg.norm(T)
        good += rel <= 1e-3
    assert good >= 9


def test_embed_origin_training_columns_and_scaling():
    r = np.random.default_rng(6)
    T = r.random((40, 25)) * (r.random((40, 25)) > 0.3)
    cfg = NmfConfig(rank=3, seed=11, rel_tol=1e-12, max_iters=2000)
    fact = nmf(T, cfg)

    assert np.array_equal(embed(np.zeros(40), fact.W, cfg), np.zeros(3))

    for j in (0, 7, 19):
        coord = embed(T[:, j], fact.W, cfg)
        ref = fact.H[:, j]
        assert np.linalg.norm(coord - ref) <= 1e-3 * max(np.linalg.norm(ref), 1e-12)

    single = embed(T[:, 3], fact.W, cfg)
    doubled = embed(2.0 * T[:, 3], fact.W, cfg)
    assert np.allclose(doubled, 2.0 * single, rtol=1e-4, atol=1e-8)


def test_embed_dimension_mismatch_is_fatal():
    fact = nmf(np.ones((4, 4)), NmfConfig(rank=1, seed=0))
    with pytest.raises(ConfigError):
        embed(np.ones(5), fact.W, NmfConfig(rank=1, seed=0))


def _chain(labels):
    return DayPath("u", 700_000, tuple(labels))


def test_strong_pattern_filtering_and_order():
    graph = build_support_graph([_chain(["H"] * 24), _chain(["W"] * 24)])
    W = np.zeros((graph.n, 2))
    W[:, 1] = np.linspace(2.0, 0.1, graph.n)

    assert strong_pattern(W, 0, graph) == []

    everything = strong_pattern(W, 1, graph, threshold=0.0)
    assert len(everything) == graph.n
    hours = [e.hour for e in everything]
    assert hours == sorted(hours)
    for h in set(hours):
        weights = [e.weight for e in everything if e.hour == h]
        assert weights == sorted(weights, reverse=True)

    strong = strong_pattern(W, 1, graph, threshold=1.0)
    assert all(e.weight > 1.0 for e in strong)
    assert len(strong) < graph.n


def test_basis_columns_align_with_archetype_self_loops(corpus_graph):
    """Factorizing the unit corpus yields bases dominated by one category."""
    graph, _, matrix = corpus_graph
    fact = nmf(matrix.matrix, NmfConfig(rank=3, seed=2))
    self_loop_cats = []
    for b in range(3):
        col = fact.W[:, b]
        threshold = np.percentile(col[col > 0], 80)
        strong = strong_pattern(fact.W, b, graph, threshold=float(threshold))
        cats = [e.src_label for e in strong if e.src_label == e.dst_label]
        assert len(cats) / max(len(strong), 1) >= 0.5
        top = max(set(cats), key=cats.count)
        self_loop_cats.append(top)
        assert cats.count(top) / len(cats) >= 0.5
    assert "H" in self_loop_cats  # the home axis always emerges


def test_robustness_all_days_vs_split_basis(corpus_graph):
    graph, user_days, matrix = corpus_graph
    from lifegraph import assemble_total_matrix

    split = assemble_total_matrix(user_days, graph.n, mode="split")
    cfg = NmfConfig(rank=3, seed=3)
    a = nmf(matrix.matrix, cfg)
    b = nmf(split.matrix, cfg)

    def unit(M):
        norms = np.linalg.norm(M, axis=0)
        return M / np.where(norms > 0, norms, 1.0)

    cos = unit(a.W).T @ unit(b.W)  # 3x3 cosine table
    from itertools import permutations
    best = max(permutations(range(3)), key=lambda p: sum(cos[i, p[i]] for i in range(3)))
    for i in range(3):
        assert cos[i, best[i]] >= 0.9
