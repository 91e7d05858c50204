import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparselimits.counts import emb_count, s_p, t_p
from sparselimits.errors import DomainError
from sparselimits.graph_core import Graph, complete_graph, read_edge_list
from sparselimits.kernel import StepKernel, complete, cycle, named_kernel
from sparselimits.sampler import (_pair_from_index, construct_blowup_counterexample, construct_planted_clique,
                                  construct_polarity_graph, construct_too_few_triangles, gg_h_triangles,
                                  sample_gnp, sample_inhomogeneous, solve_too_few_triangles_p1)


def test_gnp_extremes():
    assert sample_gnp(20, 0.0, seed=0).graph.m == 0
    assert sample_gnp(20, 1.0, seed=0).graph == complete_graph(20)
    with pytest.raises(DomainError):
        sample_gnp(5, 1.5)


def test_gnp_edge_count_concentration():
    n, p = 10 ** 4, 1e-3
    N = n * (n - 1) // 2
    for s in range(20):
        m = sample_gnp(n, p, seed=s).graph.m
        assert abs(m - p * N) <= 4 * math.sqrt(N * p * (1 - p))


@given(st.integers(2, 60))
def test_pair_index_bijection(n):
    k = np.arange(n * (n - 1) // 2)
    i, j = _pair_from_index(k, n)
    expect = [(a, b) for a in range(n) for b in range(a + 1, n)]
    assert list(zip(i.tolist(), j.tolist())) == expect


def test_seed_determinism():
    kap = named_kernel("chessboard1")
    a = sample_inhomogeneous(300, kap, 0.4, seed=7)
    b = sample_inhomogeneous(300, kap, 0.4, seed=7)
    assert a.graph == b.graph and np.array_equal(a.latent_types, b.latent_types)
    assert sample_gnp(300, 0.1, seed=3).graph == sample_gnp(300, 0.1, seed=3).graph
    assert sample_gnp(300, 0.1, seed=3).graph != sample_gnp(300, 0.1, seed=4).graph


def test_constant_kernel_matches_gnp_statistics():
    n, p = 400, 0.05
    N = n * (n - 1) / 2
    ms = [sample_inhomogeneous(n, named_kernel("constant"), p, seed=s).graph.m for s in range(20)]
    assert abs(np.mean(ms) - p * N) < 4 * math.sqrt(N * p * (1 - p) / 20)


def test_zero_off_diagonal_splits():
    kap = StepKernel([0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]])
    rec = sample_inhomogeneous(500, kap, 0.2, seed=1)
    t = rec.latent_types
    assert all(t[u] == t[v] for u, v in rec.graph.edges())


def test_block_pair_densities():
    n = 2000
    p = n ** -0.3
    W = np.array([[1.5, 0.5, 1.0], [0.5, 2.0, 0.2], [1.0, 0.2, 0.8]])
    kap = StepKernel([0.3, 0.3, 0.4], W)
    rec = sample_inhomogeneous(n, kap, p, seed=2)
    t = rec.latent_types
    sizes = np.bincount(t, minlength=3)
    E = np.zeros((3, 3))
    for u, v in rec.graph.edges():
        E[t[u], t[v]] += 1
        if t[u] != t[v]:
            E[t[v], t[u]] += 1
    for a in range(3):
        for b in range(a, 3):
            pairs = sizes[a] * (sizes[a] - 1) / 2 if a == b else sizes[a] * sizes[b]
            q = p * W[a, b]
            assert abs(E[a, b] - q * pairs) <= 3 * math.sqrt(pairs * q * (1 - q))


def test_clamp_flag():
    rec = sample_inhomogeneous(50, named_kernel("constant", c=5.0), 0.5, seed=0)
    assert rec.meta["clamped"] and rec.graph == complete_graph(50)


def test_too_few_triangles_small_and_formula():
    rec = construct_too_few_triangles(300, 0.5, seed=0)
    assert rec.meta["gg_h_triangles"] == 0
    p1, p2 = rec.meta["p1"], rec.meta["p2"]
    assert p2 == pytest.approx((1 - p1 ** 2) ** 298, rel=1e-9)
    assert p2 == pytest.approx(0.5 * p1, rel=1e-9)
    assert rec.p_effective == pytest.approx(p1 + p2)
    with pytest.raises(DomainError):
        solve_too_few_triangles_p1(2, 0.5)


def test_gg_h_counter():
    G = complete_graph(3)
    path = Graph.from_edges(3, [(0, 1), (1, 2)])
    assert gg_h_triangles(path, np.array([[0, 2]])) == 1
    assert gg_h_triangles(G, np.zeros((0, 2), dtype=np.int64)) == 0


def test_blowup_construction():
    rec = construct_blowup_counterexample(3000, 2, 1.0, seed=1)
    m, k = rec.meta["m"], rec.meta["k"]
    assert m == math.ceil(math.log(3000) ** 2) and k == 3000 // m
    t = rec.latent_types
    G = rec.graph
    assert all(t[u] != t[v] for u, v in G.edges())  # clone classes are independent sets
    base = sample_gnp(m, rec.p_effective, seed=1).graph
    assert G.m == k * k * base.m
    assert t_p(cycle(4), G, rec.p_effective) == pytest.approx(t_p(cycle(4), base, rec.p_effective), rel=1e-12)
    with pytest.raises(DomainError):
        construct_blowup_counterexample(100, 8, 5.0)


def test_planted_clique():
    rec = construct_planted_clique(5000, 1.5, seed=0)
    m = rec.meta["m"]
    assert m == math.ceil(5000 / math.log(5000) ** 1.5)
    assert rec.graph.induced(rec.meta["clique"]).m == m * (m - 1) // 2
    p = rec.p_effective
    assert s_p(complete(4), rec.graph, p) > 1.5
    assert 0.8 <= s_p(cycle(4), rec.graph, p) <= 1.2
    with pytest.raises(DomainError):
        construct_planted_clique(10, 1.5, m=10)


def test_polarity():
    for q in (3, 5, 7):
        rec = construct_polarity_graph(q)
        assert rec.graph.n == q * q + q + 1
        assert emb_count(cycle(4), rec.graph) == 0
    n = 17 ** 2 + 17 + 1
    assert 0.9 <= construct_polarity_graph(17).graph.m / (n ** 1.5 / 2) <= 1.1
    with pytest.raises(DomainError):
        construct_polarity_graph(4)


def test_record_save(tmp_path):
    kap = named_kernel("chessboard1")
    rec = sample_inhomogeneous(100, kap, 0.3, seed=4)
    el, js = rec.save(tmp_path / "g")
    G, labels = read_edge_list(el)
    assert G.m == rec.graph.m
    side = json.loads(js.read_text())
    assert side["latent_types"] == rec.latent_types.tolist()
    assert side["construction"]["seed"] == 4
