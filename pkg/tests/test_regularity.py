import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import graphs, random_graph
from sparselimits.errors import DomainError
from sparselimits.graph_core import Graph, complete_graph, disjoint_union, edges_between, empty_graph, graph_to_kernel
from sparselimits.kernel import StepKernel
from sparselimits.regularity import (Partition, _place_dust, _split_with_atoms, is_regular_pair, match_to_kernel,
                                     partition_index, quotient_kernel, strong_regular_partition,
                                     weak_regular_partition)
from sparselimits.sampler import sample_gnp


def expand(K: StepKernel, labels):
    lab = np.asarray(labels)
    return np.asarray(K.values)[np.ix_(lab, lab)]


def test_partition_validation():
    with pytest.raises(DomainError):
        Partition([0, 2, 2])
    with pytest.raises(DomainError):
        Partition([-1, 0])
    P = Partition.consecutive(10, 3)
    assert P.balanced and list(P.sizes) == [4, 3, 3]
    assert not Partition([0, 0, 0, 1]).balanced
    R = Partition.random_balanced(11, 4, seed=0)
    assert R.balanced and R.k == 4
    assert sorted(np.concatenate(R.parts()).tolist()) == list(range(11))


def test_quotient_singletons_and_one_part():
    G = sample_gnp(40, 0.3, seed=2).graph
    Q = quotient_kernel(G, Partition(np.arange(40)), 0.3)
    np.testing.assert_allclose(Q.values, graph_to_kernel(G, 0.3).values)
    one = quotient_kernel(G, Partition.trivial(40), 0.3)
    assert one.values[0, 0] == pytest.approx(2 * G.m / (0.3 * 40 ** 2), rel=1e-14)
    assert partition_index(G, Partition.trivial(40), 0.3) == pytest.approx((2 * G.m / (0.3 * 1600)) ** 2)


def test_quotient_k4_split():
    p = 0.5
    Q = quotient_kernel(complete_graph(4), Partition([0, 0, 1, 1]), p)
    # within a part: one edge, counted in both orders; between: all four pairs
    np.testing.assert_allclose(Q.values, [[2 / (p * 4), 1 / p], [1 / p, 2 / (p * 4)]])
    assert partition_index(complete_graph(4), Partition([0, 0, 1, 1]), p) > \
        partition_index(complete_graph(4), Partition.trivial(4), p)


def test_quotient_errors():
    with pytest.raises(DomainError):
        quotient_kernel(complete_graph(4), Partition([0, 1, 1]), 1.0)
    with pytest.raises(DomainError):
        quotient_kernel(complete_graph(4), Partition([0, 1, 1, 0]), 0.0)


@settings(max_examples=100, deadline=None)
@given(graphs(min_n=2, max_n=12), st.integers(0, 10 ** 6))
def test_refinement_monotone_and_orthogonal(G, seed):
    rng = np.random.default_rng(seed)
    n = G.n
    coarse = rng.integers(0, max(1, n // 3), n)
    coarse = np.unique(coarse, return_inverse=True)[1]
    fine = np.unique(coarse * 4 + rng.integers(0, 4, n), return_inverse=True)[1]
    Pc, Pf = Partition(coarse), Partition(fine)
    p = 0.4
    assert partition_index(G, Pf, p) >= partition_index(G, Pc, p) - 1e-12
    kg = G.dense(np.float64) / p
    inner = ((kg - expand(quotient_kernel(G, Pf, p), fine)) * expand(quotient_kernel(G, Pc, p), coarse)).sum()
    assert abs(inner) / n ** 2 < 1e-10


def test_weak_empty_graph():
    rep = weak_regular_partition(empty_graph(30), 0.2, 0.2, seed=0)
    assert rep.rounds == 0 and rep.cut_certificate == 0 and rep.partition.k == 1


def test_weak_gnp():
    n = 2000
    p = n ** -0.3
    G = sample_gnp(n, p, seed=5).graph
    rep = weak_regular_partition(G, p, 0.15, C=2, seed=0)
    assert rep.rounds <= rep.info["round_bound"]
    assert rep.cut_certificate < 0.15
    assert rep.partition.balanced
    steps = np.diff(rep.energy_trace)
    assert np.all(steps >= (0.15 / 4) ** 2 - 1e-12)


def test_weak_two_blobs():
    A = sample_gnp(300, 0.2, seed=1).graph
    B = sample_gnp(300, 0.2, seed=2).graph
    G = disjoint_union(A, B)
    p = 0.1
    rep = weak_regular_partition(G, p, 0.3, C=4, seed=0, equalize=False)
    assert rep.rounds >= 1
    assert rep.cut_certificate < 0.3
    # every part sits inside one blob, up to the floor adjustment
    side = np.arange(600) >= 300
    purity = [max(side[pt].mean(), 1 - side[pt].mean()) for pt in rep.partition.parts()]
    assert min(purity) > 0.95
    Q = quotient_kernel(G, Partition(side.astype(int)), p)
    assert Q.values[0, 1] == 0


def test_weak_errors():
    with pytest.raises(DomainError):
        weak_regular_partition(complete_graph(5), 1.0, 0.0)
    with pytest.raises(DomainError):
        weak_regular_partition(complete_graph(5), 1.0, 0.1, C=-1)


def test_pair_random_bipartite_passes():
    # sizes chosen so the union bound over eps-subsets keeps every gap well below eps
    rng = np.random.default_rng(3)
    N, q = 600, 0.8
    U, V = np.nonzero(rng.random((N, N)) < q)
    G = Graph.from_edges(2 * N, np.column_stack([U, V + N]))
    chk = is_regular_pair(G, range(N), range(N, 2 * N), 0.2, q, witness_budget=8, seed=0)
    assert chk.passed
    assert chk.deviation <= 0.2


def test_pair_planted_rectangle_fails():
    rng = np.random.default_rng(4)
    n, p, eps = 400, 0.1, 0.2
    edges = []
    for u in range(200):
        for v in range(200):
            q = 3 * p if (u < 40 and v < 40) else p
            if rng.random() < q:
                edges.append((u, 200 + v))
    G = Graph.from_edges(n, edges)
    chk = is_regular_pair(G, range(200), range(200, 400), eps, p, seed=0)
    assert not chk.passed
    WA, WB = chk.witness_A, chk.witness_B
    assert WA.size >= eps * 200 and WB.size >= eps * 200
    d = edges_between(G, range(200), range(200, 400)) / (p * 200 * 200)
    dw = edges_between(G, WA, WB) / (p * WA.size * WB.size)
    assert abs(dw - d) > eps
    assert chk.witness_density == pytest.approx(dw)


def test_pair_complete_same_set_passes():
    G = complete_graph(20)
    p = 19 / 20  # d_p(A, A) = 1
    chk = is_regular_pair(G, range(20), range(20), 0.5, p, seed=0)
    assert chk.density == pytest.approx(1.0)
    assert chk.passed


def test_pair_errors():
    G = complete_graph(6)
    with pytest.raises(DomainError):
        is_regular_pair(G, [0, 1], [2, 3], 0.3, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_pair_witnesses_always_violate(seed):
    rng = np.random.default_rng(seed)
    G = random_graph(rng, 60, float(rng.uniform(0.05, 0.6)))
    eps = float(rng.uniform(0.1, 0.4))
    A, B = np.arange(30), np.arange(30, 60)
    chk = is_regular_pair(G, A, B, eps, 0.5, seed=seed)
    d = edges_between(G, A, B) / (0.5 * 900)
    if not chk.passed:
        for WA, WB, _ in [(chk.witness_A, chk.witness_B, chk.deviation)] + chk.alternatives:
            assert WA.size >= eps * 30 and WB.size >= eps * 30
            assert abs(edges_between(G, WA, WB) / (0.5 * WA.size * WB.size) - d) > eps


def test_split_with_atoms():
    part = np.arange(100, 160)
    key = np.array([0] * 30 + [1] * 27 + [2] * 3)
    pieces, dust = _split_with_atoms(part, key, 4)
    assert sorted(dust.tolist()) == list(range(157, 160))
    assert sorted(np.concatenate(pieces + [dust]).tolist()) == part.tolist()
    # atoms 0 and 1 are exact unions of pieces
    for pc in pieces:
        assert len(set(key[pc - 100].tolist())) == 1
    assert len(pieces) == 4
    whole, none = _split_with_atoms(part, np.arange(60), 4)
    assert len(whole) == 1 and none.size == 60


def test_place_dust_follows_profile():
    # two planted communities inside one part; a dust vertex joins the piece it resembles
    rng = np.random.default_rng(2)
    n = 200
    side = np.arange(n) % 2
    P = np.where(side[:, None] == side[None, :], 0.8, 0.1)
    U, V = np.nonzero(np.triu(rng.random((n, n)) < P, 1))
    G = Graph.from_edges(n, np.column_stack([U, V]))
    lab = side.copy()
    dust = np.array([0, 1, 2, 3])
    lab[dust] = -1
    sizes = np.bincount(lab[lab >= 0]).astype(float)
    out = _place_dust(G.sparse(np.float64), lab, np.array([0, 0]), dust, np.zeros(4, dtype=int), sizes)
    assert np.array_equal(out, side)


def test_strong_gnp_is_already_regular():
    # at p = n^-0.3 a half-split pair already has verified witnesses; p = 1/2 is dense enough
    n, p = 1500, 0.5
    G = sample_gnp(n, p, seed=6).graph
    rep = strong_regular_partition(G, p, 0.3, seed=0, k0=2)
    assert rep.rounds <= 1
    assert rep.info["halt"] == "regular"
    assert len(rep.irregular_pairs) <= 0.3 * rep.partition.k * (rep.partition.k - 1) / 2


def test_strong_complete_graph():
    rep = strong_regular_partition(complete_graph(60), 1.0, 0.3, seed=0)
    assert rep.rounds == 0
    assert rep.irregular_pairs == []


def test_strong_energy_increments_and_json():
    kap = StepKernel([0.5, 0.5], [[1.8, 0.2], [0.2, 1.8]])
    from sparselimits.sampler import sample_inhomogeneous
    rec = sample_inhomogeneous(800, kap, 0.5, seed=1)
    rep = strong_regular_partition(rec.graph, 0.5, 0.3, seed=1, max_rounds=1, k0=2)
    assert np.all(np.diff(rep.energy_trace) >= 0.3 ** 5 / 20 - 1e-12)
    assert rep.rounds <= rep.info["round_bound"]
    blob = json.loads(rep.to_json())
    assert blob["kind"] == "strong"
    assert len(blob["partition"]["labels"]) == 800
    assert rep.rounds == 1 and rep.energy_trace[-1] > rep.energy_trace[0]


def test_match_to_kernel_exact_recovery():
    W = np.array([[1.0, 0.2], [0.2, 0.6]])
    kap = StepKernel([0.5, 0.5], W)
    tau = np.array([1, 0, 0, 1, 1])
    Q = StepKernel(np.ones(5) / 5, W[np.ix_(tau, tau)])
    dev, got = match_to_kernel(Q, kap)
    assert dev == 0 and list(got) == list(tau)


def test_match_heuristic_agrees_with_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k, q = int(rng.integers(2, 4)), int(rng.integers(3, 9))
        W = rng.random((k, k))
        W = W + W.T
        tau = rng.integers(0, k, q)
        noise = float(rng.choice([0.01, 0.1, 0.5]))
        V = W[np.ix_(tau, tau)] + rng.normal(0, noise, (q, q))
        Q = StepKernel(np.ones(q) / q, np.abs(V + V.T) / 2)
        kap = StepKernel(np.ones(k) / k, W)
        ex, _ = match_to_kernel(Q, kap)
        he, t = match_to_kernel(Q, kap, exhaustive_limit=0)
        assert he >= ex - 1e-12
        if noise <= 0.1:
            assert he == pytest.approx(ex, abs=1e-12)
        assert np.abs(Q.values - W[np.ix_(t, t)]).max() == pytest.approx(he)
