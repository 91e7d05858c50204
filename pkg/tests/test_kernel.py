import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparselimits.errors import CapacityError, ConfigError, DomainError
from sparselimits.kernel import (Motif, StepKernel, average_over_partition, complete, complete_bipartite,
                                 cycle, double_edge, dyadic_approximation, edge, l1_distance,
                                 load_kernel, moment_signature, motif_density, named_kernel,
                                 parse_motif, path, path_power, rank1_kernel, save_kernel,
                                 simple_motifs, star, theta, triangle_multigraph, uniform_kernel)


def direct_density(F, kappa):
    """Plain sum over block assignments; the oracle for motif_density."""
    total = 0.0
    for a in itertools.product(range(kappa.k), repeat=F.k):
        w = np.prod([kappa.measures[b] for b in a])
        for u, v in F.edges:
            w *= kappa.values[a[u], a[v]]
        total += w
    return total


@st.composite
def kernels(draw, max_k=4):
    k = draw(st.integers(1, max_k))
    seed = draw(st.integers(0, 10 ** 6))
    rng = np.random.default_rng(seed)
    W = rng.random((k, k)) * 2
    return StepKernel(rng.dirichlet(np.ones(k)), W + W.T)


def test_stepkernel_validation():
    with pytest.raises(DomainError):
        StepKernel([0.5, 0.6], [[1, 0], [0, 1]])
    with pytest.raises(DomainError):
        StepKernel([0.5, 0.5], [[1, 2], [0, 1]])
    with pytest.raises(DomainError):
        StepKernel([0.5, 0.5], [[1, -1], [-1, 1]])
    with pytest.raises(DomainError):
        StepKernel([1.0, 0.0], [[1, 0], [0, 1]])


def test_motif_validation():
    with pytest.raises(DomainError):
        Motif(2, ((0, 0),))
    with pytest.raises(DomainError):
        Motif(2, ((0, 1), (0, 1)))
    assert double_edge().e == 2


def test_motif_grammar():
    assert parse_motif("C4") == cycle(4)
    assert parse_motif("K2,3") == complete_bipartite(2, 3)
    th = parse_motif("Theta3,3")
    assert th == theta(3, 3)
    assert (th.k, th.e) == (2 + 3 * 2, 9)
    assert parse_motif("K4") == complete(4)
    with pytest.raises((DomainError, ConfigError)):
        parse_motif("nonsense")


def test_simple_motif_counts():
    # connected graphs on 1..5 vertices and all graphs on 1..4 vertices, up to isomorphism
    assert [len(simple_motifs(k)) for k in range(1, 6)] == [1, 1, 2, 6, 21]
    assert [len(simple_motifs(k, connected=False)) for k in range(1, 5)] == [1, 2, 4, 11]
    with pytest.raises(CapacityError):
        simple_motifs(7)


@settings(max_examples=40, deadline=None)
@given(kernels(), st.sampled_from([edge(), double_edge(), cycle(3), path(3), star(3), cycle(4),
                                   triangle_multigraph(), complete(4)]))
def test_motif_density_matches_direct_sum(kappa, F):
    assert motif_density(F, kappa) == pytest.approx(direct_density(F, kappa), rel=1e-12, abs=1e-14)


def test_constant_kernel_density():
    k = named_kernel("constant", c=0.7)
    for F in (cycle(5), complete(4), theta(2, 3)):
        assert motif_density(F, k) == pytest.approx(0.7 ** F.e, rel=1e-14)


def test_chessboard_c5():
    assert motif_density(cycle(5), named_kernel("chessboard1")) == pytest.approx(1 / 16, abs=1e-15)
    assert motif_density(cycle(5), named_kernel("chessboard2")) == 0


def test_rank1_products_of_moments():
    rng = np.random.default_rng(2)
    mu = rng.dirichlet(np.ones(3))
    f = rng.random(3) + 0.5
    kap = rank1_kernel(mu, f)
    for F in (path(3), star(3), cycle(4), complete(4)):
        deg = np.bincount(np.array(F.edges).ravel(), minlength=F.k)
        expect = np.prod([mu @ f ** d for d in deg])
        assert motif_density(F, kap) == pytest.approx(expect, rel=1e-12)
        assert motif_density(F, kap) == pytest.approx(direct_density(F, kap), rel=1e-12)


def test_motif_density_capacity():
    with pytest.raises(CapacityError):
        motif_density(cycle(11), named_kernel("constant"))


def test_path_power_examples():
    assert path_power(named_kernel("constant", c=2.0), 3).values[0, 0] == pytest.approx(8.0)
    sq = path_power(named_kernel("chessboard2"), 2)
    assert np.allclose(sq.values, 0.5 * named_kernel("chessboard1").values)
    kap = named_kernel("chessboard1")
    assert np.array_equal(path_power(kap, 1).values, kap.values)
    with pytest.raises(DomainError):
        path_power(kap, 0)


@settings(max_examples=30, deadline=None)
@given(kernels(), st.integers(1, 3), st.integers(1, 3))
def test_path_power_composes(kappa, a, b):
    lhs = path_power(path_power(kappa, a), b).values
    rhs = path_power(kappa, a * b).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(kernels(max_k=3), st.sampled_from([2, 3]), st.sampled_from([edge(), double_edge()]))
def test_subdivision_identity_random(kappa, t, F):
    a = motif_density(F.subdivide(t), kappa)
    assert a == pytest.approx(motif_density(F, path_power(kappa, t)), rel=1e-12)


def test_average_over_partition():
    kap = StepKernel([0.2, 0.3, 0.5], [[1, 2, 0], [2, 0, 1], [0, 1, 3]])
    same = average_over_partition(kap, [0, 1, 2])
    assert np.allclose(same.values, kap.values)
    one = average_over_partition(kap, [[0, 1, 2]])
    assert one.values[0, 0] == pytest.approx(kap.integral(), rel=1e-14)
    half = average_over_partition(named_kernel("chessboard1"), [[0, 1]])
    assert half.values[0, 0] == pytest.approx(0.5)
    with pytest.raises(DomainError):
        average_over_partition(kap, [[0, 1], [], [2]])


@settings(max_examples=30, deadline=None)
@given(kernels(), st.data())
def test_average_preserves_rectangle_integrals(kappa, data):
    lab = np.array(data.draw(st.lists(st.integers(0, 2), min_size=kappa.k, max_size=kappa.k)))
    _, lab = np.unique(lab, return_inverse=True)
    av = average_over_partition(kappa, lab)
    for i in range(av.k):
        for j in range(av.k):
            I, J = lab == i, lab == j
            mass = kappa.measures[I] @ kappa.values[np.ix_(I, J)] @ kappa.measures[J]
            assert av.measures[i] * av.measures[j] * av.values[i, j] == pytest.approx(mass, rel=1e-12, abs=1e-15)


def test_dyadic_approximation():
    kap = StepKernel([0.25, 0.25, 0.5], [[1, 2, 0], [2, 0, 1], [0, 1, 3]])
    for lvl in (2, 3):
        assert l1_distance(dyadic_approximation(kap, lvl), kap) < 1e-14
    assert dyadic_approximation(named_kernel("chessboard1"), 0).values[0, 0] == pytest.approx(0.5)
    kd = named_kernel("kappa_D", D=3, R=4)
    errs = [l1_distance(dyadic_approximation(kd, lvl), kd) for lvl in range(0, 7)]
    assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))
    assert errs[4] < 1e-14


def test_dyadic_tail_error_kappa_d():
    # R = 6 intervals of length 2^-i plus a zero block of length 2^-6; at level 8 every boundary
    # is dyadic so the approximation is exact. At level 3, blocks 4..6 and the tail share the
    # last cell [7/8, 1); the error is the L1 deviation from that cell's mean.
    kd = named_kernel("kappa_D", D=3, R=6)
    assert l1_distance(dyadic_approximation(kd, 8), kd) < 1e-14
    lens = np.array([2.0 ** -4, 2.0 ** -5, 2.0 ** -6, 2.0 ** -6])
    vals = np.array([4, 5, 6, 0]) ** (2 / 3)
    vals[-1] = 0.0
    cell = 1 / 8
    mean = np.sum(lens ** 2 * vals) / cell ** 2
    # diagonal blocks carry their value; off-diagonal sub-rectangles of the cell carry zero
    diag_err = np.sum(lens ** 2 * np.abs(vals - mean))
    off_err = (cell ** 2 - np.sum(lens ** 2)) * mean
    assert l1_distance(dyadic_approximation(kd, 3), kd) == pytest.approx(diag_err + off_err, rel=1e-12)


def test_named_kernels():
    assert np.all(named_kernel("constant", c=1).values == 1)
    kd = named_kernel("kappa_D", D=3, R=4)
    assert np.allclose(np.diag(kd.values), [1, 2 ** (2 / 3), 3 ** (2 / 3), 4 ** (2 / 3), 0])
    assert np.allclose(kd.measures, [1 / 2, 1 / 4, 1 / 8, 1 / 16, 1 / 16])
    assert kd.meta["R"] == 4
    a = named_kernel("random_dyadic", R=3, seed=5)
    b = named_kernel("random_dyadic", R=3, seed=5)
    assert np.array_equal(a.values, b.values)
    sums = {sum(2 ** r for r in range(4) if mask >> r & 1) for mask in range(16)}
    assert set(np.unique(a.values).tolist()) <= sums
    with pytest.raises(DomainError):
        named_kernel("nope")


def test_rank1_log_discretization():
    # block means keep E f = 1 exactly; higher moments approach d! from below as depth grows
    prev = 0.0
    for depth in (5, 10, 20, 30):
        kap = named_kernel("rank1_log", depth=depth)
        f = np.array(kap.meta["f"])
        assert kap.measures.sum() == pytest.approx(1.0, abs=1e-15)
        assert kap.measures @ f == pytest.approx(1.0, rel=1e-12)
        second = kap.measures @ f ** 2
        assert prev <= second <= 2.0
        prev = second
    assert prev > 1.9


def test_moment_signature_examples():
    k1, k2 = named_kernel("chessboard1"), named_kernel("chessboard2")
    assert moment_signature(k1, family=[cycle(4)]).agrees(moment_signature(k1.permute([1, 0]), family=[cycle(4)]))
    s1, s2 = moment_signature(k1), moment_signature(k2)
    assert s1.cycle_moments[3] == pytest.approx(0.25) and s2.cycle_moments[3] == pytest.approx(0.0, abs=1e-15)
    assert not s1.agrees(s2)
    one = moment_signature(named_kernel("constant"), max_cycle=7)
    assert one.spectrum[0] == pytest.approx(1.0)
    assert all(v == pytest.approx(1.0) for v in one.cycle_moments.values())


@settings(max_examples=30, deadline=None)
@given(kernels())
def test_cycle_moments_equal_spectral_sums(kappa):
    sig = moment_signature(kappa, max_cycle=6)
    for k, v in sig.cycle_moments.items():
        assert v == pytest.approx(np.sum(sig.spectrum ** k), rel=1e-9, abs=1e-12)
        assert v == pytest.approx(motif_density(cycle(k), kappa), rel=1e-9, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(kernels(), st.data())
def test_rearrangement_and_split_invariance(kappa, data):
    perm = data.draw(st.permutations(range(kappa.k)))
    a = data.draw(st.integers(0, kappa.k - 1))
    for F in (cycle(3), path(3), complete(4)):
        base = motif_density(F, kappa)
        assert motif_density(F, kappa.permute(perm)) == pytest.approx(base, rel=1e-12, abs=1e-15)
        assert motif_density(F, kappa.split_block(a)) == pytest.approx(base, rel=1e-12, abs=1e-15)


def test_boundedness_moment_growth_kappa_d():
    # on a diagonal kernel K_{t,t} must sit inside one block: s = sum_a mu_a^{2t} V_a^{t^2}
    kd = named_kernel("kappa_D", D=3, R=6)
    mu, V = kd.measures, np.diag(kd.values)
    for t in (1, 2):
        closed = np.sum(mu ** (2 * t) * V ** (t * t))
        assert motif_density(complete_bipartite(t, t), kd) == pytest.approx(closed, rel=1e-12)
    C = 2.0
    assert kd.max_value() > C
    a = int(np.argmax(V))
    log_witness = [2 * t * math.log(mu[a]) + t * t * math.log(V[a]) for t in range(1, 40)]
    first = next(t for t, lw in enumerate(log_witness, 1) if lw > t * t * math.log(C))
    assert first <= 20
    # a kernel bounded by C never grows past C^{t^2}
    capped = StepKernel(mu, np.minimum(kd.values, C))
    assert motif_density(complete_bipartite(2, 2), capped) <= C ** 4


def test_kernel_json_roundtrip(tmp_path):
    kap = StepKernel([0.3, 0.7], [[1, 2], [2, 0.5]])
    save_kernel(kap, tmp_path / "k.json")
    back = load_kernel(tmp_path / "k.json")
    assert np.array_equal(back.values, kap.values)
    (tmp_path / "bad.json").write_text(json.dumps({"measures": [1.0]}))
    with pytest.raises(ConfigError):
        load_kernel(tmp_path / "bad.json")


def test_uniform_kernel():
    k = uniform_kernel([[1, 0], [0, 1]])
    assert np.allclose(k.measures, 0.5)
