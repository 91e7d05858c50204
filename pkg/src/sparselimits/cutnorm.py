"""Cut norms of signed step kernels and graph/kernel differences, and the cut distances.

Three variants are supported everywhere:

* ``ST``: sup over pairs of sets |int_{S x T} delta|
* ``SSc``: sup over sets |int_{S x S^c} delta|
* ``functional``: sup over f, g with values in [-1, 1] of int delta f(x) g(y)

For a step kernel everything reduces to block fractions x_a = |S cap block a| / |block a|.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, DomainError
from .graph_core import Graph
from .kernel import (StepKernel, common_refinement, complete, cycle, edge, l1_distance,
                     motif_density, path, star)

VARIANTS = ("ST", "SSc", "functional")
EXACT_MAX_BLOCKS = 24
EXACT_SSC_MAX_BLOCKS = 12


class SignedStepKernel(StepKernel):
    """Step kernel whose values may be negative (typically a difference of kernels)."""

    def __init__(self, measures, values, meta=None):
        super().__init__(measures, values, meta, signed=True)


def difference(k1: StepKernel, k2: StepKernel) -> SignedStepKernel:
    mu, W1, W2 = common_refinement(k1, k2)
    mu = mu / mu.sum()
    return SignedStepKernel(mu, W1 - W2)


@dataclass
class CutEstimate:
    value: float
    witness: tuple
    exact: bool
    variant: str
    restarts_used: int = 0
    evaluations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def lower_bound(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"value": self.value, "exact": self.exact, "variant": self.variant,
                "restarts_used": self.restarts_used, "evaluations": self.evaluations,
                "witness": [np.asarray(w).tolist() for w in self.witness], **self.extra}


def bilinear_matrix(delta: StepKernel) -> np.ndarray:
    mu = delta.measures
    return mu[:, None] * delta.values * mu[None, :]


def evaluate_witness(delta: StepKernel, witness, variant: str) -> float:
    B = bilinear_matrix(delta)
    return _evaluate(B, witness, variant)


def _evaluate(B, witness, variant):
    x = np.asarray(witness[0], dtype=np.float64)
    if variant == "ST":
        return abs(float(x @ B @ np.asarray(witness[1], dtype=np.float64)))
    if variant == "SSc":
        return abs(float(x @ B @ (1.0 - x)))
    if variant == "functional":
        return float(x @ B @ np.asarray(witness[1], dtype=np.float64))
    raise DomainError(f"unknown variant {variant!r}")


def _bits(lo: int, hi: int, k: int) -> np.ndarray:
    return ((np.arange(lo, hi, dtype=np.int64)[:, None] >> np.arange(k)) & 1).astype(np.float64)


def _exact_st(B: np.ndarray):
    k = B.shape[0]
    best, wit = -1.0, None
    chunk = 1 << 16
    for lo in range(0, 1 << k, chunk):
        X = _bits(lo, min(1 << k, lo + chunk), k)
        R = X @ B
        pos = np.clip(R, 0, None).sum(axis=1)
        neg = -np.clip(R, None, 0).sum(axis=1)
        for vals, sgn in ((pos, 1), (neg, -1)):
            i = int(np.argmax(vals))
            if vals[i] > best:
                best = float(vals[i])
                y = (R[i] > 0) if sgn > 0 else (R[i] < 0)
                wit = (X[i].copy(), y.astype(np.float64))
    return best, wit


def _exact_functional(B: np.ndarray):
    k = B.shape[0]
    best, wit = -1.0, None
    chunk = 1 << 16
    total = 1 << max(k - 1, 0)
    for lo in range(0, total, chunk):
        X = _bits(lo, min(total, lo + chunk), k)
        U = 2 * X - 1
        if k >= 1:
            U[:, k - 1] = 1.0  # fix one coordinate: u and -u give the same value
        R = U @ B
        vals = np.abs(R).sum(axis=1)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best = float(vals[i])
            wit = (U[i].copy(), np.where(R[i] >= 0, 1.0, -1.0))
    return best, wit


def _exact_ssc(B: np.ndarray):
    """Max of |x' B (1 - x)| over the box, by enumerating faces and their stationary points."""
    k = B.shape[0]
    c = B.sum(axis=1)
    best, wit = -1.0, None
    for mask in range(1 << k):
        F = [i for i in range(k) if mask >> i & 1]
        R = [i for i in range(k) if not mask >> i & 1]
        XR = _bits(0, 1 << len(R), len(R))
        X = np.zeros((XR.shape[0], k))
        X[:, R] = XR
        if F:
            H = 2 * B[np.ix_(F, F)]
            rhs = c[F][None, :] - 2 * XR @ B[np.ix_(R, F)]
            XF = rhs @ np.linalg.pinv(H).T
            resid = np.abs(XF @ H.T - rhs).max(axis=1)
            ok = (resid <= 1e-9) & np.all(XF >= -1e-9, axis=1) & np.all(XF <= 1 + 1e-9, axis=1)
            if not ok.any():
                continue
            X = X[ok]
            X[:, F] = np.clip(XF[ok], 0.0, 1.0)
        vals = np.abs(np.einsum("ij,jk,ik->i", X, B, 1.0 - X))
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, wit = float(vals[i]), (X[i].copy(),)
    return best, wit


class _DenseOp:
    def __init__(self, B):
        self.B = np.asarray(B, dtype=np.float64)
        self.n = self.B.shape[0]

    def matmat(self, X):
        return self.B @ X

    def diag(self):
        return np.diag(self.B).copy()


class LowRankDiffOperator:
    """(A/p - U M U^T) / n^2 for sparse A; the bilinear form of kappa_G minus a step kernel."""

    def __init__(self, A: sp.csr_array, p: float, U: np.ndarray, M: np.ndarray):
        self.A, self.p, self.U, self.M = A, p, U, M
        self.n = A.shape[0]
        self.scale = 1.0 / (self.n * self.n)

    def matmat(self, X):
        return ((self.A @ X) / self.p - self.U @ (self.M @ (self.U.T @ X))) * self.scale

    def diag(self):
        d = np.asarray(self.A.diagonal(), dtype=np.float64) / self.p
        d -= np.einsum("ij,jk,ik->i", self.U, self.M, self.U)
        return d * self.scale


def _heuristic_st(op, restarts: int, rng, max_iter: int = 100):
    n = op.n
    R = max(1, restarts)
    X = (rng.random((n, R)) < 0.5).astype(np.float64)
    s = np.where(np.arange(R) % 2 == 0, 1.0, -1.0)
    Y = None
    for _ in range(max_iter):
        Y = ((op.matmat(X) * s) > 0).astype(np.float64)
        Xn = ((op.matmat(Y) * s) > 0).astype(np.float64)
        if np.array_equal(Xn, X):
            break
        X = Xn
    Y = ((op.matmat(X) * s) > 0).astype(np.float64)
    vals = np.abs(np.sum(X * op.matmat(Y), axis=0))
    i = int(np.argmax(vals))
    return float(vals[i]), (X[:, i].copy(), Y[:, i].copy()), X, Y


def _ssc_values(op, X):
    return np.abs(np.sum(X * op.matmat(1.0 - X), axis=0))


def _heuristic_ssc(op, restarts: int, rng, seeds=(), max_iter: int = 60):
    """Cut search over vertex sets via the +-1 form x'B(1-x) = (1'B1 - u'Bu)/4, u = 2x - 1."""
    n = op.n
    R = max(2, restarts)
    U = np.where(rng.random((n, R)) < 0.5, 1.0, -1.0)
    if len(seeds):
        U = np.hstack([U, np.column_stack([2 * np.asarray(x, float) - 1 for x in seeds])])
    s = np.where(np.arange(U.shape[1]) % 2 == 0, 1.0, -1.0)
    best_vals = _ssc_values(op, (U + 1) / 2)
    best_U = U.copy()
    for _ in range(max_iter):
        G = op.matmat(U) * s
        Un = np.where(G > 0, 1.0, np.where(G < 0, -1.0, U))
        if np.array_equal(Un, U):
            break
        U = Un
        v = _ssc_values(op, (U + 1) / 2)
        better = v > best_vals
        best_vals[better] = v[better]
        best_U[:, better] = U[:, better]
    X = (best_U + 1) / 2
    X = _greedy_polish(op, X, best_vals)
    vals = _ssc_values(op, X)
    i = int(np.argmax(vals))
    return float(vals[i]), (X[:, i].copy(),)


def _greedy_polish(op, X, vals, rounds: int = 8):
    """Batched single-vertex moves with first-order gains, kept only when they improve."""
    d = op.diag()
    for _ in range(rounds):
        BX = op.matmat(X)
        B1 = op.matmat(np.ones((op.n, 1)))
        cur = np.sum(X * (B1 - BX), axis=0)
        sign = np.where(cur >= 0, 1.0, -1.0)
        # gain of toggling v (exact for a single move)
        add = (B1 - BX) - BX - d[:, None]
        rem = BX - (B1 - BX) - d[:, None]
        gain = np.where(X > 0, rem, add) * sign
        Xn = X.copy()
        improved = False
        for j in range(X.shape[1]):
            g = gain[:, j]
            thr = np.quantile(g, 0.99) if g.size > 100 else 0.0
            flip = g > max(thr, 0.0)
            if not flip.any():
                continue
            Xn[flip, j] = 1.0 - Xn[flip, j]
        nv = _ssc_values(op, Xn)
        keep = nv > vals + 1e-15
        if keep.any():
            X[:, keep] = Xn[:, keep]
            vals = np.where(keep, nv, vals)
            improved = True
        if not improved:
            break
    return X


def cut_norm(delta: StepKernel, mode: str = "exact", variant: str = "ST", restarts: int = 50,
             seed=None) -> CutEstimate:
    """Cut norm of a (signed) step kernel in one of the three variants."""
    if variant not in VARIANTS:
        raise DomainError(f"unknown variant {variant!r}")
    B = bilinear_matrix(delta)
    k = B.shape[0]
    if mode == "exact":
        if k > EXACT_MAX_BLOCKS or (variant == "SSc" and k > EXACT_SSC_MAX_BLOCKS):
            raise CapacityError(f"exact {variant} cut norm limited to "
                                f"{EXACT_SSC_MAX_BLOCKS if variant == 'SSc' else EXACT_MAX_BLOCKS} blocks")
        fn = {"ST": _exact_st, "SSc": _exact_ssc, "functional": _exact_functional}[variant]
        val, wit = fn(B)
        val = _evaluate(B, wit, variant)
        return CutEstimate(val, wit, True, variant, 0, 1 << k)
    if mode != "heuristic":
        raise DomainError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    op = _DenseOp(B)
    if variant == "ST":
        val, wit, _, _ = _heuristic_st(op, restarts, rng)
    elif variant == "SSc":
        val, wit = _heuristic_ssc(op, restarts, rng)
    else:
        # +-1 vectors: u'Bv = 4 x'By - 2 x'B1 - 2 1'By + 1'B1; alternate on signs directly
        n = op.n
        U = np.where(rng.random((n, restarts)) < 0.5, 1.0, -1.0)
        for _ in range(100):
            V = np.where(op.matmat(U) >= 0, 1.0, -1.0)
            Un = np.where(op.matmat(V) >= 0, 1.0, -1.0)
            if np.array_equal(Un, U):
                break
            U = Un
        V = np.where(op.matmat(U) >= 0, 1.0, -1.0)
        vals = np.sum(U * op.matmat(V), axis=0)
        i = int(np.argmax(vals))
        wit = (U[:, i].copy(), V[:, i].copy())
    val = _evaluate(B, wit, variant)
    return CutEstimate(val, wit, False, variant, restarts, 0)


def cut_norm_all(delta: StepKernel, mode: str = "exact", **kw) -> dict:
    return {v: cut_norm(delta, mode, v, **kw) for v in VARIANTS}


# ---------------------------------------------------------------------------
# kernel-kernel distance

DEFAULT_FAMILY = (edge(), path(2), cycle(3), cycle(4), star(3), path(3), cycle(5))


@dataclass
class CutDistance:
    upper: float
    lower: float
    permutation: tuple
    upper_exact: bool
    evaluations: int
    lower_witness: str | None = None

    def to_dict(self) -> dict:
        return {"upper": self.upper, "lower": self.lower, "permutation": list(self.permutation),
                "upper_exact": self.upper_exact, "evaluations": self.evaluations,
                "lower_witness": self.lower_witness}


def _perm_upper(k1, k2, perm, variant):
    d = difference(k1, k2.permute(perm))
    if d.k <= (EXACT_SSC_MAX_BLOCKS if variant == "SSc" else EXACT_MAX_BLOCKS):
        return cut_norm(d, "exact", variant).value, True
    return l1_distance(k1, k2.permute(perm)), False


def cut_distance_step(k1: StepKernel, k2: StepKernel, budget: int = 2000, exact_candidates: int = 12,
                      variant: str = "ST", family=DEFAULT_FAMILY, seed=None) -> CutDistance:
    """Two-sided bounds on the cut distance between step kernels.

    Upper: best block permutation of k2 found (all k! orders for k <= 8, annealing otherwise),
    ranked by L1 distance; the top candidates are scored with the exact cut norm.
    Lower: max over motifs of |s(F,k1) - s(F,k2)| / (e(F) V^(e(F)-1)), V = max(1, sup values).
    """
    rng = np.random.default_rng(seed)
    m = k2.k
    evals = 0
    if m <= 8:
        cands = [(l1_distance(k1, k2.permute(pp)), pp) for pp in itertools.permutations(range(m))]
        evals += len(cands)
    else:
        cur = tuple(range(m))
        cur_v = l1_distance(k1, k2.permute(cur))
        cands = [(cur_v, cur)]
        temp = max(cur_v, 1e-9)
        for step in range(budget):
            i, j = rng.choice(m, size=2, replace=False)
            nxt = list(cur)
            nxt[i], nxt[j] = nxt[j], nxt[i]
            nxt = tuple(nxt)
            v = l1_distance(k1, k2.permute(nxt))
            evals += 1
            if v < cur_v or rng.random() < math.exp(-(v - cur_v) / max(temp, 1e-12)):
                cur, cur_v = nxt, v
                cands.append((v, nxt))
            temp *= 0.995
    cands.sort(key=lambda t: (t[0], t[1]))
    seen, best = set(), (math.inf, None, False)
    for v, pp in cands:
        if pp in seen:
            continue
        seen.add(pp)
        u, ex = _perm_upper(k1, k2, pp, variant)
        if u < best[0]:
            best = (u, pp, ex)
        if len(seen) >= exact_candidates:
            break
    V = max(1.0, k1.max_value(), k2.max_value())
    lower, lw = 0.0, None
    for F in family:
        gap = abs(motif_density(F, k1) - motif_density(F, k2)) / (F.e * V ** (F.e - 1))
        if variant == "SSc":
            gap /= 4.0  # ST <= 4 SSc
        if gap > lower:
            lower, lw = gap, F.label
    upper = best[0]
    if upper < lower:  # only possible through rounding
        upper = lower
    return CutDistance(float(upper), float(lower), tuple(best[1]), best[2], evals, lw)


# ---------------------------------------------------------------------------
# graph-graph distance with whole-vertex pairings

@dataclass
class DhatCut:
    upper: float
    lower: float
    upper_fraction: Fraction | None
    pairing: tuple
    exact: bool
    evaluations: int

    def to_dict(self) -> dict:
        return {"upper": self.upper, "lower": self.lower,
                "upper_fraction": str(self.upper_fraction) if self.upper_fraction is not None else None,
                "pairing": list(self.pairing), "exact": self.exact, "evaluations": self.evaluations}


def _all_cut_diffs(D: np.ndarray) -> np.ndarray:
    """max_S |x'D(1-x)| for each matrix in a batch (x_0 = 1 fixed; complements are equivalent)."""
    n = D.shape[-1]
    X = _bits(0, 1 << (n - 1), n - 1)
    X = np.hstack([X, np.ones((X.shape[0], 1))])
    rows = D.sum(axis=-1)  # (batch, n)
    lin = rows @ X.T  # (batch, 2^(n-1))
    quad = np.einsum("si,bij,sj->bs", X, D, X, optimize=True)
    return np.abs(lin - quad).max(axis=1)


def _max_cut_diff(D: np.ndarray) -> int:
    n = D.shape[0]
    if n <= 1:
        return 0
    if n <= 24:
        best = 0.0
        chunk = 1 << 15
        total = 1 << (n - 1)
        rows = D.sum(axis=1)
        for lo in range(0, total, chunk):
            X = _bits(lo, min(total, lo + chunk), n - 1)
            X = np.hstack([X, np.ones((X.shape[0], 1))])
            v = np.abs(X @ rows - np.sum((X @ D) * X, axis=1))
            best = max(best, float(v.max()))
        return int(round(best))
    raise CapacityError("exact cut enumeration limited to 24 vertices")


def dhat_cut(G1: Graph, G2: Graph, p: float = 1.0, budget: int = 2000, seed=None) -> DhatCut:
    """Vertex-pairing cut distance: min over pairings of the worst cut-size gap / (p n^2)."""
    if G1.n != G2.n:
        raise DomainError("graphs must have the same order")
    if p <= 0:
        raise DomainError("p must be positive")
    n = G1.n
    A1 = G1.dense(np.float64)
    A2 = G2.dense(np.float64)
    norm = Fraction(n * n) * Fraction(p)
    # pairing-invariant lower bounds
    lb_edges = Fraction(abs(G1.m - G2.m), 2) / norm
    d1 = np.sort(G1.degrees)
    d2 = np.sort(G2.degrees)
    lb_deg = Fraction(int(np.max(np.abs(d1 - d2))) if n else 0) / norm
    lower = max(lb_edges, lb_deg)
    if n == 0:
        return DhatCut(0.0, 0.0, Fraction(0), (), True, 0)
    evals = 0
    if n <= 8:
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
        best_v, best_p = None, None
        for lo in range(0, len(perms), 2048):
            P = perms[lo:lo + 2048]
            D = A1[None, :, :] - A2[P[:, :, None], P[:, None, :]]
            v = _all_cut_diffs(D)
            i = int(np.argmin(v))
            if best_v is None or v[i] < best_v:
                best_v, best_p = v[i], tuple(P[i].tolist())
        evals = len(perms)
        up = Fraction(int(round(best_v))) / norm
        return DhatCut(float(up), float(lower), up, best_p, True, evals)
    # heuristic: degree-sorted start, then pair swaps
    rng = np.random.default_rng(seed)
    o1 = np.argsort(G1.degrees, kind="stable")
    o2 = np.argsort(G2.degrees, kind="stable")
    pairing = np.empty(n, dtype=np.int64)
    pairing[o1] = o2

    def score(pr):
        D = A1 - A2[np.ix_(pr, pr)]
        if n <= 16:
            return _max_cut_diff(D), True
        rng_local = np.random.default_rng(0)
        v, _ = _heuristic_ssc(_DenseOp(D), 32, rng_local)
        return v, False

    cur, exact_eval = score(pairing)
    evals += 1
    for _ in range(budget if n <= 16 else min(budget, 200)):
        i, j = rng.choice(n, size=2, replace=False)
        cand = pairing.copy()
        cand[i], cand[j] = cand[j], cand[i]
        v, _ = score(cand)
        evals += 1
        if v <= cur:
            pairing, cur = cand, v
    if n <= 24:
        cur = _max_cut_diff(A1 - A2[np.ix_(pairing, pairing)])
        up = Fraction(int(cur)) / norm
        upper = float(up)
    else:
        up = None
        upper = float(cur) / float(norm)  # heuristic value: not a certified upper bound
    return DhatCut(upper, float(lower), up, tuple(pairing.tolist()), False, evals)


# ---------------------------------------------------------------------------
# graph-kernel distance under an explicit alignment

def _grid_overlap(positions_lo: np.ndarray, width: float, kappa: StepKernel) -> np.ndarray:
    b = kappa.boundaries
    lo = np.maximum(positions_lo[:, None], b[None, :-1])
    hi = np.minimum(positions_lo[:, None] + width, b[None, 1:])
    return np.clip(hi - lo, 0.0, None)


def aligned_operator(G: Graph, kappa: StepKernel, p: float, alignment: str = "identity",
                     types=None) -> LowRankDiffOperator:
    n = G.n
    if p <= 0:
        raise DomainError("p must be positive")
    if alignment == "identity":
        order = np.arange(n)
    elif alignment == "given":
        if types is None or len(types) != n:
            raise DomainError("given alignment needs one type per vertex")
        t = np.asarray(types)
        if t.min() < 0 or t.max() >= kappa.k:
            raise DomainError("types must index kernel blocks")
        order = np.lexsort((np.arange(n), t))
    else:
        raise DomainError(f"unknown alignment {alignment!r}")
    O = _grid_overlap(np.arange(n) / n, 1.0 / n, kappa)  # cell j overlaps
    U = np.empty_like(O)
    U[order] = O * n  # vertex order[j] sits in cell j; U rows sum to 1
    return LowRankDiffOperator(G.sparse(np.float64), p, U, np.asarray(kappa.values, dtype=np.float64))


def graph_kernel_cut(G: Graph, kappa: StepKernel, p: float, alignment: str = "identity",
                     types=None, variant: str = "ST", restarts: int = 50, seed=None) -> CutEstimate:
    """Heuristic cut norm of kappa_G minus kappa averaged onto the aligned n-grid.

    This is an alignment-conditional surrogate: it bounds nothing about other alignments.
    """
    op = aligned_operator(G, kappa, p, alignment, types)
    rng = np.random.default_rng(seed)
    if variant == "ST":
        val, wit, _, _ = _heuristic_st(op, restarts, rng)
        val = abs(float(wit[0] @ op.matmat(wit[1][:, None])[:, 0]))
    elif variant == "SSc":
        val, wit = _heuristic_ssc(op, restarts, rng)
    else:
        raise DomainError("graph_kernel_cut supports ST and SSc")
    return CutEstimate(val, wit, False, variant, restarts, 0, {"alignment": alignment})
