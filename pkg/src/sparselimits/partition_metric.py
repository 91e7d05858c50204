"""Density matrices of balanced partitions, matrix clouds and their Hausdorff distances."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import CapacityError, DomainError
from .graph_core import Graph
from .kernel import StepKernel
from .regularity import Partition, weak_regular_partition

ENUMERATE_MAX_N = 12
BRUTE_CANON_MAX_K = 7
PERM_DISTANCE_MAX_K = 5


def entry_bound(k: int, C: float) -> float:
    """Largest possible entry when e(G) <= C p n^2 / 2 and every part has >= n/(2k) vertices."""
    return (2 * k) ** 2 * C


def _canonical(M: np.ndarray) -> np.ndarray:
    """Lexicographically smallest simultaneous row/column permutation of M (flattened order).

    Exhaustive for k <= 7; above that, parts are ordered by (diagonal, sorted row) which is
    still invariant under relabeling unless two parts tie on that key.
    """
    k = M.shape[0]
    if k <= 1:
        return M.copy()
    if k <= BRUTE_CANON_MAX_K:
        best = None
        # prune: the first row is decided by M[0,0], so only try perms starting at a minimal diagonal
        dmin = M.diagonal().min()
        for perm in itertools.permutations(range(k)):
            if M[perm[0], perm[0]] != dmin:
                continue
            cand = M[np.ix_(perm, perm)].ravel()
            if best is None or tuple(cand) < tuple(best):
                best = cand
        return best.reshape(k, k)
    keys = [(M[i, i], tuple(np.sort(M[i]))) for i in range(k)]
    order = sorted(range(k), key=lambda i: keys[i])
    return M[np.ix_(order, order)]


@dataclass
class DensityMatrix:
    entries: np.ndarray
    index_value: float = field(init=False)

    def __post_init__(self):
        E = np.asarray(self.entries, dtype=np.float64)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise DomainError("density matrix must be square")
        if not np.allclose(E, E.T, atol=1e-12, rtol=0):
            raise DomainError("density matrix must be symmetric")
        if np.any(E < 0):
            raise DomainError("density matrix entries must be nonnegative")
        self.entries = E
        self.index_value = float((E ** 2).sum() / E.shape[0] ** 2)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    def canonical(self) -> "DensityMatrix":
        return DensityMatrix(_canonical(self.entries))

    def index(self) -> float:
        """Mean squared entry, k^-2 sum m_ij^2."""
        return self.index_value

    def to_list(self) -> list:
        return self.entries.tolist()


def _check_balanced(P: Partition):
    if not P.balanced:
        raise DomainError("partition must be balanced (part sizes differ by at most 1)")


def _density_entries(A, labels: np.ndarray, k: int, p: float) -> np.ndarray:
    n = labels.size
    sizes = np.bincount(labels, minlength=k).astype(np.float64)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    E = onehot.T @ (A @ onehot)
    return E / (p * np.outer(sizes, sizes))


def density_matrix(G: Graph, P: Partition, p: float = 1.0) -> DensityMatrix:
    """Entries d_p(P_i, P_j), with ordered pairs so the diagonal is 2 e(P_i) / (p |P_i|^2)."""
    if p <= 0:
        raise DomainError("p must be positive")
    if P.n != G.n:
        raise DomainError("partition size does not match the graph")
    _check_balanced(P)
    return DensityMatrix(_density_entries(G.sparse(np.float64), P.labels, P.k, p))


@dataclass
class MatrixCloud:
    k: int
    points: np.ndarray            # (N, k, k), canonical, deduplicated
    provenance: str               # enumerated | sampled | extremal | kernel-sampled
    sample_size: int
    seed: object = None
    budget: int | None = None
    bound: float | None = None    # C_k, the distance assigned against an empty cloud

    def __len__(self) -> int:
        return self.points.shape[0]

    def flat(self) -> np.ndarray:
        return self.points.reshape(len(self), -1)

    def to_dict(self) -> dict:
        return {"k": self.k, "provenance": self.provenance, "sample_size": self.sample_size,
                "seed": self.seed, "budget": self.budget, "bound": self.bound,
                "points": self.points.tolist()}

    def merged(self, other: "MatrixCloud") -> "MatrixCloud":
        if other.k != self.k:
            raise DomainError("k mismatch")
        pts = _dedupe(list(self.points) + list(other.points), self.k)
        return MatrixCloud(self.k, pts, self.provenance, self.sample_size + other.sample_size,
                           self.seed, None, self.bound)


def _dedupe(mats, k: int, decimals: int = 12) -> np.ndarray:
    seen, out = set(), []
    for M in mats:
        key = np.round(M, decimals).tobytes()
        if key not in seen:
            seen.add(key)
            out.append(M)
    return np.array(out).reshape(len(out), k, k)


def balanced_partitions(n: int, k: int):
    """All balanced partitions of range(n) into k parts, each once up to relabeling of parts."""
    if not 1 <= k <= n:
        raise DomainError("need 1 <= k <= n")
    small, big = divmod(n, k)  # `big` parts get small + 1 vertices
    lab = np.full(n, -1, dtype=np.int64)
    sizes = [0] * k

    def rec(v, used, n_big):
        if v == n:
            if used == k:
                yield lab.copy()
            return
        # parts are opened in order of their first vertex, so each partition appears once
        for b in range(min(used + 1, k)):
            if sizes[b] > small or (sizes[b] == small and n_big == big):
                continue
            grows = sizes[b] == small
            sizes[b] += 1
            lab[v] = b
            opened = used + (b == used)
            need = sum(max(0, small - s) for s in sizes[:opened]) + (k - opened) * small
            if n - v - 1 >= need:
                yield from rec(v + 1, opened, n_big + grows)
            sizes[b] -= 1
        lab[v] = -1

    yield from rec(0, 0, 0)


def _reshape_labels(labels: np.ndarray, k: int) -> np.ndarray:
    """Order vertices by (label, index) and cut into k consecutive balanced parts."""
    n = labels.size
    order = np.lexsort((np.arange(n), labels))
    out = np.empty(n, dtype=np.int64)
    out[order] = (np.arange(n) * k) // n
    return out


def _move(E: np.ndarray, d: np.ndarray, a: int, b: int) -> np.ndarray:
    """Ordered edge counts after moving one vertex with part-degrees d from part a to part b."""
    E = E.copy()
    E[a] -= d
    E[:, a] -= d
    E[b] += d
    E[:, b] += d
    return E


def _index_ascent(A, labels: np.ndarray, k: int, p: float, steps: int, rng) -> np.ndarray:
    """Random vertex swaps between parts, kept when the mean squared density rises."""
    n = labels.size
    lab = labels.copy()
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0
    A = A.tocsr()
    D = np.asarray(A @ onehot)             # edges from each vertex into each part
    E = onehot.T @ D                       # ordered edge counts between parts
    sizes = np.bincount(lab, minlength=k).astype(np.float64)
    norm2 = (1.0 / (p * np.outer(sizes, sizes))) ** 2  # sizes are unchanged by swaps
    cur = float((E * E * norm2).sum())
    for _ in range(steps):
        u, v = rng.integers(n, size=2)
        a, b = lab[u], lab[v]
        if a == b:
            continue
        dv = D[v].copy()
        if A[u, v]:
            dv[a] -= 1
            dv[b] += 1
        E2 = _move(_move(E, D[u], a, b), dv, b, a)
        new = float((E2 * E2 * norm2).sum())
        if new > cur * (1 + 1e-12):
            cur, E = new, E2
            lab[u], lab[v] = b, a
            for w, src, dst in ((u, a, b), (v, b, a)):
                nb = A.indices[A.indptr[w]:A.indptr[w + 1]]
                np.subtract.at(D[:, src], nb, 1.0)
                np.add.at(D[:, dst], nb, 1.0)
    return lab


def matrix_cloud(G: Graph, k: int, p: float = 1.0, strategy: str = "sample", budget: int = 200,
                 seed=None, C: float = 1.0, ascent_steps: int = 2000, eps: float = 0.2) -> MatrixCloud:
    """Canonical density matrices of balanced k-partitions of G.

    enumerate: every balanced partition (n <= 12); sample: `budget` uniform random balanced
    partitions; extremal: the sampled ones, plus index-ascent from a few of them and the weak
    regular partition of G reshaped to k parts.
    """
    if p <= 0:
        raise DomainError("p must be positive")
    n = G.n
    if not 1 <= k <= n:
        raise DomainError("need 1 <= k <= n")
    A = G.sparse(np.float64)
    rng = np.random.default_rng(seed)
    mats = []
    if strategy == "enumerate":
        if n > ENUMERATE_MAX_N:
            raise CapacityError(f"enumeration is limited to n <= {ENUMERATE_MAX_N}")
        for lab in balanced_partitions(n, k):
            mats.append(_canonical(_density_entries(A, lab, k, p)))
        size = len(mats)
    elif strategy in ("sample", "extremal"):
        labs = [Partition.random_balanced(n, k, rng).labels for _ in range(budget)]
        if strategy == "extremal":
            for lab in labs[: max(1, min(8, budget))]:
                labs.append(_index_ascent(A, lab, k, p, ascent_steps, rng))
            if G.m:
                rep = weak_regular_partition(G, p, eps, seed=int(rng.integers(2 ** 32)),
                                             restarts=10, equalize=False)
                labs.append(_reshape_labels(rep.partition.labels, k))
        mats = [_canonical(_density_entries(A, lab, k, p)) for lab in labs]
        size = len(labs)
    else:
        raise DomainError(f"unknown strategy {strategy!r}")
    prov = {"enumerate": "enumerated", "sample": "sampled", "extremal": "extremal"}[strategy]
    return MatrixCloud(k, _dedupe(mats, k), prov, size, seed, None if strategy == "enumerate" else budget,
                       entry_bound(k, C))


def _kernel_partition_overlap(kappa: StepKernel, k: int, cuts: int, rng) -> np.ndarray:
    """Overlap measures O[i, b] of a random balanced interval partition with the blocks.

    The block grid is refined by `cuts` uniform points; the resulting cells are shuffled,
    laid end to end, and the line is cut into k intervals of length 1/k.
    """
    bnd = kappa.boundaries
    pts = np.unique(np.concatenate([bnd, rng.random(cuts)]))
    lo, hi = pts[:-1], pts[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    block = np.searchsorted(bnd, lo, side="right") - 1
    order = rng.permutation(lo.size)
    lengths = (hi - lo)[order]
    block = block[order]
    start = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    end = start + lengths
    O = np.zeros((k, kappa.k))
    for i in range(k):
        a, b = i / k, (i + 1) / k
        ov = np.clip(np.minimum(end, b) - np.maximum(start, a), 0, None)
        np.add.at(O[i], block, ov)
    return O


def kernel_cloud(kappa: StepKernel, k: int, budget: int = 200, seed=None, cuts: int | None = None,
                 C: float = 1.0) -> MatrixCloud:
    """Density matrices k^2 * int_{P_i x P_j} kappa over sampled balanced interval partitions."""
    rng = np.random.default_rng(seed)
    cuts = 4 * k if cuts is None else cuts
    W = np.asarray(kappa.values)
    mats = []
    for _ in range(budget):
        O = _kernel_partition_overlap(kappa, k, cuts, rng)
        M = k * k * (O @ W @ O.T)
        mats.append(_canonical((M + M.T) / 2))
    return MatrixCloud(k, _dedupe(mats, k), "kernel-sampled", budget, seed, budget, entry_bound(k, C))


def cloud_distances(X: MatrixCloud, Y: MatrixCloud) -> np.ndarray:
    """Pairwise distances min_sigma max_ij |M_ij - M'_sigma(i)sigma(j)| between cloud points.

    Canonical forms are not continuous in the entries, so for k <= PERM_DISTANCE_MAX_K every
    simultaneous relabeling of the second point is tried; above that canonical forms are compared.
    """
    if X.k != Y.k:
        raise DomainError(f"k mismatch: {X.k} vs {Y.k}")
    k = X.k
    if k > PERM_DISTANCE_MAX_K or len(X) == 0 or len(Y) == 0:
        return cdist(X.flat(), Y.flat(), metric="chebyshev")
    perms = list(itertools.permutations(range(k)))
    Yp = np.stack([Y.points[:, p][:, :, p] for p in perms], axis=1).reshape(-1, k * k)
    D = np.empty((len(X), len(Y)))
    step = max(1, 2_000_000 // Yp.shape[0])
    for lo in range(0, len(X), step):
        block = cdist(X.flat()[lo:lo + step], Yp, metric="chebyshev")
        D[lo:lo + step] = block.reshape(-1, len(Y), len(perms)).min(axis=2)
    return D


def hausdorff_distance(X: MatrixCloud, Y: MatrixCloud, bound: float | None = None) -> float:
    """Hausdorff distance in the entrywise max norm, up to relabeling; an empty side gives C_k."""
    if X.k != Y.k:
        raise DomainError(f"k mismatch: {X.k} vs {Y.k}")
    if len(X) == 0 and len(Y) == 0:
        return 0.0
    if len(X) == 0 or len(Y) == 0:
        b = bound if bound is not None else (X.bound if X.bound is not None else Y.bound)
        if b is None:
            raise DomainError("an empty cloud needs the entry bound C_k")
        return float(b)
    D = cloud_distances(X, Y)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


@dataclass
class PartitionDistance:
    per_k: dict
    aggregate: float
    budget: int
    seed: object

    def to_dict(self) -> dict:
        return {"per_k": {str(k): v for k, v in self.per_k.items()}, "aggregate": self.aggregate,
                "budget": self.budget, "seed": self.seed}


def _cloud_of(obj, k, p, budget, seed, strategy):
    if isinstance(obj, StepKernel):
        return kernel_cloud(obj, k, budget, seed)
    if isinstance(obj, Graph):
        return matrix_cloud(obj, k, p, strategy, budget, seed)
    raise DomainError("expected a Graph or a StepKernel")


def partition_distance(first, second, p: float = 1.0, k_max: int = 4, budget: int = 200, seed=None,
                       strategy: str = "sample", k_min: int = 1,
                       p_second: float | None = None) -> PartitionDistance:
    """Per-k sampled Hausdorff distances and the aggregate sum_k 2^-k min(d_k, 1).

    Graphs use random balanced vertex partitions; kernels use random balanced interval
    partitions. The sum runs over k_min..k_max only, so it is a truncation.
    """
    ss = np.random.SeedSequence(seed)
    per_k = {}
    p2 = p if p_second is None else p_second
    for k, child in zip(range(k_min, k_max + 1), ss.spawn(k_max - k_min + 1)):
        # both sides share the stream: equal-order graphs see the same random partitions
        X = _cloud_of(first, k, p, budget, child, strategy)
        Y = _cloud_of(second, k, p2, budget, child, strategy)
        per_k[k] = hausdorff_distance(X, Y)
    agg = float(sum(2.0 ** -k * min(d, 1.0) for k, d in per_k.items()))
    return PartitionDistance(per_k, agg, budget, seed)


@dataclass
class LocalOptimum:
    matrix: DensityMatrix
    index: float
    parts: int
    best_by_parts: dict
    eps: float

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.to_list(), "index": self.index, "parts": self.parts,
                "best_by_parts": {str(k): v for k, v in self.best_by_parts.items()}, "eps": self.eps}


def locally_optimal_matrix(G: Graph, k: int, eps: float, f_bound: int | None = None, p: float = 1.0,
                           budget: int = 50, seed=None, ascent_steps: int = 2000) -> LocalOptimum:
    """Smallest l in [k, f_bound] whose best found index is within eps of the best over all l.

    The best index per l comes from index ascent started at `budget` random balanced partitions
    (a budget-limited certificate, not a proof of optimality).
    """
    if eps < 0:
        raise DomainError("eps must be >= 0")
    f_bound = k if f_bound is None else f_bound
    if f_bound < k or f_bound > G.n:
        raise DomainError("need k <= f_bound <= n")
    A = G.sparse(np.float64)
    rng = np.random.default_rng(seed)
    best_by, mats = {}, {}
    for ell in range(k, f_bound + 1):
        best = None
        for _ in range(budget):
            lab = Partition.random_balanced(G.n, ell, rng).labels
            lab = _index_ascent(A, lab, ell, p, ascent_steps, rng)
            M = DensityMatrix(_density_entries(A, lab, ell, p))
            if best is None or M.index() > best.index():
                best = M
        best_by[ell] = best.index()
        mats[ell] = best
    top = max(best_by.values())
    ell = min(l for l, v in best_by.items() if v >= top - eps)
    return LocalOptimum(mats[ell].canonical(), best_by[ell], ell, best_by, eps)
