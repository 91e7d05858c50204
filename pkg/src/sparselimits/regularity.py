"""Weak and strong sparse regularity partitions, built by energy-increment refinement.

The worst-cut and witness-pair oracles are heuristics; the refinement steps keep the energy
increments that bound the number of rounds, and those bounds are asserted.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cutnorm import LowRankDiffOperator, _heuristic_st
from .errors import DomainError
from .graph_core import Graph, edges_between
from .kernel import StepKernel


@dataclass
class Partition:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.size and lab.min() < 0:
            raise DomainError("labels must be nonnegative")
        k = int(lab.max()) + 1 if lab.size else 0
        if lab.size and np.any(np.bincount(lab, minlength=k) == 0):
            raise DomainError("empty part")
        self.labels = lab

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def k(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    @property
    def balanced(self) -> bool:
        s = self.sizes
        return bool(s.size == 0 or s.max() - s.min() <= 1)

    def parts(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1])

    def indicator(self) -> sp.csr_array:
        return sp.csr_array((np.ones(self.n), (np.arange(self.n), self.labels)), shape=(self.n, self.k))

    def to_dict(self) -> dict:
        return {"labels": self.labels.tolist(), "k": self.k, "balanced": self.balanced}

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls(np.zeros(n, dtype=np.int64))

    @classmethod
    def consecutive(cls, n: int, k: int) -> "Partition":
        if not 1 <= k <= n:
            raise DomainError("need 1 <= k <= n")
        return cls((np.arange(n) * k) // n)

    @classmethod
    def random_balanced(cls, n: int, k: int, seed=None) -> "Partition":
        rng = np.random.default_rng(seed)
        lab = cls.consecutive(n, k).labels
        return cls(lab[rng.permutation(n)])


def _relabel(lab: np.ndarray) -> np.ndarray:
    _, inv = np.unique(lab, return_inverse=True)
    return inv.astype(np.int64)


def _edge_matrix(G: Graph, P: Partition) -> np.ndarray:
    U = P.indicator()
    return (U.T @ G.sparse(np.float64) @ U).toarray()


def quotient_kernel(G: Graph, P: Partition, p: float) -> StepKernel:
    """Step kernel with block measures |P_i|/n and values d_p(P_i, P_j)."""
    if p <= 0:
        raise DomainError("p must be positive")
    if P.n != G.n:
        raise DomainError("partition size does not match the graph")
    s = P.sizes.astype(np.float64)
    E = _edge_matrix(G, P)
    return StepKernel(s / G.n, E / (p * np.outer(s, s)), {"quotient": True})


def partition_index(G: Graph, P: Partition, p: float) -> float:
    K = quotient_kernel(G, P, p)
    return K.l2_squared()


@dataclass
class RegularityReport:
    partition: Partition
    kind: str
    eps: float
    rounds: int
    energy_trace: list
    irregular_pairs: list = field(default_factory=list)
    cut_certificate: float = float("nan")
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eps": self.eps, "rounds": self.rounds,
                "energy_trace": [float(x) for x in self.energy_trace],
                "irregular_pairs": self.irregular_pairs, "cut_certificate": self.cut_certificate,
                "partition": self.partition.to_dict(), "info": self.info}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _quotient_operator(G: Graph, P: Partition, p: float) -> LowRankDiffOperator:
    K = quotient_kernel(G, P, p)
    U = P.indicator().toarray()
    return LowRankDiffOperator(G.sparse(np.float64), p, U, np.asarray(K.values))


def cut_certificate(G: Graph, P: Partition, p: float, restarts: int = 50, seed=None) -> float:
    """Heuristic (witnessed) lower bound on the ST cut norm of kappa_G - G/P."""
    op = _quotient_operator(G, P, p)
    val, _, _, _ = _heuristic_st(op, restarts, np.random.default_rng(seed))
    return val


def _st_value(op, S, T) -> float:
    """|int_{S x T} delta| for vertex masks S, T."""
    x, y = S.astype(np.float64)[:, None], T.astype(np.float64)[:, None]
    return float(abs(np.sum(x * op.matmat(y))))


def _adjust_to_floors(mask: np.ndarray, P: Partition, gamma: float, deg: np.ndarray) -> np.ndarray:
    """Move lowest-degree vertices so each splittable part meets both sides in >= gamma |P_i|."""
    B = mask.copy()
    for part in P.parts():
        if part.size < 2:
            continue
        f = max(1, math.ceil(gamma * part.size))
        if 2 * f > part.size:
            f = part.size // 2
        inside = part[B[part]]
        outside = part[~B[part]]
        if inside.size < f:
            need = f - inside.size
            cand = outside[np.lexsort((outside, deg[outside]))][:need]
            B[cand] = True
        elif outside.size < f:
            need = f - outside.size
            cand = inside[np.lexsort((inside, deg[inside]))][:need]
            B[cand] = False
    return B


def _equalize(P: Partition, K: int, rng) -> tuple[Partition, int]:
    """Cut each part into whole pieces of size ~n/K; leftovers are pooled and spread at random."""
    n = P.n
    sizes = np.full(K, n // K)
    sizes[: n % K] += 1
    rng_order = rng.permutation(K)
    sizes = sizes[rng_order]
    lab = np.full(n, -1, dtype=np.int64)
    slot = 0
    leftovers = []
    for part in P.parts():
        perm = part[rng.permutation(part.size)]
        pos = 0
        while slot < K and perm.size - pos >= sizes[slot]:
            lab[perm[pos:pos + sizes[slot]]] = slot
            pos += sizes[slot]
            slot += 1
        leftovers.append(perm[pos:])
    pool = np.concatenate(leftovers) if leftovers else np.zeros(0, dtype=np.int64)
    pool = pool[rng.permutation(pool.size)]
    pos = 0
    for s in range(slot, K):
        lab[pool[pos:pos + sizes[s]]] = s
        pos += sizes[s]
    assert np.all(lab >= 0)
    return Partition(_relabel(lab)), int(pool.size)


def weak_regular_partition(G: Graph, p: float, eps: float, initial: Partition | None = None,
                           C: float = 2.0, seed=None, restarts: int = 50,
                           final_parts: int | None = None, equalize: bool = True) -> RegularityReport:
    """Refine every part by a large ST witness of kappa_G - G/Pi until none is found.

    Each executed round raises the index by at least (eps/4)^2 (asserted), so at most
    ceil(16 C^2 / eps^2) + 1 rounds run for graphs whose densities stay below C.
    """
    if eps <= 0 or C <= 0 or p <= 0:
        raise DomainError("need eps > 0, C > 0 and p > 0")
    n = G.n
    rng = np.random.default_rng(seed)
    P = initial if initial is not None else Partition.trivial(n)
    if P.n != n:
        raise DomainError("initial partition size mismatch")
    gamma = eps / (100 * C)
    T = math.ceil(16 * C * C / (eps * eps)) + 1
    deg = G.degrees
    energy = [partition_index(G, P, p)]
    rounds, reason, history = 0, "no cut found", []
    if G.m == 0:
        return RegularityReport(P, "weak", eps, 0, energy, [], 0.0,
                                {"round_bound": T, "halt": "empty graph", "gamma": gamma})
    while True:
        if rounds >= T:
            reason = "round bound"
            break
        op = _quotient_operator(G, P, p)
        val, (wS, wT), _, _ = _heuristic_st(op, restarts, rng)
        history.append({"round": rounds, "st_found": val})
        if val <= eps / 2:
            reason = "no cut above eps/2"
            break
        S = _adjust_to_floors(wS > 0, P, gamma, deg)
        B = _adjust_to_floors(wT > 0, P, gamma, deg)
        disc = _st_value(op, S, B)
        if disc < eps / 4:
            reason = "adjusted cut below eps/4"
            break
        # every part splits by membership in S and T, so 1_S x 1_B is a step function of the new partition
        newP = Partition(_relabel(4 * P.labels + 2 * S.astype(np.int64) + B.astype(np.int64)))
        new_e = partition_index(G, newP, p)
        assert new_e - energy[-1] >= (eps / 4) ** 2 - 1e-12, "energy increment violated"
        P = newP
        energy.append(new_e)
        rounds += 1
        history[-1].update({"adjusted": disc, "parts": P.k})
    assert rounds <= T
    refined = P
    info = {"round_bound": T, "halt": reason, "gamma": gamma, "history": history,
            "parts_before_equalize": refined.k}
    if equalize and n > 0:
        K = final_parts or min(n, refined.k * math.ceil(4 / eps))
        P, moved = _equalize(refined, K, rng)
        info.update({"final_parts": K, "moved_vertices": moved,
                     "certificate_before_equalize": cut_certificate(G, refined, p, restarts, seed)})
    cert = cut_certificate(G, P, p, restarts, seed)
    return RegularityReport(P, "weak", eps, rounds, energy, [], cert, info)


# ---------------------------------------------------------------------------
# pair regularity

@dataclass
class PairCheck:
    passed: bool
    deviation: float
    density: float
    witness_A: np.ndarray | None = None
    witness_B: np.ndarray | None = None
    witness_density: float | None = None
    alternatives: list = field(default_factory=list)  # further violating (A', B', gap), strongest first

    def to_dict(self) -> dict:
        return {"pass": self.passed, "deviation": self.deviation, "density": self.density,
                "witness_A": None if self.witness_A is None else self.witness_A.tolist(),
                "witness_B": None if self.witness_B is None else self.witness_B.tolist(),
                "witness_density": self.witness_density,
                "alternatives": [[a.tolist(), b.tolist(), g] for a, b, g in self.alternatives]}


def _topk(scores: np.ndarray, k: int, tiebreak: np.ndarray) -> np.ndarray:
    order = np.lexsort((tiebreak, -scores))
    return order[:k]


def _alternate(M, excess, a, b, s, jb, mode, maxit=30):
    """One alternating run. mode 'floor': top-a / top-b rows; mode 'excess': all positive-excess rows."""
    ia = None
    for _ in range(maxit):
        if mode == "floor":
            ia = _topk(s * M[:, jb].sum(axis=1), a, np.arange(M.shape[0]))
            jb_new = _topk(s * M[ia].sum(axis=0), b, np.arange(M.shape[1]))
        else:
            sc = s * excess[:, jb].sum(axis=1)
            ia = np.flatnonzero(sc > 0)
            if ia.size < a:
                ia = _topk(sc, a, np.arange(M.shape[0]))
            sc = s * excess[ia].sum(axis=0)
            jb_new = np.flatnonzero(sc > 0)
            if jb_new.size < b:
                jb_new = _topk(sc, b, np.arange(M.shape[1]))
        if jb_new.size == jb.size and np.array_equal(np.sort(jb_new), np.sort(jb)):
            break
        jb = jb_new
    return ia, jb


def is_regular_pair(G: Graph, A, B, eps: float, p: float, witness_budget: int = 8, seed=None,
                    M: np.ndarray | None = None) -> PairCheck:
    """Search for A' in A, B' in B with |A'| >= eps|A|, |B'| >= eps|B| and a density gap > eps.

    Two alternating searches per restart and sign: one at the size floors (largest density gap)
    and one taking every row/column of positive excess (largest edge discrepancy). Among the
    violating candidates the one with the largest discrepancy |A'||B'| * gap is reported.
    """
    A = np.unique(np.asarray(A, dtype=np.int64))
    B = np.unique(np.asarray(B, dtype=np.int64))
    if eps <= 0 or p <= 0:
        raise DomainError("need eps > 0 and p > 0")
    if eps * A.size < 1 or eps * B.size < 1:
        raise DomainError("size floors eps|A|, eps|B| must be >= 1")
    a, b = math.ceil(eps * A.size - 1e-12), math.ceil(eps * B.size - 1e-12)
    if M is None:
        M = G.sparse(np.float64)[A][:, B].toarray()
    d = M.sum() / (p * A.size * B.size)
    excess = M - d * p
    rng = np.random.default_rng(seed)
    best_gap, found = 0.0, {}
    for r in range(max(1, witness_budget)):
        s = 1.0 if r % 2 == 0 else -1.0
        start = rng.choice(B.size, size=b, replace=False)
        for mode in ("floor", "excess"):
            ia, jb = _alternate(M, excess, a, b, s, start, mode)
            ia, jb = np.sort(ia), np.sort(jb)
            gap = abs(M[np.ix_(ia, jb)].sum() / (p * ia.size * jb.size) - d)
            best_gap = max(best_gap, gap)
            if gap > eps:
                found[(ia.tobytes(), jb.tobytes())] = (gap * ia.size * jb.size, gap, ia, jb)
    if not found:
        return PairCheck(True, float(best_gap), float(d))
    d_exact = edges_between(G, A, B) / (p * A.size * B.size)
    verified = []
    for disc, gap, ia, jb in sorted(found.values(), key=lambda t: -t[0]):
        WA, WB = A[ia], B[jb]
        exact = abs(edges_between(G, WA, WB) / (p * WA.size * WB.size) - d_exact)
        assert abs(exact - gap) < 1e-9 and exact > eps
        verified.append((WA, WB, float(exact)))
    WA, WB, gap = verified[0]
    dens = edges_between(G, WA, WB) / (p * WA.size * WB.size)
    return PairCheck(False, gap, float(d_exact), WA, WB, float(dens), verified[1:])


def _splits_differ(W: np.ndarray, V: np.ndarray, part: np.ndarray, tol: float = 0.1) -> bool:
    """False when W is within tol*|part| vertices of V or of its complement inside the part."""
    x = np.setxor1d(W, V, assume_unique=True).size
    return min(x, part.size - x) >= tol * part.size


def _split_with_atoms(part: np.ndarray, atoms_key: np.ndarray, f: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Cut a part into about f pieces, each inside one atom.

    With target size s = |part| / f, an atom of size a becomes round(a / s) pieces as equal as
    possible, so it is an exact union of pieces. Atoms smaller than s / 2 are dust and are
    returned separately. With no piece at all, the whole part is one piece.
    """
    target = part.size / f
    order = np.lexsort((part, atoms_key))
    part, atoms_key = part[order], atoms_key[order]
    atoms = np.split(part, np.flatnonzero(np.diff(atoms_key)) + 1)
    pieces, dust = [], []
    for at in atoms:
        c = int(round(at.size / target))
        if c == 0:
            dust.append(at)
        else:
            pieces.extend(np.array_split(at, c))
    dust = np.concatenate(dust) if dust else np.zeros(0, dtype=np.int64)
    if not pieces:
        return [part], dust
    return pieces, dust


def _place_dust(Asp, lab: np.ndarray, owner: np.ndarray, dust: np.ndarray, dust_part: np.ndarray,
                sizes: np.ndarray) -> np.ndarray:
    """Give each dust vertex the piece of its own part with the nearest density profile.

    A vertex's profile is its edge density to every piece; a piece's profile is the mean over
    its members. Dust vertices are labelled -1 in lab on entry.
    """
    K = sizes.size
    inside = lab >= 0
    U = sp.csr_array((np.ones(int(inside.sum())), (np.flatnonzero(inside), lab[inside])),
                     shape=(lab.size, K))
    X = (Asp @ U).toarray() / sizes[None, :]
    prof = (U.T @ X) / sizes[:, None]
    out = lab.copy()
    for v, part_id in zip(dust, dust_part):
        cand = np.flatnonzero(owner == part_id)
        d = ((prof[cand] - X[v]) ** 2).sum(axis=1)
        out[v] = cand[int(np.argmin(d))]
    return out


def strong_regular_partition(G: Graph, p: float, eps: float, initial: Partition | None = None,
                             C: float = 2.0, seed=None, witness_budget: int = 16,
                             max_factor: int = 64, k0: int = 3, pieces_per_part: int | None = None,
                             witness_sets_per_part: int = 3, mix_tolerance: float | None = None,
                             max_rounds: int | None = None) -> RegularityReport:
    """Refine by the atoms of irregular-pair witnesses, cutting every atom into near-equal pieces.

    Halts once at most eps * C(k, 2) pairs have a found witness. A round is executed only if
    the index rises by at least eps^5 / 20. The piece scale f (about f pieces per part) is the
    smallest one meeting the increment whose dust (vertices of atoms too small to form a piece)
    stays within mix_tolerance * n; failing that, the one with the least dust. Dust vertices join
    the piece of their own part with the nearest density profile.
    """
    if eps <= 0 or C <= 0 or p <= 0:
        raise DomainError("need eps > 0, C > 0 and p > 0")
    n = G.n
    rng = np.random.default_rng(seed)
    P = initial if initial is not None else Partition.random_balanced(n, min(k0, n), rng)
    T = math.ceil(20 * C * C / eps ** 5) + 1
    if mix_tolerance is None:
        mix_tolerance = eps / 4
    if max_rounds is not None:
        T = min(T, max_rounds)
    energy = [partition_index(G, P, p)]
    rounds, reason, history = 0, None, []
    witnesses = []
    Asp = G.sparse(np.float64)
    while True:
        parts = P.parts()
        k = len(parts)
        witnesses = []
        if all(pt.size * eps >= 1 for pt in parts):
            for i in range(k):
                rows = Asp[parts[i]]
                for j in range(i + 1, k):
                    M = rows[:, parts[j]].toarray()
                    chk = is_regular_pair(G, parts[i], parts[j], eps, p, witness_budget,
                                          rng.integers(2 ** 63), M=M)
                    if not chk.passed:
                        witnesses.append((i, j, chk))
        else:
            reason = "parts below size floor"
            break
        if len(witnesses) <= eps * k * (k - 1) / 2:
            reason = "regular"
            break
        if rounds >= T:
            reason = "round bound"
            break
        # atoms: each part is cut by its strongest distinct witness sets (largest normalized
        # discrepancy); a set inducing nearly the same split as a chosen one is skipped
        per_part = [[] for _ in range(k)]
        for i, j, chk in witnesses:
            norm = parts[i].size * parts[j].size
            for WA, WB, gap in [(chk.witness_A, chk.witness_B, chk.deviation)] + chk.alternatives:
                disc = gap * WA.size * WB.size / norm
                per_part[i].append((disc, WA))
                per_part[j].append((disc, WB))
        atom_key = np.zeros(n, dtype=np.int64)
        for pt, lst in zip(parts, per_part):
            lst.sort(key=lambda t: -t[0])
            chosen = []
            for _, W in lst:
                if len(chosen) >= witness_sets_per_part:
                    break
                if all(_splits_differ(W, V, pt) for V in chosen):
                    chosen.append(W)
            for b, W in enumerate(chosen):
                atom_key[W] += 1 << b
        # piece scale: smallest f reaching the increment with little dust
        accepted, fallback, tried = None, None, []
        f_cap = min(max_factor, n // max(1, math.ceil(1 / eps)) // k)
        f_range = range(2, f_cap + 1) if pieces_per_part is None else \
            [f for f in (pieces_per_part * 2 ** i for i in range(12)) if f <= f_cap]
        for f in f_range:
            lab = np.full(n, -1, dtype=np.int64)
            owner, dust, dust_part = [], [], []
            for pi, pt in enumerate(parts):
                pieces, d = _split_with_atoms(pt, atom_key[pt], f)
                for piece in pieces:
                    lab[piece] = len(owner)
                    owner.append(pi)
                dust.append(d)
                dust_part.append(np.full(d.size, pi))
            dust, dust_part = np.concatenate(dust), np.concatenate(dust_part)
            mixed = int(dust.size)
            if mixed:
                sizes = np.bincount(lab[lab >= 0], minlength=len(owner)).astype(np.float64)
                lab = _place_dust(Asp, lab, np.array(owner), dust, dust_part, sizes)
            cand = Partition(lab)
            e_new = partition_index(G, cand, p)
            tried.append((f, int(mixed)))
            if e_new - energy[-1] < eps ** 5 / 20:
                continue
            if mixed <= mix_tolerance * n or pieces_per_part is not None:
                accepted = (cand, e_new, f, mixed)
                break
            if fallback is None or mixed < fallback[3]:
                fallback = (cand, e_new, f, mixed)
        accepted = accepted or fallback
        if accepted is None:
            reason = "increment not reached within size limits"
            break
        P, e_new, f, mixed = accepted
        history.append({"round": rounds, "pieces_per_part": f, "dust_vertices": int(mixed), "tried": tried,
                        "irregular_found": len(witnesses)})
        energy.append(e_new)
        rounds += 1
    assert rounds <= T
    irr = [{"i": i, "j": j, "deviation": c.deviation, "A": c.witness_A.tolist(),
            "B": c.witness_B.tolist()} for i, j, c in witnesses]
    cert = cut_certificate(G, P, p, 50, seed) if G.m else 0.0
    return RegularityReport(P, "strong", eps, rounds, energy, irr, cert,
                            {"round_bound": T, "halt": reason, "irregular_found": len(witnesses),
                             "allowed": eps * P.k * (P.k - 1) / 2, "history": history})


def match_to_kernel(Q: StepKernel, kappa: StepKernel, exhaustive_limit: int = 200000
                    ) -> tuple[float, np.ndarray]:
    """Assign each quotient block a kernel block minimizing the max entrywise deviation.

    Exhaustive when k^q <= exhaustive_limit. Otherwise greedy assignments grown from (part, block) seeds
    (the eight largest-diagonal parts), each polished by single-part moves scored by (max deviation, squared deviation).
    """
    q, k = Q.k, kappa.k
    V, W = Q.values, kappa.values

    def score(tau):
        D = V - W[np.ix_(tau, tau)]
        return float(np.abs(D).max()), float((D * D).sum())

    if k ** q <= exhaustive_limit:
        best = (math.inf, None)
        for tau in itertools.product(range(k), repeat=q):
            t = np.array(tau)
            s = score(t)[0]
            if s < best[0]:
                best = (s, t)
        return best
    order = np.argsort(-np.diag(V), kind="stable")
    best = ((math.inf, math.inf), None)
    for i0 in order[:8]:
        for a0 in range(k):
            tau = np.full(q, -1)
            tau[i0] = a0
            done = [i0]
            for i in order:
                if i == i0:
                    continue
                # deviation against the parts placed so far, including the diagonal entry
                errs = [max(abs(V[i, i] - W[a, a]), np.abs(V[i, done] - W[a, tau[done]]).max())
                        for a in range(k)]
                tau[i] = int(np.argmin(errs))
                done.append(i)
            cur = score(tau)
            improved = True
            while improved:
                improved = False
                for i in range(q):
                    for a in range(k):
                        if a == tau[i]:
                            continue
                        t = tau.copy()
                        t[i] = a
                        s = score(t)
                        if s < cur:
                            tau, cur, improved = t, s, True
            if cur < best[0]:
                best = (cur, tau)
    return best[0][0], best[1]
