"""Step kernels on [0,1]^2, pattern graphs (motifs) and exact motif densities."""
from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ConfigError, DomainError

MAX_MOTIF_VERTICES = 10


# ---------------------------------------------------------------------------
# motifs

@dataclass(frozen=True)
class Motif:
    """Loopless pattern graph on vertices 0..k-1; repeated edges need ``multigraph=True``."""

    k: int
    edges: tuple
    multigraph: bool = False
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        es = tuple(sorted((min(u, v), max(u, v)) for u, v in self.edges))
        for u, v in es:
            if u == v:
                raise DomainError("motifs must be loopless")
            if u < 0 or v >= self.k:
                raise DomainError("motif edge outside vertex range")
        if not self.multigraph and len(set(es)) != len(es):
            raise DomainError("repeated edge in a motif not flagged as multigraph")
        object.__setattr__(self, "edges", es)

    @property
    def e(self) -> int:
        return len(self.edges)

    @property
    def label(self) -> str:
        return self.name or f"F{self.k}:{list(self.edges)}"

    def simple(self) -> "Motif":
        return Motif(self.k, tuple(sorted(set(self.edges))), False, self.name)

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.k, dtype=np.int64)
        for u, v in self.edges:
            d[u] += 1
            d[v] += 1
        return d

    def neighbors(self) -> list[set]:
        nb = [set() for _ in range(self.k)]
        for u, v in self.edges:
            nb[u].add(v)
            nb[v].add(u)
        return nb

    def components(self) -> list[list[int]]:
        nb = self.neighbors()
        seen, out = set(), []
        for s in range(self.k):
            if s in seen:
                continue
            comp, stack = [], [s]
            seen.add(s)
            while stack:
                x = stack.pop()
                comp.append(x)
                for y in nb[x]:
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
            out.append(sorted(comp))
        return out

    def is_connected(self) -> bool:
        return self.k > 0 and len(self.components()) == 1

    def is_tree(self) -> bool:
        s = self.simple()
        return s.is_connected() and s.e == self.k - 1 and not self.multigraph_edges()

    def multigraph_edges(self) -> bool:
        return len(set(self.edges)) != len(self.edges)

    def is_bipartite(self) -> bool:
        nb = self.neighbors()
        col = [-1] * self.k
        for s in range(self.k):
            if col[s] >= 0:
                continue
            col[s] = 0
            stack = [s]
            while stack:
                x = stack.pop()
                for y in nb[x]:
                    if col[y] < 0:
                        col[y] = 1 - col[x]
                        stack.append(y)
                    elif col[y] == col[x]:
                        return False
        return True

    def sub(self, vertices: Sequence[int]) -> "Motif":
        """Induced sub-motif, relabelled in the given order."""
        pos = {v: i for i, v in enumerate(vertices)}
        es = tuple((pos[u], pos[v]) for u, v in self.edges if u in pos and v in pos)
        return Motif(len(vertices), es, self.multigraph)

    def relabel(self, perm: Sequence[int]) -> "Motif":
        return Motif(self.k, tuple((perm[u], perm[v]) for u, v in self.edges), self.multigraph, self.name)

    def subdivide(self, t: int) -> "Motif":
        """Replace every edge (with multiplicity) by a path with t edges."""
        if t < 1:
            raise DomainError("subdivision length must be >= 1")
        if t == 1:
            return self
        k = self.k
        es = []
        for u, v in self.edges:
            chain = [u] + list(range(k, k + t - 1)) + [v]
            k += t - 1
            es.extend(zip(chain[:-1], chain[1:]))
        return Motif(k, tuple(es), False, f"{self.label}_sub{t}")

    def canonical_key(self) -> tuple:
        return _canonical_key(self.k, self.edges)

    def __str__(self) -> str:
        return self.label


@lru_cache(maxsize=4096)
def _canonical_key(k: int, edges: tuple) -> tuple:
    """Lexicographically least edge list over degree-respecting relabellings."""
    deg = [0] * k
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    nbdeg = [sorted(deg[w] for u, v in edges for w in ((v,) if u == x else (u,) if v == x else ()))
             for x in range(k)]
    classes: dict = {}
    for x in range(k):
        classes.setdefault((deg[x], tuple(nbdeg[x])), []).append(x)
    order = sorted(classes)
    groups = [classes[c] for c in order]
    if math.prod(math.factorial(len(g)) for g in groups) > 200000:
        raise CapacityError("motif too symmetric for brute-force canonical form")
    best = None
    for choice in itertools.product(*(itertools.permutations(g) for g in groups)):
        perm = [0] * k
        pos = 0
        for grp in choice:
            for x in grp:
                perm[x] = pos
                pos += 1
        key = tuple(sorted((min(perm[u], perm[v]), max(perm[u], perm[v])) for u, v in edges))
        if best is None or key < best:
            best = key
    return (k, tuple(order), best)


def edge() -> Motif:
    return Motif(2, ((0, 1),), name="K2")


def double_edge() -> Motif:
    return Motif(2, ((0, 1), (0, 1)), multigraph=True, name="K2x2")


def empty_motif(k: int) -> Motif:
    return Motif(k, (), name=f"E{k}")


def cycle(k: int) -> Motif:
    if k < 3:
        raise DomainError("cycles need at least 3 vertices")
    return Motif(k, tuple((i, (i + 1) % k) for i in range(k)), name=f"C{k}")


def path(ell: int) -> Motif:
    """Path with ell edges."""
    return Motif(ell + 1, tuple((i, i + 1) for i in range(ell)), name=f"P{ell}")


def complete(k: int) -> Motif:
    return Motif(k, tuple(itertools.combinations(range(k), 2)), name=f"K{k}")


def complete_bipartite(s: int, t: int) -> Motif:
    es = tuple((i, s + j) for i in range(s) for j in range(t))
    return Motif(s + t, es, name=f"K{s},{t}")


def star(d: int) -> Motif:
    m = complete_bipartite(1, d)
    return Motif(m.k, m.edges, name=f"Star{d}")


def theta(k: int, ell: int) -> Motif:
    """k internally disjoint paths of length ell between vertices 0 and 1."""
    if k < 1 or ell < 1:
        raise DomainError("theta graph needs k, ell >= 1")
    es, nxt = [], 2
    for _ in range(k):
        chain = [0] + list(range(nxt, nxt + ell - 1)) + [1]
        nxt += ell - 1
        es.extend(zip(chain[:-1], chain[1:]))
    return Motif(nxt, tuple(es), multigraph=(ell == 1 and k > 1), name=f"Theta{k},{ell}")


def tree(parents: Sequence[int]) -> Motif:
    """Vertex i+1 hangs off parents[i]; vertex 0 is the root. A leading -1 is accepted."""
    ps = list(parents)
    if ps and ps[0] == -1:
        ps = ps[1:]
    es = []
    for i, par in enumerate(ps):
        if not (0 <= par <= i):
            raise DomainError("tree parent must precede the child")
        es.append((par, i + 1))
    return Motif(len(ps) + 1, tuple(es), name=f"Tree{ps}")


def triangle_multigraph() -> Motif:
    return Motif(3, ((0, 1), (1, 2), (0, 2)), multigraph=True, name="C3m")


_NAMED = [
    (re.compile(r"K(\d+),(\d+)$"), lambda a, b: complete_bipartite(int(a), int(b))),
    (re.compile(r"K(\d+)$"), lambda a: complete(int(a))),
    (re.compile(r"C(\d+)$"), lambda a: cycle(int(a))),
    (re.compile(r"P(\d+)$"), lambda a: path(int(a))),
    (re.compile(r"Star(\d+)$"), lambda a: star(int(a))),
    (re.compile(r"Theta(\d+),(\d+)$"), lambda a, b: theta(int(a), int(b))),
    (re.compile(r"E(\d+)$"), lambda a: empty_motif(int(a))),
]


def parse_motif(text: str) -> Motif:
    """Parse the motif mini-language.

    Named forms: ``K2``, ``K4``, ``C5``, ``P3``, ``K2,3``, ``Star4``, ``Theta3,2``,
    ``Tree[0,0,1]``, ``E3``. Inline edge lists: ``{0-1,1-2,2-0}``. A ``multi:`` prefix
    allows repeated edges, e.g. ``multi:{0-1,0-1}``.
    """
    s = text.strip().replace(" ", "")
    multi = False
    if s.startswith("multi:"):
        multi, s = True, s[6:]
    try:
        if s.startswith("{") and s.endswith("}"):
            body = s[1:-1]
            pairs = [tuple(int(x) for x in tok.split("-")) for tok in body.split(",") if tok]
            if any(len(pp) != 2 for pp in pairs):
                raise ValueError
            k = 1 + max((max(pp) for pp in pairs), default=-1)
            return Motif(k, tuple(pairs), multigraph=multi, name=text.strip())
        m = re.fullmatch(r"Tree\[([-\d,]*)\]", s)
        if m:
            ps = [int(x) for x in m.group(1).split(",") if x]
            t = tree(ps)
            return Motif(t.k, t.edges, multi, s)
        for rx, build in _NAMED:
            m = rx.fullmatch(s)
            if m:
                f = build(*m.groups())
                return Motif(f.k, f.edges, multi or f.multigraph, s if not multi else f"multi:{s}")
    except DomainError as exc:
        raise ConfigError(f"bad motif {text!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad motif {text!r}") from exc
    raise ConfigError(f"unknown motif {text!r}")


def glue_copies(F: Motif, shared: int, r: int) -> Motif:
    """r copies of F identified along the vertices 0..shared-1."""
    if r < 1:
        raise DomainError("need at least one copy")
    k = shared
    es = [(u, v) for u, v in F.edges if u < shared and v < shared]
    for _ in range(r):
        mp = {x: x for x in range(shared)}
        for x in range(shared, F.k):
            mp[x] = k
            k += 1
        es.extend((mp[u], mp[v]) for u, v in F.edges if not (u < shared and v < shared))
    return Motif(k, tuple(es), F.multigraph, f"{r}x{F.label}/{shared}")


def simple_motifs(k: int, connected: bool = True) -> list[Motif]:
    """All simple graphs on k vertices up to isomorphism (optionally only connected ones)."""
    if k < 1:
        raise DomainError("k must be >= 1")
    if k > 6:
        raise CapacityError("isomorphism classes are enumerated for k <= 6 only")
    pairs = list(itertools.combinations(range(k), 2))
    seen, out = set(), []
    for mask in range(1 << len(pairs)):
        es = tuple(pr for i, pr in enumerate(pairs) if mask >> i & 1)
        F = Motif(k, es)
        if connected and not F.is_connected():
            continue
        key = F.canonical_key()
        if key not in seen:
            seen.add(key)
            out.append(F)
    return out


# ---------------------------------------------------------------------------
# step kernels

class StepKernel:
    """Symmetric nonnegative function constant on rectangles of consecutive intervals.

    Block a is the interval of length ``measures[a]`` that follows block a-1.
    """

    def __init__(self, measures, values, meta: dict | None = None, signed: bool = False):
        mu = np.array(measures, dtype=np.float64).ravel()
        W = np.array(values, dtype=np.float64)
        if W.ndim != 2 or W.shape != (mu.size, mu.size):
            raise DomainError("values must be a k x k matrix matching the measures")
        if mu.size == 0 or np.any(mu <= 0):
            raise DomainError("block measures must be positive")
        if abs(mu.sum() - 1.0) > 1e-12:
            raise DomainError(f"block measures sum to {mu.sum()!r}, not 1")
        if np.max(np.abs(W - W.T), initial=0.0) > 1e-9:
            raise DomainError("kernel values must be symmetric")
        W = (W + W.T) / 2
        if not signed and np.any(W < 0):
            raise DomainError("kernel values must be nonnegative")
        mu.setflags(write=False)
        W.setflags(write=False)
        self.measures = mu
        self.values = W
        self.meta = dict(meta or {})
        self.signed = signed

    @property
    def k(self) -> int:
        return self.measures.size

    @property
    def boundaries(self) -> np.ndarray:
        b = np.concatenate([[0.0], np.cumsum(self.measures)])
        b[-1] = 1.0
        return b

    def integral(self) -> float:
        mu = self.measures
        return float(mu @ self.values @ mu)

    def max_value(self) -> float:
        return float(self.values.max())

    def l2_squared(self) -> float:
        mu = self.measures
        return float(mu @ (self.values ** 2) @ mu)

    def permute(self, perm: Sequence[int]) -> "StepKernel":
        """New kernel whose block i is old block perm[i]."""
        perm = np.asarray(perm)
        return StepKernel(self.measures[perm], self.values[np.ix_(perm, perm)], self.meta, self.signed)

    def split_block(self, a: int, parts: int = 2) -> "StepKernel":
        idx = np.concatenate([np.arange(a), np.full(parts, a), np.arange(a + 1, self.k)])
        mu = self.measures[idx].copy()
        mu[a:a + parts] /= parts
        return StepKernel(mu, self.values[np.ix_(idx, idx)], self.meta, self.signed)

    def to_dict(self) -> dict:
        out = {"measures": self.measures.tolist(), "values": self.values.tolist()}
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "StepKernel":
        return cls(d["measures"], d["values"], d.get("meta"))

    def __repr__(self) -> str:
        return f"StepKernel(k={self.k})"


def load_kernel(path) -> StepKernel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return StepKernel.from_dict(d)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read kernel {path}: {exc}") from exc


def save_kernel(kappa: StepKernel, path) -> None:
    Path(path).write_text(json.dumps(kappa.to_dict()), encoding="utf-8")


def uniform_kernel(values, meta=None, signed=False) -> StepKernel:
    W = np.asarray(values, dtype=np.float64)
    return StepKernel(np.full(W.shape[0], 1.0 / W.shape[0]), W, meta, signed)


def common_refinement(k1: StepKernel, k2: StepKernel):
    """Measures of the common refinement and both value matrices on it."""
    b = np.union1d(k1.boundaries, k2.boundaries)
    # merge boundaries closer than float noise
    b = b[np.concatenate([[True], np.diff(b) > 1e-15])]
    b[-1] = 1.0
    mids = (b[:-1] + b[1:]) / 2
    i1 = np.searchsorted(k1.boundaries, mids, side="right") - 1
    i2 = np.searchsorted(k2.boundaries, mids, side="right") - 1
    mu = np.diff(b)
    return mu, k1.values[np.ix_(i1, i1)], k2.values[np.ix_(i2, i2)]


def l1_distance(k1: StepKernel, k2: StepKernel) -> float:
    mu, W1, W2 = common_refinement(k1, k2)
    return float(mu @ np.abs(W1 - W2) @ mu)


def kernel_difference(k1: StepKernel, k2: StepKernel) -> StepKernel:
    mu, W1, W2 = common_refinement(k1, k2)
    mu = mu / mu.sum()
    return StepKernel(mu, W1 - W2, {"difference": True}, signed=True)


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def motif_density(F: Motif, kappa: StepKernel) -> float:
    """Exact s(F, kappa): sum over block assignments of vertex measures times edge values."""
    if F.k > MAX_MOTIF_VERTICES:
        raise CapacityError(f"motif has {F.k} vertices; limit is {MAX_MOTIF_VERTICES}")
    if F.k == 0:
        return 1.0
    ops, subs = [], []
    for v in range(F.k):
        ops.append(kappa.measures)
        subs.append(_LETTERS[v])
    for u, v in F.edges:
        ops.append(kappa.values)
        subs.append(_LETTERS[u] + _LETTERS[v])
    return float(np.einsum(",".join(subs) + "->", *ops, optimize="greedy"))


def path_power(kappa: StepKernel, t: int) -> StepKernel:
    """Kernel whose value at (x, y) is the integral over paths of t steps from x to y."""
    if t < 1:
        raise DomainError("t must be >= 1")
    M = kappa.values
    DM = kappa.measures[:, None] * M
    out = M.copy()
    for _ in range(t - 1):
        out = out @ DM
    return StepKernel(kappa.measures, out, {**kappa.meta, "path_power": t}, kappa.signed)


def average_over_partition(kappa: StepKernel, parts) -> StepKernel:
    """Average kappa over rectangles of a grouping of its blocks.

    ``parts`` is either a label per block or a list of block-index lists.
    """
    k = kappa.k
    if len(parts) and not np.isscalar(parts[0]):
        lab = np.full(k, -1)
        for i, grp in enumerate(parts):
            if len(grp) == 0:
                raise DomainError("empty part")
            lab[np.asarray(grp)] = i
        if np.any(lab < 0):
            raise DomainError("every block must belong to a part")
    else:
        lab = np.asarray(parts, dtype=np.int64)
        if lab.size != k:
            raise DomainError("need one label per block")
    q = int(lab.max()) + 1
    if np.any(np.bincount(lab, minlength=q) == 0):
        raise DomainError("empty part")
    S = np.zeros((q, k))
    S[lab, np.arange(k)] = kappa.measures
    nu = S.sum(axis=1)
    mass = S @ kappa.values @ S.T
    return StepKernel(nu, mass / np.outer(nu, nu), {"averaged": True}, kappa.signed)


def dyadic_approximation(kappa: StepKernel, level: int) -> StepKernel:
    """Average kappa over the 2^level x 2^level uniform grid."""
    if level < 0:
        raise DomainError("level must be >= 0")
    if level > 14:
        raise CapacityError("dyadic level above 14")
    m = 2 ** level
    cells = np.linspace(0.0, 1.0, m + 1)
    b = kappa.boundaries
    lo = np.maximum(cells[:-1, None], b[None, :-1])
    hi = np.minimum(cells[1:, None], b[None, 1:])
    O = np.clip(hi - lo, 0.0, None)
    V = (O @ kappa.values @ O.T) * (m * m)
    return StepKernel(np.full(m, 1.0 / m), V, {"dyadic_level": level}, kappa.signed)


# ---------------------------------------------------------------------------
# named kernels

def _log_interval_mean(a: float, b: float) -> float:
    g = lambda x: 0.0 if x == 0 else x * (1.0 - math.log(x))
    return (g(b) - g(a)) / (b - a)


def named_kernel(name: str, **params) -> StepKernel:
    """Construct one of the catalogued kernels.

    constant(c), chessboard1, chessboard2, rank1_log(depth), kappa_D(D, R),
    random_dyadic(R, seed). Truncation depths are stored in ``meta``.
    """
    if name == "constant":
        c = float(params.get("c", 1.0))
        return StepKernel([1.0], [[c]], {"name": name, "c": c})
    if name == "chessboard1":
        return StepKernel([0.5, 0.5], [[1, 0], [0, 1]], {"name": name})
    if name == "chessboard2":
        return StepKernel([0.5, 0.5], [[0, 1], [1, 0]], {"name": name})
    if name == "rank1_log":
        R = int(params.get("depth", params.get("R", 8)))
        if R < 1:
            raise DomainError("depth must be >= 1")
        edges = [0.0] + [2.0 ** -i for i in range(R, 0, -1)] + [1.0]
        f = np.array([_log_interval_mean(a, b) for a, b in zip(edges[:-1], edges[1:])])
        mu = np.diff(edges)
        return StepKernel(mu, np.outer(f, f), {"name": name, "depth": R, "f": f.tolist()})
    if name == "kappa_D":
        D = float(params.get("D", 3))
        R = int(params.get("R", 6))
        if R < 1 or D <= 0:
            raise DomainError("kappa_D needs D > 0 and R >= 1")
        mu = [2.0 ** -i for i in range(1, R + 1)] + [2.0 ** -R]
        diag = [i ** (2.0 / D) for i in range(1, R + 1)] + [0.0]
        return StepKernel(mu, np.diag(diag), {"name": name, "D": D, "R": R})
    if name == "random_dyadic":
        R = int(params.get("R", 3))
        if R < 0:
            raise DomainError("R must be >= 0")
        if R > 3:
            raise CapacityError("random_dyadic beyond R=3 needs 2^16 blocks")
        rng = np.random.default_rng(params.get("seed"))
        m = 2 ** (2 ** R)
        total = np.zeros((m, m))
        for r in range(R + 1):
            g = 2 ** (2 ** r)
            on = rng.random((g, g)) < 2.0 ** (-2 * r)
            on = np.triu(on) | np.triu(on, 1).T
            Z = on * float(2 ** r)
            f = m // g
            total += np.repeat(np.repeat(Z, f, axis=0), f, axis=1)
        return StepKernel(np.full(m, 1.0 / m), total,
                          {"name": name, "R": R, "seed": params.get("seed")})
    raise DomainError(f"unknown kernel {name!r}")


def rank1_kernel(measures, f) -> StepKernel:
    f = np.asarray(f, dtype=np.float64)
    return StepKernel(measures, np.outer(f, f), {"rank1": True})


# ---------------------------------------------------------------------------
# signatures

@dataclass
class MomentSignature:
    spectrum: np.ndarray
    cycle_moments: dict
    count_table: dict

    def agrees(self, other: "MomentSignature", tol: float = 1e-9) -> bool:
        if self.cycle_moments.keys() != other.cycle_moments.keys():
            return False
        if any(abs(self.cycle_moments[c] - other.cycle_moments[c]) > tol for c in self.cycle_moments):
            return False
        common = self.count_table.keys() & other.count_table.keys()
        if any(abs(self.count_table[c] - other.count_table[c]) > tol for c in common):
            return False
        a = self.spectrum[np.abs(self.spectrum) > tol]
        b = other.spectrum[np.abs(other.spectrum) > tol]
        return a.size == b.size and bool(np.allclose(a, b, atol=tol))


def moment_signature(kappa: StepKernel, max_cycle: int = 6,
                     family: Iterable[Motif] = ()) -> MomentSignature:
    """Spectrum of the kernel operator, cycle densities and a table of motif densities.

    Equal signatures are necessary for equivalence; a difference certifies non-equivalence.
    """
    r = np.sqrt(kappa.measures)
    S = r[:, None] * kappa.values * r[None, :]
    spec = np.sort(np.linalg.eigvalsh(S))[::-1]
    WD = kappa.values * kappa.measures[None, :]
    cyc, P = {}, WD @ WD
    for k in range(3, max_cycle + 1):
        P = P @ WD
        cyc[k] = float(np.trace(P))
    table = {F.label: motif_density(F, kappa) for F in family}
    return MomentSignature(spec, cyc, table)
