"""Simple undirected graphs on vertices 0..n-1 and the density bookkeeping built on them.

Edge densities use ordered pairs throughout: ``e(A, B)`` counts pairs (i, j) with
i in A, j in B and ij an edge, so ``e(A, A)`` is twice the number of edges inside A.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DomainError


class Graph:
    """Immutable simple graph stored as sorted CSR neighbour lists."""

    __slots__ = ("n", "indptr", "indices", "_cache")

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)
        self._cache: dict = {}

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        """Build from an iterable or (m, 2) array of pairs. Loops are rejected, repeats dropped."""
        n = int(n)
        if n < 0:
            raise DomainError("vertex count must be nonnegative")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise DomainError("edge endpoint outside [0, n)")
        if np.any(e[:, 0] == e[:, 1]):
            raise DomainError("self-loops are not allowed")
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        keys = np.unique(src * max(n, 1) + dst)
        rows = keys // max(n, 1)
        cols = keys % max(n, 1)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols)

    @classmethod
    def from_dense(cls, adj: np.ndarray) -> "Graph":
        a = np.asarray(adj)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError("adjacency must be square")
        if np.any(np.diag(a)):
            raise DomainError("self-loops are not allowed")
        if np.any((a != 0) != (a.T != 0)):
            raise DomainError("adjacency must be symmetric")
        u, v = np.nonzero(np.triu(a != 0, 1))
        return cls.from_edges(a.shape[0], np.stack([u, v], axis=1))

    # basic views
    @property
    def m(self) -> int:
        return int(self.indices.size // 2)

    @property
    def adjacency(self) -> list[np.ndarray]:
        return [self.indices[self.indptr[v]:self.indptr[v + 1]] for v in range(self.n)]

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @property
    def degrees(self) -> np.ndarray:
        d = self._cache.get("deg")
        if d is None:
            d = np.diff(self.indptr)
            self._cache["deg"] = d
        return d

    def edges(self) -> np.ndarray:
        """(m, 2) array of edges with u < v, sorted."""
        rows = np.repeat(np.arange(self.n), self.degrees)
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < nb.size and nb[i] == v)

    def sparse(self, dtype=np.float64) -> sp.csr_array:
        key = ("csr", np.dtype(dtype).str)
        a = self._cache.get(key)
        if a is None:
            data = np.ones(self.indices.size, dtype=dtype)
            a = sp.csr_array((data, self.indices, self.indptr), shape=(self.n, self.n))
            self._cache[key] = a
        return a

    def dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=dtype)
        rows = np.repeat(np.arange(self.n), self.degrees)
        out[rows, self.indices] = 1
        return out

    def neighbor_sets(self) -> list[frozenset]:
        s = self._cache.get("sets")
        if s is None:
            s = [frozenset(self.neighbors(v).tolist()) for v in range(self.n)]
            self._cache["sets"] = s
        return s

    def induced(self, vertices: Sequence[int]) -> "Graph":
        vs = np.asarray(vertices, dtype=np.int64)
        sub = self.sparse()[vs][:, vs]
        u, v = sp.triu(sub, 1).nonzero()
        return Graph.from_edges(len(vs), np.stack([u, v], axis=1))

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Graph in which vertex v is renamed perm[v]."""
        perm = np.asarray(perm, dtype=np.int64)
        e = self.edges()
        return Graph.from_edges(self.n, perm[e]) if e.size else Graph.from_edges(self.n, [])

    def __eq__(self, other) -> bool:
        return (isinstance(other, Graph) and self.n == other.n
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __hash__(self):
        return hash((self.n, self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m})"


def complete_graph(n: int) -> Graph:
    u, v = np.triu_indices(n, 1)
    return Graph.from_edges(n, np.stack([u, v], axis=1))


def empty_graph(n: int) -> Graph:
    return Graph.from_edges(n, [])


def cycle_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(leaves: int) -> Graph:
    return Graph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


@dataclass(frozen=True)
class VertexSetPair:
    A: np.ndarray
    B: np.ndarray

    @classmethod
    def of(cls, A: Iterable[int], B: Iterable[int], n: int | None = None) -> "VertexSetPair":
        a = np.unique(np.asarray(list(A), dtype=np.int64))
        b = np.unique(np.asarray(list(B), dtype=np.int64))
        if n is not None:
            for s in (a, b):
                if s.size and (s[0] < 0 or s[-1] >= n):
                    raise DomainError("vertex outside [0, n)")
        return cls(a, b)


def edges_between(G: Graph, A, B) -> int:
    """Ordered-pair edge count e(A, B)."""
    A = np.asarray(A, dtype=np.int64)
    if A.size == 0:
        return 0
    indB = np.zeros(G.n, dtype=np.int64)
    indB[np.asarray(B, dtype=np.int64)] = 1
    rows = G.sparse()[A]
    return int(indB[rows.indices].sum())


def edge_density_pair(G: Graph, pair: VertexSetPair, p: float) -> float:
    """e(A, B) / (p |A| |B|)."""
    if p <= 0:
        raise DomainError("p must be positive")
    if pair.A.size == 0 or pair.B.size == 0:
        raise DomainError("vertex sets must be nonempty")
    return edges_between(G, pair.A, pair.B) / (p * pair.A.size * pair.B.size)


@dataclass
class DensityScanReport:
    C_bound: float
    worst_pair: tuple
    passed: bool
    eps: float
    strategy: str = ""
    witness_A: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64), repr=False)
    witness_B: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64), repr=False)
    examined: int = 0

    def to_dict(self) -> dict:
        return {"C_bound": self.C_bound, "worst_pair": list(self.worst_pair), "pass": self.passed,
                "eps": self.eps, "strategy": self.strategy, "examined": self.examined}


def _top(scores: np.ndarray, s: int) -> np.ndarray:
    # deterministic tie-break by index
    order = np.lexsort((np.arange(scores.size), -scores))
    return np.sort(order[:s])


def bounded_density_scan(G: Graph, p: float, eps: float, C: float, trials: int = 20,
                         seed=None, sweeps: int = 10) -> DensityScanReport:
    """Search for a pair of vertex sets, both of size at least eps*n, with large p-density.

    Three strategies are tried: all pairs of parts of a degree-sorted equipartition into
    parts of size at least ceil(eps*n), greedy peeling towards a dense set, and random pairs
    improved by alternating best responses. The maximum found is a lower bound for the
    true supremum; ``passed`` means nothing above C + eps was found.
    """
    if not (0 < eps <= 1):
        raise DomainError("eps must lie in (0, 1]")
    if p <= 0:
        raise DomainError("p must be positive")
    n = G.n
    if eps * n < 1:
        raise DomainError("eps*n < 1: no admissible sets")
    s = math.ceil(eps * n)
    rng = np.random.default_rng(seed)
    A = G.sparse()
    best = (-1.0, None, None, "")
    examined = 0

    def consider(d, SA, SB, tag):
        nonlocal best
        if d > best[0]:
            best = (d, SA, SB, tag)

    # (a) degree-sorted equipartition, every part has >= s vertices
    nparts = max(1, n // s)
    order = np.lexsort((np.arange(n), -G.degrees))
    labels = np.empty(n, dtype=np.int64)
    labels[order] = np.minimum(np.arange(n) // s, nparts - 1)
    sizes = np.bincount(labels, minlength=nparts)
    rows = np.repeat(np.arange(n), G.degrees)
    blk = np.zeros((nparts, nparts), dtype=np.int64)
    np.add.at(blk, (labels[rows], labels[G.indices]), 1)
    dens = blk / (p * np.outer(sizes, sizes))
    i, j = np.unravel_index(np.argmax(dens), dens.shape)
    examined += nparts * nparts
    consider(float(dens[i, j]), np.flatnonzero(labels == i), np.flatnonzero(labels == j), "equipartition")

    # (b) batch peeling of low-degree vertices down to size s
    alive = np.ones(n, dtype=bool)
    size = n
    while True:
        ind = alive.astype(np.float64)
        deg_in = A @ ind
        e2 = float(deg_in[alive].sum())
        d = e2 / (p * size * size)
        examined += 1
        consider(d, np.flatnonzero(alive), np.flatnonzero(alive), "peeling")
        if size <= s:
            break
        r = min(size - s, max(1, size // 20))
        cand = np.flatnonzero(alive)
        drop = cand[np.lexsort((cand, deg_in[cand]))[:r]]
        alive[drop] = False
        size -= r

    # (c) random pairs improved by alternating best responses (optimal single-side swaps)
    for _ in range(trials):
        SB = np.sort(rng.choice(n, size=s, replace=False))
        prev = -1.0
        for _ in range(sweeps):
            indB = np.zeros(n)
            indB[SB] = 1
            SA = _top(A @ indB, s)
            indA = np.zeros(n)
            indA[SA] = 1
            sc = A @ indA
            SB = _top(sc, s)
            d = float(sc[SB].sum()) / (p * s * s)
            examined += 1
            if d <= prev + 1e-15:
                break
            prev = d
        consider(prev, SA, SB, "alternating")

    d, SA, SB, tag = best
    return DensityScanReport(C_bound=float(C), worst_pair=(int(SA.size), int(SB.size), float(d)),
                             passed=bool(d <= C + eps), eps=float(eps), strategy=tag,
                             witness_A=SA, witness_B=SB, examined=examined)


def blow_up(G: Graph, r: int) -> Graph:
    """Replace each vertex v by clones v*r .. v*r + r - 1, joined to all clones of neighbours."""
    if r < 1:
        raise DomainError("blow-up factor must be >= 1")
    if r == 1:
        return G
    e = G.edges()
    if e.size == 0:
        return empty_graph(G.n * r)
    off = np.arange(r)
    u = (e[:, 0, None, None] * r + off[None, :, None]).repeat(r, axis=2)
    v = (e[:, 1, None, None] * r + off[None, None, :]).repeat(r, axis=1)
    return Graph.from_edges(G.n * r, np.stack([u.ravel(), v.ravel()], axis=1))


def disjoint_union(G1: Graph, G2: Graph) -> Graph:
    e1, e2 = G1.edges(), G2.edges() + G1.n
    return Graph.from_edges(G1.n + G2.n, np.concatenate([e1, e2]))


def graph_to_kernel(G: Graph, p: float):
    """Step kernel on n equal blocks taking the value 1/p on blocks of edges."""
    from .kernel import StepKernel

    if p <= 0:
        raise DomainError("p must be positive")
    n = G.n
    vals = G.dense(np.float64) / p
    return StepKernel(np.full(n, 1.0 / n), vals, meta={"source": "graph", "p": p})


# edge-list text format

def read_edge_list(path) -> tuple[Graph, list[str]]:
    """Parse ``u v`` lines; ``#`` starts a comment. Returns the graph and the label table."""
    labels: dict[str, int] = {}
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if len(tok) != 2:
                raise ConfigError(f"{path}:{lineno}: expected two tokens, got {len(tok)}")
            if tok[0] == tok[1]:
                raise ConfigError(f"{path}:{lineno}: self-loop on {tok[0]!r}")
            ids = []
            for t in tok:
                if t not in labels:
                    labels[t] = len(labels)
                ids.append(labels[t])
            pairs.append(ids)
    table = [None] * len(labels)
    for k, v in labels.items():
        table[v] = k
    return Graph.from_edges(len(table), pairs), table


def write_edge_list(G: Graph, path, labels: Sequence[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={G.n} m={G.m}\n")
        for u, v in G.edges():
            if labels is None:
                fh.write(f"{u} {v}\n")
            else:
                fh.write(f"{labels[u]} {labels[v]}\n")


def save_label_table(labels: Sequence[str], path) -> None:
    Path(path).write_text(json.dumps({"labels": list(labels)}, indent=1), encoding="utf-8")
