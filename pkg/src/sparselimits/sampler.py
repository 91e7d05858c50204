"""Seeded random graphs: G(n,p), inhomogeneous graphs from step kernels, and counterexample constructions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError
from .graph_core import Graph, blow_up, complete_graph, disjoint_union, write_edge_list
from .kernel import StepKernel


@dataclass
class SampleRecord:
    graph: Graph
    construction: dict
    p_effective: float
    latent_types: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def sidecar(self) -> dict:
        return {"construction": self.construction, "p_effective": self.p_effective,
                "latent_types": None if self.latent_types is None else self.latent_types.tolist(),
                "meta": self.meta, "n": self.graph.n, "m": self.graph.m}

    def save(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        el = prefix.with_suffix(".edges")
        js = prefix.with_suffix(".json")
        write_edge_list(self.graph, el)
        js.write_text(json.dumps(self.sidecar(), default=_jsonable), encoding="utf-8")
        return el, js


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _seed_value(seed):
    return None if seed is None else int(seed) if np.isscalar(seed) else seed


def _skip_positions(total: int, p: float, rng) -> np.ndarray:
    """Positions in [0, total) kept independently with probability p (geometric skipping)."""
    if p <= 0 or total == 0:
        return np.zeros(0, dtype=np.int64)
    if p >= 1:
        return np.arange(total, dtype=np.int64)
    out, pos = [], -1
    while True:
        need = int((total - pos) * p * 1.1) + 64
        gaps = rng.geometric(p, size=need)
        idx = pos + np.cumsum(gaps)
        cut = np.searchsorted(idx, total)
        out.append(idx[:cut])
        if cut < idx.size:
            break
        pos = int(idx[-1])
    return np.concatenate(out).astype(np.int64)


def _pair_from_index(k: np.ndarray, n: int):
    """Row-major index over {(i, j): 0 <= i < j < n} back to (i, j)."""
    k = k.astype(np.int64)
    N = n * (n - 1) // 2
    r = N - 1 - k  # index from the end
    i_rev = ((np.sqrt(8.0 * r + 1) - 1) // 2).astype(np.int64)
    # fix float rounding
    i_rev -= (i_rev * (i_rev + 1) // 2 > r)
    i_rev += ((i_rev + 1) * (i_rev + 2) // 2 <= r)
    i = n - 2 - i_rev
    start = i * (2 * n - i - 1) // 2
    j = k - start + i + 1
    return i, j


def sample_gnp(n: int, p: float, seed=None) -> SampleRecord:
    """Erdos-Renyi G(n, p) by geometric skipping over the pair list."""
    if not 0 <= p <= 1:
        raise DomainError("p must lie in [0, 1]")
    if n < 0:
        raise DomainError("n must be >= 0")
    rng = np.random.default_rng(seed)
    idx = _skip_positions(n * (n - 1) // 2, p, rng)
    i, j = _pair_from_index(idx, n) if idx.size else (idx, idx)
    G = Graph.from_edges(n, np.column_stack([i, j]))
    return SampleRecord(G, {"name": "gnp", "n": n, "p": p, "seed": _seed_value(seed)}, p)


def sample_inhomogeneous(n: int, kappa: StepKernel, p: float, seed=None) -> SampleRecord:
    """G_p(n, kappa): uniform latent positions, then independent edges with prob min(p*kappa, 1)."""
    if p <= 0:
        raise DomainError("p must be positive")
    ss = np.random.SeedSequence(seed)
    k = kappa.k
    children = ss.spawn(1 + k * (k + 1) // 2)
    x = np.random.default_rng(children[0]).random(n)
    types = np.searchsorted(kappa.boundaries[1:-1], x, side="right").astype(np.int64)
    members = [np.flatnonzero(types == a) for a in range(k)]
    edges, clamped, c = [], False, 1
    for a in range(k):
        for b in range(a, k):
            q = p * float(kappa.values[a, b])
            if q > 1:
                clamped, q = True, 1.0
            rng = np.random.default_rng(children[c])
            c += 1
            A, B = members[a], members[b]
            if a == b:
                idx = _skip_positions(A.size * (A.size - 1) // 2, q, rng)
                if idx.size:
                    i, j = _pair_from_index(idx, A.size)
                    edges.append(np.column_stack([A[i], A[j]]))
            else:
                idx = _skip_positions(A.size * B.size, q, rng)
                if idx.size:
                    edges.append(np.column_stack([A[idx // B.size], B[idx % B.size]]))
    E = np.vstack(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    G = Graph.from_edges(n, E)
    return SampleRecord(G, {"name": "inhomogeneous", "n": n, "p": p, "seed": _seed_value(seed),
                            "kernel": kappa.to_dict()}, p, types, {"clamped": clamped})


def solve_too_few_triangles_p1(n: int, ratio: float, tol: float = 1e-12) -> float:
    """p1 in (0,1) with (1 - p1^2)^(n-2) = ratio * p1, by bisection."""
    if n < 3 or ratio <= 0:
        raise DomainError("need n >= 3 and ratio > 0")
    f = lambda x: (n - 2) * math.log1p(-x * x) - math.log(x) - math.log(ratio)
    lo, hi = 1e-300, 1.0 - 1e-16
    if f(hi) > 0:
        raise DomainError("no solution in (0, 1)")
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def _no_common_neighbour_pairs(G: Graph) -> np.ndarray:
    """All pairs u < v with codegree 0 in G (adjacent pairs included)."""
    n = G.n
    A = G.dense(np.float32)
    out = []
    b = max(1, int(4e6 // max(n, 1)))
    for lo in range(0, n, b):
        C = A[lo:lo + b] @ A
        r, c = np.nonzero(C == 0)
        r = r + lo
        keep = c > r
        out.append(np.column_stack([r[keep], c[keep]]))
    return np.vstack(out) if out else np.zeros((0, 2), dtype=np.int64)


def construct_too_few_triangles(n: int, ratio: float = 0.5, seed=None) -> SampleRecord:
    """G(n, p1) plus every pair without a common neighbour, with p2 = (1 - p1^2)^(n-2) = ratio p1."""
    p1 = solve_too_few_triangles_p1(n, ratio)
    p2 = (1 - p1 * p1) ** (n - 2)
    base = sample_gnp(n, p1, seed)
    H = _no_common_neighbour_pairs(base.graph)
    G = Graph.from_edges(n, np.vstack([base.graph.edges(), H]))
    Gset = set(map(tuple, base.graph.edges().tolist()))
    h_only = np.array([e for e in H.tolist() if tuple(e) not in Gset], dtype=np.int64).reshape(-1, 2)
    bad = gg_h_triangles(base.graph, h_only)
    if bad:
        raise AssertionError("triangle with two G-edges and one H-edge")
    return SampleRecord(G, {"name": "too_few_triangles", "n": n, "ratio": ratio,
                            "seed": _seed_value(seed)}, p1 + p2, None,
                        {"p1": p1, "p2": p2, "h_edges": int(h_only.shape[0]),
                         "g_edges": base.graph.m, "gg_h_triangles": bad})


def gg_h_triangles(G: Graph, h_edges: np.ndarray) -> int:
    """Number of triangles with two edges in G and the third an H-only pair."""
    if h_edges.size == 0:
        return 0
    S = G.sparse(np.float64)
    u, v = h_edges[:, 0], h_edges[:, 1]
    total = 0
    for lo in range(0, u.size, 20000):
        a = S[u[lo:lo + 20000]]
        b = S[v[lo:lo + 20000]]
        total += int(a.multiply(b).sum())
    return total


def construct_blowup_counterexample(n: int, t: int, c: float, seed=None) -> SampleRecord:
    """Blow-up of G(m, 1/log n) by k = floor(n/m), with m = ceil(c (log n)^t)."""
    if n < 3 or c <= 0:
        raise DomainError("need n >= 3 and c > 0")
    L = math.log(n)
    p = 1.0 / L
    m = math.ceil(c * L ** t)
    if m > n:
        raise DomainError(f"m={m} exceeds n={n}")
    k = n // m
    base = sample_gnp(m, p, seed)
    G = blow_up(base.graph, k)
    types = np.repeat(np.arange(m), k)
    return SampleRecord(G, {"name": "blowup", "n": n, "t": t, "c": c, "seed": _seed_value(seed)},
                        p, types, {"m": m, "k": k, "p": p, "n_requested": n, "n_actual": m * k,
                                   "rounding_loss": n - m * k, "base_edges": base.graph.m})


def construct_planted_clique(n: int, exponent_c: float = 1.5, p: float | None = None, seed=None,
                             m: int | None = None) -> SampleRecord:
    """G(n - m, p) disjoint union K_m with m = ceil(n / (log n)^c); p defaults to 1/log n."""
    L = math.log(n) if n > 1 else 1.0
    if m is None:
        m = math.ceil(n / L ** exponent_c)
    if m < 2 or m >= n:
        raise DomainError(f"clique size m={m} must satisfy 2 <= m < n")
    if p is None:
        p = 1.0 / L
    base = sample_gnp(n - m, p, seed)
    G = disjoint_union(base.graph, complete_graph(m))
    types = np.concatenate([np.zeros(n - m, dtype=np.int64), np.ones(m, dtype=np.int64)])
    return SampleRecord(G, {"name": "planted_clique", "n": n, "c": exponent_c, "p": p,
                            "seed": _seed_value(seed)}, p, types,
                        {"m": m, "clique": list(range(n - m, n))})


def _is_prime(q: int) -> bool:
    return q >= 2 and all(q % d for d in range(2, int(math.isqrt(q)) + 1))


def projective_points(q: int) -> np.ndarray:
    pts = [(1, a, b) for a in range(q) for b in range(q)]
    pts += [(0, 1, b) for b in range(q)]
    pts.append((0, 0, 1))
    return np.array(pts, dtype=np.int64)


def construct_polarity_graph(q: int) -> SampleRecord:
    """Orthogonality graph on the points of PG(2, q), q prime; absolute points lose their loops."""
    if not _is_prime(q):
        raise DomainError("q must be prime")
    P = projective_points(q)
    M = (P @ P.T) % q == 0
    np.fill_diagonal(M, False)
    G = Graph.from_dense(M.astype(np.int8))
    n = P.shape[0]
    return SampleRecord(G, {"name": "polarity", "q": q}, 1.0 / math.sqrt(n), None,
                        {"n": n, "absolute_points": int(np.sum(np.einsum("ij,ij->i", P, P) % q == 0))})


CONSTRUCTIONS = {
    "gnp": sample_gnp,
    "too_few_triangles": construct_too_few_triangles,
    "blowup": construct_blowup_counterexample,
    "planted_clique": construct_planted_clique,
    "polarity": construct_polarity_graph,
}
