"""Motif statistics on graphs.

Homomorphism and embedding counts are exact Python integers. Dense matrix products go
through BLAS only when an a-priori bound guarantees every partial sum is an exactly
representable integer (float32 below 2^24, float64 below 2^53); otherwise the code falls
back to object arithmetic or raises CapacityError.
"""
from __future__ import annotations

import itertools
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import CapacityError, DomainError
from .graph_core import Graph
from .kernel import Motif, cycle, glue_copies, theta

F32_EXACT = 2.0 ** 24
F64_EXACT = 2.0 ** 52
BACKTRACK_MAX_VERTICES = 8
DENSE_LIMIT = 20000
WALK_DENSE_THRESHOLD = 4096
ELIM_CACHE_ITEMS = 8


# ---------------------------------------------------------------------------
# exact dense helpers

def _dense(G: Graph, dtype=np.float32) -> np.ndarray:
    if G.n > DENSE_LIMIT:
        raise CapacityError(f"dense adjacency for n={G.n} exceeds {DENSE_LIMIT}")
    key = ("dense", np.dtype(dtype).str)
    A = G._cache.get(key)
    if A is None:
        A = G.dense(dtype)
        A.setflags(write=False)
        G._cache[key] = A
    return A


def _block_rows(n: int) -> int:
    return max(1, min(n, int(8e6 // max(n, 1))))


def _times_adj(X: np.ndarray, G: Graph) -> np.ndarray:
    """Exact X @ A for a nonnegative integer-valued X (entries bounded by row sums of X)."""
    bound = float(X.sum(axis=1).max()) if X.size else 0.0
    if bound < F32_EXACT:
        return (X.astype(np.float32, copy=False) @ _dense(G, np.float32)).astype(np.float64)
    if bound < F64_EXACT:
        return X.astype(np.float64, copy=False) @ _dense(G, np.float64)
    raise CapacityError("walk counts exceed exact float range")


def _walk_row_blocks(G: Graph, t: int):
    """Yield (row slice, [W_1 rows, ..., W_t rows]) with exact integer-valued float64 blocks."""
    A = _dense(G, np.float32)
    b = _block_rows(G.n)
    for lo in range(0, G.n, b):
        X = A[lo:lo + b].astype(np.float64)
        out = [X]
        for _ in range(t - 1):
            X = _times_adj(X, G)
            out.append(X)
        yield slice(lo, lo + b), out


def _int_sum(x: np.ndarray) -> int:
    """Exact sum of a nonnegative integer-valued float array."""
    if x.size == 0:
        return 0
    mx = float(x.max())
    if mx * x.size < F64_EXACT:
        return int(x.sum(dtype=np.float64))
    xi = x.astype(np.int64)
    if mx * x.size < 2.0 ** 62:
        return int(xi.sum())
    return sum(int(v) for v in xi.ravel())


def _int_dot(X: np.ndarray, Y: np.ndarray) -> int:
    """Exact sum of X * Y for nonnegative integer-valued arrays."""
    if X.size == 0:
        return 0
    if float(X.max()) * float(Y.max()) * X.size < F64_EXACT:
        return int((X * Y).sum(dtype=np.float64))
    Xi, Yi = X.astype(np.int64).ravel(), Y.astype(np.int64).ravel()
    if float(X.max()) * float(Y.max()) < 2.0 ** 62:
        P = Xi * Yi
        return sum(int(v) for v in P) if float(P.max()) * P.size >= 2.0 ** 62 else int(P.sum())
    return sum(int(a) * int(b) for a, b in zip(Xi, Yi))


def _hist_add(hist: dict, X: np.ndarray) -> None:
    vals, cnt = np.unique(X.astype(np.int64), return_counts=True)
    for v, c in zip(vals.tolist(), cnt.tolist()):
        hist[v] = hist.get(v, 0) + c


def _power_sum(hist: dict, t: int, falling: bool = False) -> int:
    if falling:
        return sum(c * math.perm(v, t) for v, c in hist.items() if v >= t)
    return sum(c * v ** t for v, c in hist.items())


def _codegree_stats(G: Graph) -> dict:
    """Histogram of codeg(u,v) over all ordered pairs (diagonal = degree) and hom(C3)."""
    st = G._cache.get("codeg")
    if st is None:
        hist, tri = {}, 0
        A = _dense(G, np.float32)
        for rows, (W1, W2) in _walk_row_blocks(G, 2):
            _hist_add(hist, W2)
            tri += _int_dot(W1, W2)
        st = {"hist": hist, "tri_hom": tri}
        G._cache["codeg"] = st
    return st


def _walk_power_hist(G: Graph, ell: int) -> dict:
    key = ("walkhist", ell)
    h = G._cache.get(key)
    if h is None:
        if ell == 2:
            h = _codegree_stats(G)["hist"]
        else:
            h = {}
            for _, Ws in _walk_row_blocks(G, ell):
                _hist_add(h, Ws[-1])
        G._cache[key] = h
    return h


# ---------------------------------------------------------------------------
# motif shape detection

def _isomorphic(F1: Motif, F2: Motif) -> bool:
    try:
        return F1.canonical_key() == F2.canonical_key()
    except CapacityError:  # too symmetric to canonicalize: no fast route
        return False


def _is_cycle(F: Motif) -> bool:
    return F.k >= 3 and F.e == F.k and F.is_connected() and bool(np.all(F.degrees() == 2))


def _is_complete(F: Motif) -> bool:
    return F.e == F.k * (F.k - 1) // 2


def _theta_shape(F: Motif):
    """(t, ell) if F is a theta graph with t >= 3 paths (or K_{2,2} family via ell = 2)."""
    if F.k < 4 or not F.is_connected():
        return None
    d = F.degrees()
    hubs = np.flatnonzero(d != 2)
    if hubs.size != 2 or d[hubs[0]] != d[hubs[1]]:
        return None
    t = int(d[hubs[0]])
    if t < 3 or F.e % t or (F.k - 2) % t:
        return None
    ell = F.e // t
    if ell < 2 or 2 + t * (ell - 1) != F.k:
        return None
    return (t, ell) if _isomorphic(theta(t, ell), F) else None


def _is_star(F: Motif):
    d = F.degrees()
    if F.k >= 2 and F.e == F.k - 1 and int(d.max()) == F.k - 1:
        return F.k - 1
    return None


def _k2t_shape(F: Motif):
    """t if F is K_{2,t} (t >= 1), with K_{2,1} the 2-edge path."""
    if F.k < 3 or F.e != 2 * (F.k - 2):
        return None
    t = F.k - 2
    from .kernel import complete_bipartite
    return t if _isomorphic(complete_bipartite(2, t), F) else None


# ---------------------------------------------------------------------------
# specialized hom routes

def _hom_tree(F: Motif, G: Graph) -> int:
    nb = F.neighbors()
    order, parent = [0], {0: -1}
    for x in order:
        for y in sorted(nb[x]):
            if y not in parent:
                parent[y] = x
                order.append(y)
    children = {x: [y for y in nb[x] if parent.get(y) == x] for x in order}
    S = G.sparse(np.float64)
    dmax = float(G.degrees.max()) if G.n else 0.0
    f, bound = {}, {}
    exact = True
    for x in reversed(order):
        v = np.ones(G.n)
        b = 1.0
        for c in children[x]:
            v = v * (S @ f[c])
            b *= dmax * bound[c]
        if b >= F64_EXACT:
            exact = False
            break
        f[x], bound[x] = v, b
    if exact:
        return _int_sum(f[0])
    # arbitrary-precision fallback over adjacency lists
    adj = G.adjacency
    fi = {}
    for x in reversed(order):
        v = [1] * G.n
        for c in children[x]:
            fc = fi[c]
            s = [sum(fc[w] for w in adj[u].tolist()) for u in range(G.n)]
            v = [a * b for a, b in zip(v, s)]
        fi[x] = v
    return sum(fi[0])


def _hom_cycle(k: int, G: Graph) -> int:
    if k == 3:
        return _codegree_stats(G)["tri_hom"]
    if k == 4:
        return _power_sum(_codegree_stats(G)["hist"], 2)
    a, b = k // 2, k - k // 2
    total = 0
    for _, Ws in _walk_row_blocks(G, b):
        total += _int_dot(Ws[a - 1], Ws[b - 1])
    return total


def _hom_theta(t: int, ell: int, G: Graph) -> int:
    return _power_sum(_walk_power_hist(G, ell), t)


def _clique_count(G: Graph, r: int) -> int:
    """Number of r-cliques (unordered vertex sets)."""
    if r == 1:
        return G.n
    if r == 2:
        return G.m
    deg = G.degrees
    rank = np.lexsort((np.arange(G.n), deg))
    pos = np.empty(G.n, dtype=np.int64)
    pos[rank] = np.arange(G.n)
    adj = G.adjacency
    total = 0
    for v in range(G.n):
        fwd = adj[v][pos[adj[v]] > pos[v]]
        if fwd.size < r - 1:
            continue
        sub = G.induced(fwd)
        total += _clique_count_dense(sub.dense(np.float64), r - 1)
    return total


def _clique_count_dense(B: np.ndarray, r: int) -> int:
    s = B.shape[0]
    if r == 1:
        return s
    if r == 2:
        return int(B.sum()) // 2
    if r == 3:
        return int(((B @ B) * B).sum()) // 6
    total = 0
    for v in range(s):
        fwd = np.flatnonzero(B[v, v + 1:]) + v + 1
        if fwd.size >= r - 1:
            total += _clique_count_dense(B[np.ix_(fwd, fwd)], r - 1)
    return total


# ---------------------------------------------------------------------------
# generic backtracker

def _search_order(F: Motif, fixed: Sequence[int] = ()) -> list[int]:
    nb = F.neighbors()
    deg = [len(s) for s in nb]
    order = list(fixed)
    rest = [v for v in range(F.k) if v not in set(fixed)]
    while rest:
        placed = set(order)
        rest.sort(key=lambda v: (-len(nb[v] & placed), -deg[v], v))
        order.append(rest.pop(0))
    return order


def _backtrack(F: Motif, G: Graph, injective: bool, fixed: dict | None = None) -> int:
    """Count (injective) homomorphisms of F extending the partial map ``fixed``."""
    F = F.simple()
    fixed = dict(fixed or {})
    nbG = G.neighbor_sets()
    nbF = F.neighbors()
    order = _search_order(F, sorted(fixed))
    pos = {v: i for i, v in enumerate(order)}
    back = [[u for u in nbF[v] if pos[u] < pos[v]] for v in order]
    img = [None] * F.k
    for v, x in fixed.items():
        img[v] = x
    nf = len(fixed)
    for i in range(nf):
        v = order[i]
        if any(img[u] not in nbG[img[v]] for u in back[i]):
            return 0
    if injective and len(set(fixed.values())) != nf:
        return 0
    allv = range(G.n)
    used = set(fixed.values())
    last = F.k - 1

    def cands(i):
        bs = back[i]
        if not bs:
            return allv
        sets = sorted((nbG[img[u]] for u in bs), key=len)
        c = sets[0]
        for s in sets[1:]:
            c = c & s
        return c

    def rec(i):
        c = cands(i)
        if i == last:
            if injective:
                return len(c) - sum(1 for x in used if x in c)
            return len(c)
        tot = 0
        v = order[i]
        for x in c:
            if injective and x in used:
                continue
            img[v] = x
            if injective:
                used.add(x)
            tot += rec(i + 1)
            if injective:
                used.discard(x)
        img[v] = None
        return tot

    if nf == F.k:
        return 1
    return rec(nf)


# ---------------------------------------------------------------------------
# variable elimination

@dataclass
class _Fac:
    scope: tuple
    arr: object  # ndarray (possibly object dtype) or python int for scalars
    key: str
    sym: bool = False


def _fac_T(f: _Fac) -> tuple:
    """(array, key) oriented as (scope[1], scope[0])."""
    if f.sym:
        return f.arr, f.key
    k = f.key[2:-1] if f.key.startswith("T(") else f"T({f.key})"
    return f.arr.T, k


def _checked(arr, exact_obj: bool):
    if exact_obj or not isinstance(arr, np.ndarray) or arr.dtype == object:
        return arr
    if arr.size and float(arr.max()) >= F64_EXACT:
        raise OverflowError
    return arr


def _elim_cache(G: Graph | None):
    if G is None:
        return OrderedDict()
    c = G._cache.get("elim")
    if c is None:
        c = G._cache["elim"] = OrderedDict()
    return c


def _contract(n: int, nvars: int, factors: list[_Fac], obj: bool, cache: OrderedDict,
              max_cells: float = 3e7) -> int:
    """Sum over all maps [nvars] -> [n] of the product of factors (nonnegative integers)."""
    facs: dict[tuple, _Fac] = {}

    def add(f: _Fac):
        if f.scope in facs:
            g = facs[f.scope]
            a, b = sorted([g, f], key=lambda x: x.key)
            key = f"({a.key}*{b.key})"
            arr = cache.get(key)
            if arr is None:
                arr = _checked(a.arr * b.arr, obj)
            facs[f.scope] = _Fac(f.scope, arr, key, a.sym and b.sym)
        else:
            facs[f.scope] = f

    scalars = 1
    for f in factors:
        if obj and isinstance(f.arr, np.ndarray) and f.arr.dtype != object:
            f = _Fac(f.scope, f.arr.astype(np.int64).astype(object), f.key, f.sym)
        add(f)
    live = set(range(nvars))
    touched = set(itertools.chain.from_iterable(facs))
    free = live - touched
    scalars *= n ** len(free)
    live -= free
    while live:
        def cost(v):
            return len(set(itertools.chain.from_iterable(s for s in facs if v in s)) - {v})
        v = min(sorted(live), key=cost)
        live.discard(v)
        mine = [facs.pop(s) for s in [s for s in facs if v in s]]
        S = tuple(sorted(set(itertools.chain.from_iterable(f.scope for f in mine)) - {v}))
        vec = next((f for f in mine if len(f.scope) == 1), None)
        mats = {}
        high = False
        for f in mine:
            if len(f.scope) == 2:
                other = f.scope[0] if f.scope[1] == v else f.scope[1]
                arr, key = (f.arr, f.key) if f.scope[0] == v else _fac_T(f)
                mats[other] = (arr, key, f.sym)
            elif len(f.scope) > 2:
                high = True
        vkey = vec.key if vec is not None else "1"
        if not high and len(S) == 0:
            key = f"sum({vkey})"
            res = cache.get(key)
            if res is None:
                res = int(vec.arr.sum()) if obj else _int_sum(vec.arr)
            scalars *= res
            _cache_put(cache, key, res)
            continue
        if not high and len(S) == 1:
            a = S[0]
            M, mk, _ = mats[a]
            key = f"vm({vkey}|{mk})"
            res = cache.get(key)
            if res is None:
                res = (vec.arr @ M) if vec is not None else M.sum(axis=0)
                res = _checked(res if obj else np.asarray(res, dtype=np.float64), obj)
                _cache_put(cache, key, res)
            add(_Fac(S, res, key))
            continue
        if not high and len(S) == 2:
            a, b = S
            M1, k1, _ = mats[a]
            M2, k2, _ = mats[b]
            key = f"mm({k1}|{vkey}|{k2})"
            res = cache.get(key)
            if res is None:
                L = M1 if vec is None else M1 * vec.arr[:, None]
                if obj:
                    res = L.T @ M2
                else:
                    bound = float(L.sum(axis=0).max()) * float(M2.max()) if L.size else 0.0
                    if bound < F32_EXACT:
                        res = (L.T.astype(np.float32) @ M2.astype(np.float32)).astype(np.float64)
                    elif bound < F64_EXACT:
                        res = L.T.astype(np.float64) @ M2.astype(np.float64)
                    else:
                        raise OverflowError
                _cache_put(cache, key, res)
            add(_Fac(S, res, key, sym=(k1 == k2)))
            continue
        # generic einsum over the gathered factors
        if float(n) ** (len(S) + 1) > max_cells:
            raise CapacityError(f"elimination needs a {len(S) + 1}-way table at n={n}")
        letters = {x: chr(97 + i) for i, x in enumerate(sorted(set(S) | {v}))}
        spec = ",".join("".join(letters[x] for x in f.scope) for f in mine)
        out = "".join(letters[x] for x in S)
        res = np.einsum(f"{spec}->{out}", *[f.arr for f in mine], optimize=False)
        res = _checked(res, obj)
        key = "es(" + ";".join(f"{f.key}@{f.scope}" for f in mine) + f"->{S})"
        add(_Fac(S, res, key))
    for f in facs.values():  # leftover scalar factors (scope ())
        scalars *= int(f.arr)
    return int(scalars)


def _cache_put(cache: OrderedDict, key, val) -> None:
    cache[key] = val
    cache.move_to_end(key)
    while len(cache) > ELIM_CACHE_ITEMS * 4:
        cache.popitem(last=False)


def _hom_eliminate(F: Motif, G: Graph) -> int:
    F = F.simple()
    n = G.n
    try:
        A = _dense(G, np.float64)
        facs = [_Fac((u, v), A, "A", True) for u, v in F.edges]
        return _contract(n, F.k, facs, False, _elim_cache(G))
    except OverflowError:
        if n > 300:
            raise CapacityError("counts exceed the exact float range and n > 300")
        Ao = G.dense(np.int64).astype(object)
        facs = [_Fac((u, v), Ao, "A", True) for u, v in F.edges]
        return _contract(n, F.k, facs, True, OrderedDict())


# ---------------------------------------------------------------------------
# public counting API

HOM_METHODS = ("auto", "tree", "cycle", "theta", "clique", "elimination", "backtrack")


def _hom_connected(F: Motif, G: Graph, method: str) -> tuple[int, str]:
    if method == "auto":
        if F.k == 1:
            return G.n, "vertex"
        if F.is_tree():
            method = "tree"
        elif _is_cycle(F):
            method = "cycle"
        elif _k2t_shape(F) or _theta_shape(F):
            method = "theta"
        elif _is_complete(F) and F.k >= 4:
            method = "clique"
        elif G.n <= DENSE_LIMIT:
            method = "elimination"
        else:
            method = "backtrack"
    if method == "tree":
        if not F.is_tree():
            raise DomainError("tree route needs a tree motif")
        return _hom_tree(F, G), "tree"
    if method == "cycle":
        if not _is_cycle(F):
            raise DomainError("cycle route needs a cycle motif")
        return _hom_cycle(F.k, G), "cycle"
    if method == "theta":
        t2 = _k2t_shape(F)
        shape = (t2, 2) if t2 else _theta_shape(F)
        if shape is None:
            raise DomainError("theta route needs a theta / K_{2,t} motif")
        return _hom_theta(shape[0], shape[1], G), "theta"
    if method == "clique":
        if not _is_complete(F):
            raise DomainError("clique route needs a complete motif")
        return math.factorial(F.k) * _clique_count(G, F.k), "clique"
    if method == "elimination":
        try:
            return _hom_eliminate(F, G), "elimination"
        except CapacityError:
            if F.k > BACKTRACK_MAX_VERTICES or G.n > 400:
                raise
            return _backtrack(F, G, False), "backtrack"
    if method == "backtrack":
        if F.k > BACKTRACK_MAX_VERTICES:
            raise CapacityError(f"backtracking limited to {BACKTRACK_MAX_VERTICES} motif vertices")
        return _backtrack(F, G, False), "backtrack"
    raise DomainError(f"unknown method {method!r}")


def hom_count(F: Motif, G: Graph, method: str = "auto", return_method: bool = False):
    """Exact number of homomorphisms F -> G. Repeated motif edges collapse (G is simple)."""
    if F.k > 10:
        raise CapacityError("motifs above 10 vertices are not supported")
    S = F.simple()
    comps = S.components() if S.k else []
    total, tags = 1, []
    for comp in comps:
        sub = S.sub(comp)
        key = None
        if method == "auto":
            try:
                key = ("hom", sub.canonical_key())
            except CapacityError:  # too symmetric to canonicalize; just skip the cache
                pass
        if key is not None and key in G._cache:
            h, tag = G._cache[key]
        else:
            h, tag = _hom_connected(sub, G, method)
            if key is not None:
                G._cache[key] = (h, tag)
        total *= h
        tags.append(tag)
    tag = "+".join(tags) if tags else "empty"
    return (total, tag) if return_method else total


def _set_partitions(items: list):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _mobius(part) -> int:
    out = 1
    for b in part:
        out *= (-1) ** (len(b) - 1) * math.factorial(len(b) - 1)
    return out


def _quotient(F: Motif, part) -> Motif | None:
    blk = {}
    for i, b in enumerate(part):
        for x in b:
            blk[x] = i
    es = set()
    for u, v in F.edges:
        a, b = blk[u], blk[v]
        if a == b:
            return None
        es.add((min(a, b), max(a, b)))
    return Motif(len(part), tuple(sorted(es)))


def emb_count(F: Motif, G: Graph, method: str = "auto", return_method: bool = False):
    """Exact number of injective homomorphisms F -> G."""
    S = F.simple()
    n = G.n
    if S.k > n:
        res = (0, "trivial")
    elif S.k > 10:
        raise CapacityError("motifs above 10 vertices are not supported")
    elif method == "backtrack" or (method == "auto" and S.k <= BACKTRACK_MAX_VERTICES
                                   and float(n) ** min(S.k, 3) <= 2e3):
        res = (_backtrack(S, G, True), "backtrack")
    elif method == "auto" and S.k == 1:
        res = (n, "vertex")
    elif method == "auto" and _is_complete(S) and S.is_connected():
        res = (hom_count(S, G), "clique")
    elif method == "auto" and _is_star(S):
        d = _is_star(S)
        res = (sum(math.perm(int(x), d) for x in G.degrees.tolist()), "star")
    elif method == "auto" and _k2t_shape(S):
        t = _k2t_shape(S)
        hist = _codegree_stats(G)["hist"]
        diag = sum(math.perm(int(x), t) for x in G.degrees.tolist())
        res = (_power_sum(hist, t, falling=True) - diag, "codegree")
    elif method in ("auto", "inclusion_exclusion"):
        total = 0
        for part in _set_partitions(list(range(S.k))):
            Q = _quotient(S, part)
            if Q is None:
                continue
            total += _mobius(part) * hom_count(Q, G)
        res = (total, "inclusion_exclusion")
    else:
        raise DomainError(f"unknown method {method!r}")
    return res if return_method else res[0]


def falling(n: int, k: int) -> int:
    return math.perm(n, k) if 0 <= k <= n else 0


@dataclass
class CountReport:
    motif: Motif
    hom: int
    emb: int
    t_p: float
    s_p: float
    p: float
    method: str

    def __post_init__(self):
        assert self.hom >= self.emb

    def to_dict(self) -> dict:
        return {"motif": self.motif.label, "hom": self.hom, "emb": self.emb, "t_p": self.t_p,
                "s_p": self.s_p, "p": self.p, "method": self.method}


def _ratio(num: int, den_int: int, p: float, e: int) -> float:
    if den_int == 0:
        return float("nan")
    return float(Fraction(num, den_int) / Fraction(p) ** e)


def normalized_counts(F: Motif, G: Graph, p: float) -> CountReport:
    """Exact hom/emb and their p-normalized densities (edge count of the simple motif)."""
    if p <= 0:
        raise DomainError("p must be positive")
    h, hm = hom_count(F, G, return_method=True)
    m, em = emb_count(F, G, return_method=True)
    S = F.simple()
    t = _ratio(h, G.n ** S.k, p, S.e)
    s = _ratio(m, falling(G.n, S.k), p, S.e)
    return CountReport(F, h, m, t, s, p, f"hom:{hm};emb:{em}")


def t_p(F: Motif, G: Graph, p: float) -> float:
    S = F.simple()
    return _ratio(hom_count(F, G), G.n ** S.k, p, S.e)


def s_p(F: Motif, G: Graph, p: float) -> float:
    S = F.simple()
    return _ratio(emb_count(F, G), falling(G.n, S.k), p, S.e)


# ---------------------------------------------------------------------------
# walks and paths

class WalkMatrixHandle:
    """Access to w_t(u, v), the number of walks with t edges from u to v."""

    def __init__(self, G: Graph, t: int, dense_threshold: int = WALK_DENSE_THRESHOLD):
        if t < 1:
            raise DomainError("t must be >= 1")
        self.G, self.t = G, t
        self._W = None
        if G.n <= dense_threshold:
            blocks = [Ws[-1] for _, Ws in _walk_row_blocks(G, t)] if G.n else []
            self._W = np.vstack(blocks) if blocks else np.zeros((0, 0))

    @property
    def dense(self) -> bool:
        return self._W is not None

    def matrix(self) -> np.ndarray:
        if self._W is None:
            raise CapacityError("dense walk matrix not cached for this n")
        return self._W

    def row(self, u: int) -> np.ndarray:
        """w_t(u, .) as int64 (single-source: t sparse products)."""
        if self._W is not None:
            return self._W[u].astype(np.int64)
        S = self.G.sparse(np.int64)
        x = np.zeros(self.G.n, dtype=np.int64)
        x[u] = 1
        dmax = int(self.G.degrees.max()) if self.G.n else 0
        for _ in range(self.t):
            if int(x.max()) * max(dmax, 1) >= 2 ** 62:
                raise CapacityError("walk counts overflow int64")
            x = S @ x
        return x

    def value(self, u: int, v: int) -> int:
        return int(self.row(u)[v]) if self._W is None else int(self._W[u, v])

    def total(self, u: int) -> int:
        return int(self.row(u).sum())


def walk_counts(G: Graph, t: int, dense_threshold: int = WALK_DENSE_THRESHOLD) -> WalkMatrixHandle:
    return WalkMatrixHandle(G, t, dense_threshold)


def _bfs_dist(G: Graph, src: int, cap: int) -> np.ndarray:
    dist = np.full(G.n, cap + 1, dtype=np.int64)
    dist[src] = 0
    frontier = [src]
    adj = G.adjacency
    d = 0
    while frontier and d < cap:
        d += 1
        nxt = []
        for x in frontier:
            for y in adj[x].tolist():
                if dist[y] > d:
                    dist[y] = d
                    nxt.append(y)
        frontier = nxt
    return dist


def path_counts(G: Graph, t: int, u: int, v: int) -> int:
    """Number of simple paths with t edges from u to v (DFS with distance pruning, t <= 6)."""
    if t < 1:
        raise DomainError("t must be >= 1")
    if t > 6:
        raise CapacityError("path counting limited to t <= 6")
    if u == v:
        return 0
    dist = _bfs_dist(G, v, t)
    adj = G.adjacency
    seen = {u}

    def rec(x, left):
        if left == 1:
            return 1 if G.has_edge(x, v) else 0
        tot = 0
        for y in adj[x].tolist():
            if y in seen or y == v or dist[y] > left - 1:
                continue
            seen.add(y)
            tot += rec(y, left - 1)
            seen.discard(y)
        return tot

    return rec(u, t)


def path_count_matrix(G: Graph, ell: int) -> np.ndarray:
    """Dense matrix of p_ell(u, v) (zero diagonal) as int64."""
    if ell < 1:
        raise DomainError("ell must be >= 1")
    if ell <= 3:
        W = walk_counts(G, ell, dense_threshold=DENSE_LIMIT).matrix().astype(np.int64)
        if ell == 3:
            d = G.degrees.astype(np.int64)
            A = G.dense(np.int64)
            W = W - A * (d[:, None] + d[None, :] - 1)
        np.fill_diagonal(W, 0)
        return W
    if ell > 6:
        raise CapacityError("path counting limited to ell <= 6")
    dmax = int(G.degrees.max()) if G.n else 0
    if G.n * float(dmax) ** ell > 5e7:
        raise CapacityError("path-count matrix too expensive for this graph")
    P = np.zeros((G.n, G.n), dtype=np.int64)
    adj = G.adjacency
    for s in range(G.n):
        stack = [(s, (s,))]
        while stack:
            x, pathv = stack.pop()
            if len(pathv) == ell + 1:
                P[s, x] += 1
                continue
            for y in adj[x].tolist():
                if y not in pathv:
                    stack.append((y, pathv + (y,)))
    np.fill_diagonal(P, 0)
    return P


def p3_row_block_max(G: Graph) -> tuple[int, int, int]:
    """Exact max over u != v of p_3(u, v), computed blockwise. Returns (value, u, v)."""
    d = G.degrees.astype(np.float64)
    A = _dense(G, np.float32)
    best = (-1, -1, -1)
    for rows, Ws in _walk_row_blocks(G, 3):
        lo = rows.start
        blk = Ws[2] - A[rows].astype(np.float64) * (d[rows, None] + d[None, :] - 1)
        idx = np.arange(blk.shape[0])
        blk[idx, lo + idx] = -1
        k = int(np.argmax(blk))
        i, j = divmod(k, G.n)
        if blk[i, j] > best[0]:
            best = (int(blk[i, j]), lo + i, j)
    return best


def p2_row_block_max(G: Graph) -> tuple[int, int, int]:
    best = (-1, -1, -1)
    for rows, Ws in _walk_row_blocks(G, 2):
        lo = rows.start
        blk = Ws[1].copy()
        idx = np.arange(blk.shape[0])
        blk[idx, lo + idx] = -1
        k = int(np.argmax(blk))
        i, j = divmod(k, G.n)
        if blk[i, j] > best[0]:
            best = (int(blk[i, j]), lo + i, j)
    return best


# ---------------------------------------------------------------------------
# spectral, theta, semiembeddings

def spectral_cycle_counts(G: Graph, p: float, k_max: int, n_limit: int = 4096) -> list[tuple[int, float]]:
    """t_p(C_k) for 3 <= k <= k_max from the spectrum of the adjacency matrix."""
    if p <= 0:
        raise DomainError("p must be positive")
    if G.n > n_limit:
        raise CapacityError(f"eigendecomposition limited to n <= {n_limit}")
    lam = np.linalg.eigvalsh(G.dense(np.float64))
    mu = lam / (G.n * p)
    return [(k, float(np.sum(mu ** k))) for k in range(3, k_max + 1)]


def theta_counts(G: Graph, p: float, k: int, ell: int, simple_paths: bool = False) -> float:
    """Normalized theta statistic: sum of w_ell(u,v)^k (or p_ell(u,v)^k over u != v)."""
    if p <= 0 or k < 1 or ell < 1:
        raise DomainError("need p > 0 and k, ell >= 1")
    if simple_paths:
        P = path_count_matrix(G, ell)
        hist = {}
        _hist_add(hist, P)
        total = _power_sum(hist, k)
    else:
        total = _power_sum(_walk_power_hist(G, ell), k)
    den = Fraction(G.n) ** (2 + k * (ell - 1)) * Fraction(p) ** (k * ell)
    return float(Fraction(total) / den)


def theta_total(G: Graph, k: int, ell: int) -> int:
    """Exact sum over all ordered (u, v) of w_ell(u, v)^k."""
    return _power_sum(_walk_power_hist(G, ell), k)


def semiembedding_count(F: Motif, ell: int, G: Graph, p: float) -> float:
    """Normalized semiembedding density of the ell-subdivision of the multigraph F."""
    if F.k > 5:
        raise CapacityError("semiembeddings limited to motifs with <= 5 vertices")
    if p <= 0 or ell < 1:
        raise DomainError("need p > 0 and ell >= 1")
    P = path_count_matrix(G, ell)
    mult: dict = {}
    for e in F.edges:
        mult[e] = mult.get(e, 0) + 1
    total = 0
    for part in _set_partitions(list(range(F.k))):
        blk = {x: i for i, b in enumerate(part) for x in b}
        if any(blk[u] == blk[v] for u, v in mult):
            continue  # p_ell has zero diagonal
        qm: dict = {}
        for (u, v), c in mult.items():
            a, b = sorted((blk[u], blk[v]))
            qm[(a, b)] = qm.get((a, b), 0) + c
        total += _mobius(part) * _weighted_hom(P, len(part), qm)
    kF = F.k + F.e * (ell - 1)
    den = falling(G.n, kF)
    if den == 0:
        return float("nan")
    return float(Fraction(total, den) / Fraction(p) ** (ell * F.e))


def _weighted_hom(P: np.ndarray, k: int, qm: dict) -> int:
    """Sum over maps [k] -> V of prod over (a,b) of P[x_a, x_b]^mult."""
    n = P.shape[0]
    powers = {}
    for c in set(qm.values()):
        powers[c] = P.astype(np.float64) ** c
    try:
        facs = [_Fac(e, powers[c], f"P^{c}", True) for e, c in qm.items()]
        return _contract(n, k, facs, False, OrderedDict())
    except OverflowError:
        if n > 300:
            raise CapacityError("semiembedding totals exceed exact float range")
        Po = P.astype(object)
        facs = [_Fac(e, Po ** c, f"P^{c}", True) for e, c in qm.items()]
        return _contract(n, k, facs, True, OrderedDict())


# ---------------------------------------------------------------------------
# flatness

@dataclass
class FlatnessProfile:
    F_prime: Motif
    F: Motif
    samples: int
    z: np.ndarray
    mean: float
    variance: float
    stderr: float
    identity_mean: float
    moments: dict = field(default_factory=dict)
    empty: bool = False

    def to_dict(self) -> dict:
        return {"F_prime": self.F_prime.label, "F": self.F.label, "samples": self.samples,
                "mean": self.mean, "variance": self.variance, "stderr": self.stderr,
                "identity_mean": self.identity_mean,
                "moments": {str(k): v for k, v in self.moments.items()}, "empty": self.empty}


def flatness_profile(F_prime: Motif, F: Motif, G: Graph, p: float, samples: int = 1000,
                     r_max: int = 2, seed=None, max_rejections: int = 1000) -> FlatnessProfile:
    """Sampled distribution of the normalized extension count Z of F over uniform copies of F'.

    F' must be the sub-motif of F induced on vertices 0..|F'|-1. Moments E(Z^r) are computed
    exactly from homomorphism counts of r copies of F glued along F'.
    """
    ell = F_prime.k
    if F.sub(range(ell)).simple().edges != F_prime.simple().edges:
        raise DomainError("F_prime must be the sub-motif induced on the first vertices of F")
    if p <= 0:
        raise DomainError("p must be positive")
    rng = np.random.default_rng(seed)
    Fs = F.simple()
    scale = Fraction(G.n) ** (Fs.k - ell) * Fraction(p) ** (Fs.e - F_prime.simple().e)
    nbG = G.neighbor_sets()
    edges_prime = F_prime.simple().edges
    z, tries = [], 0
    while len(z) < samples and tries < samples * max_rejections:
        tries += 1
        x = rng.integers(0, G.n, size=ell).tolist()
        if any(x[b] not in nbG[x[a]] for a, b in edges_prime):
            continue
        ext = _backtrack(Fs, G, False, fixed=dict(enumerate(x)))
        z.append(float(Fraction(ext) / scale))
    zz = np.asarray(z)
    hom_prime = hom_count(F_prime, G)
    if hom_prime == 0:
        return FlatnessProfile(F_prime, F, 0, zz, float("nan"), float("nan"), float("nan"),
                               float("nan"), {}, True)
    moments = {}
    for r in range(1, r_max + 1):
        glued = glue_copies(Fs, ell, r)
        try:
            h = hom_count(glued, G)
        except CapacityError:
            continue
        moments[r] = float(Fraction(h, hom_prime) / scale ** r)
    ident = moments.get(1, float(Fraction(hom_count(Fs, G), hom_prime) / scale))
    empty = zz.size == 0
    mean = float(zz.mean()) if not empty else float("nan")
    var = float(zz.var(ddof=1)) if zz.size > 1 else float("nan")
    se = math.sqrt(var / zz.size) if zz.size > 1 else float("nan")
    return FlatnessProfile(F_prime, F, int(zz.size), zz, mean, var, se, ident, moments, empty)


# ---------------------------------------------------------------------------
# inequality and assumption checks

def inequality_checks(G: Graph, max_path: int = 5) -> dict:
    """Exact checks of the four-cycle lower bound and the walk lower bound hom(P_l) >= n d^l."""
    n = G.n
    if n < 2:
        raise DomainError("need at least two vertices")
    d = Fraction(2 * G.m, n)
    c4 = hom_count(cycle(4), G)
    rhs = n * d ** 2 * (d - 1) ** 2 / (n - 1) + n * d ** 2
    from .kernel import path as path_motif
    walks = {}
    for ell in range(1, max_path + 1):
        h = hom_count(path_motif(ell), G)
        walks[ell] = {"hom": h, "bound": n * d ** ell, "margin": h - n * d ** ell,
                      "pass": h >= n * d ** ell}
    return {"n": n, "avg_degree": d, "c4": {"hom": c4, "bound": rhs, "margin": c4 - rhs,
                                            "pass": c4 >= rhs},
            "walks": walks, "pass": c4 >= rhs and all(w["pass"] for w in walks.values())}


def condition_checks(G: Graph, p: float, ell: int, M: float, sample_pairs: int = 2000,
                     seed=None) -> dict:
    """Maximum-degree condition and path uniformity p_{ell-1}(u,v) <= M n^{ell-2} p^{ell-1}.

    For ell-1 <= 3 every pair is checked exactly (blockwise matrix formulas). Longer paths are
    checked on sampled pairs plus the pairs of largest codegree.
    """
    if p <= 0 or ell < 2 or M <= 0:
        raise DomainError("need p > 0, ell >= 2, M > 0")
    n = G.n
    deg = G.degrees
    dmax = int(deg.max()) if n else 0
    deg_bound = M * p * n
    out = {"deg": {"max_degree": dmax, "bound": deg_bound, "pass": dmax <= deg_bound,
                   "witness": int(np.argmax(deg)) if n else None}}
    L = ell - 1
    bound = M * float(n) ** (ell - 2) * p ** L
    if L == 1:
        worst = (1, *map(int, G.edges()[0])) if G.m else (0, -1, -1)
        mode = "exact"
    elif L == 2:
        worst, mode = p2_row_block_max(G), "exact"
    elif L == 3:
        worst, mode = p3_row_block_max(G), "exact"
    else:
        rng = np.random.default_rng(seed)
        pairs = set()
        for _ in range(sample_pairs):
            u, v = rng.choice(n, size=2, replace=False).tolist()
            pairs.add((u, v))
        cmax = p2_row_block_max(G)
        if cmax[1] >= 0:
            pairs.add((cmax[1], cmax[2]))
        worst = (-1, -1, -1)
        for u, v in sorted(pairs):
            c = path_counts(G, L, u, v)
            if c > worst[0]:
                worst = (c, u, v)
        mode = "sampled"
    out["paths"] = {"length": L, "worst": {"count": worst[0], "u": worst[1], "v": worst[2]},
                    "bound": bound, "pass": worst[0] <= bound, "mode": mode}
    out["pass"] = out["deg"]["pass"] and out["paths"]["pass"]
    return out
