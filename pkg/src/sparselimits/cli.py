"""Command-line runner: count, converge, regularity and examples.

Exit codes: 0 ok, 2 configuration error, 3 capacity error, 4 failed example check.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__
from .counts import condition_checks, emb_count, inequality_checks, normalized_counts
from .cutnorm import cut_norm, dhat_cut, difference, graph_kernel_cut
from .errors import CapacityError, ConfigError, DomainError
from .graph_core import (Graph, blow_up, bounded_density_scan, complete_graph, graph_to_kernel,
                         read_edge_list)
from .kernel import (StepKernel, cycle, edge, load_kernel, motif_density, named_kernel, parse_motif,
                     path_power, simple_motifs, uniform_kernel)
from .partition_metric import partition_distance
from .regularity import (match_to_kernel, quotient_kernel, strong_regular_partition,
                         weak_regular_partition)
from .sampler import CONSTRUCTIONS, construct_polarity_graph, sample_inhomogeneous

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_FAILED = 0, 2, 3, 4

# ---------------------------------------------------------------------------
# p expressions: c, n^-a, 1/log n, sqrt(log n / n), each optionally times a constant

_NUM = r"[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?"
_TERMS = [
    (re.compile(rf"^n\s*\^\s*\(?\s*-\s*({_NUM})\s*\)?$"), lambda a: (lambda n: n ** -a)),
    (re.compile(r"^1\s*/\s*log\s*\(?\s*n\s*\)?$"), lambda: (lambda n: 1.0 / math.log(n))),
    (re.compile(r"^sqrt\s*\(\s*log\s*\(?\s*n\s*\)?\s*/\s*n\s*\)$"),
     lambda: (lambda n: math.sqrt(math.log(n) / n))),
]


def parse_p_expr(text: str):
    """Return n -> p for the tiny density grammar; raises ConfigError otherwise."""
    s = text.strip()
    coef = 1.0
    m = re.match(rf"^({_NUM})\s*\*\s*(.+)$", s)
    if m:
        coef, s = float(m.group(1)), m.group(2).strip()
    if re.fullmatch(_NUM, s):
        c = coef * float(s)
        if not 0 < c <= 1:
            raise ConfigError(f"constant p must lie in (0, 1]: {text!r}")
        return lambda n: c
    for pat, make in _TERMS:
        m = pat.match(s)
        if m:
            f = make(*(float(g) for g in m.groups()))
            return lambda n: coef * f(n)
    raise ConfigError(f"unsupported p expression {text!r}; use c, n^-a, 1/log n, sqrt(log n / n)")


def _p_of(fn, n: int) -> float:
    p = fn(n)
    if not 0 < p <= 1:
        raise ConfigError(f"p({n}) = {p} is outside (0, 1]")
    return p


def _value(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def parse_spec(text: str) -> tuple[str, dict]:
    """'name:key=val,key=val' -> (name, params)."""
    name, _, rest = text.partition(":")
    params = {}
    for item in filter(None, (x.strip() for x in rest.split(","))):
        if "=" not in item:
            raise ConfigError(f"expected key=value in {text!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = _value(v.strip())
    return name.strip(), params


def load_kernel_arg(text: str) -> StepKernel:
    if os.path.exists(text):
        try:
            return load_kernel(text)
        except (ValueError, KeyError, DomainError) as exc:
            raise ConfigError(f"{text}: {exc}") from exc
    name, params = parse_spec(text)
    try:
        return named_kernel(name, **params)
    except DomainError as exc:
        raise ConfigError(f"kernel {text!r}: {exc}") from exc


def parse_n_grid(text: str | None) -> list[int]:
    if text is None:
        return []
    try:
        grid = [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise ConfigError(f"bad --n-grid {text!r}") from exc
    if any(n < 2 for n in grid):
        raise ConfigError("grid sizes must be >= 2")
    return grid


# ---------------------------------------------------------------------------
# graph sources

def _build(args, n: int | None, seed):
    """(graph, p_default, latent types, description) from --graph, --construction or --kernel."""
    if args.graph:
        if not os.path.exists(args.graph):
            raise ConfigError(f"{args.graph}: no such file")
        G, _ = read_edge_list(args.graph)
        return G, None, None, args.graph
    if args.construction:
        name, params = parse_spec(args.construction)
        if name not in CONSTRUCTIONS:
            raise ConfigError(f"unknown construction {name!r}; known: {sorted(CONSTRUCTIONS)}")
        if n is not None and name != "polarity":
            params["n"] = n
        if name != "polarity":
            params.setdefault("seed", seed)
        try:
            rec = CONSTRUCTIONS[name](**params)
        except TypeError as exc:
            raise ConfigError(f"construction {name}: {exc}") from exc
        return rec.graph, rec.p_effective, rec.latent_types, f"{name}:{params}"
    if args.kernel:
        if n is None:
            raise ConfigError("--kernel needs --n-grid")
        kappa = load_kernel_arg(args.kernel)
        if not args.p_expr:
            raise ConfigError("--kernel needs --p-expr")
        p = _p_of(parse_p_expr(args.p_expr), n)
        rec = sample_inhomogeneous(n, kappa, p, seed)
        return rec.graph, p, rec.latent_types, f"kernel:{args.kernel}"
    raise ConfigError("one of --graph, --construction or --kernel is required")


# ---------------------------------------------------------------------------
# output

def _emit(rows: list[dict], header: list[str], config: dict, fmt: str, out: str | None):
    if fmt == "json":
        text = json.dumps({"config": config, "rows": rows}, indent=2, default=_jsonable) + "\n"
    else:
        buf = io.StringIO()
        buf.write("# config=" + json.dumps(config, sort_keys=True, default=_jsonable) + "\n")
        w = csv.DictWriter(buf, fieldnames=header, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in header})
        text = buf.getvalue()
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Fraction):
        return str(x)
    return str(x)


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"} | {"version": __version__}


# ---------------------------------------------------------------------------
# commands

COUNT_HEADER = ["experiment", "n", "p", "motif", "hom", "emb", "t_p", "s_p", "method", "error",
                "seed", "wall_time"]


def cmd_count(args) -> int:
    if not args.motifs:
        raise ConfigError("--motifs is required")
    motifs = [parse_motif(m) for m in args.motifs]
    grid = parse_n_grid(args.n_grid) or [None]
    rows, capacity = [], False
    for n in grid:
        G, p_default, _, desc = _build(args, n, args.seed)
        p = _p_of(parse_p_expr(args.p_expr), G.n) if args.p_expr else (p_default or 1.0)
        for F in motifs:
            t0 = time.perf_counter()
            row = {"experiment": desc, "n": G.n, "p": p, "motif": F.label, "seed": args.seed}
            try:
                rep = normalized_counts(F, G, p)
                row.update(hom=rep.hom, emb=rep.emb, t_p=rep.t_p, s_p=rep.s_p, method=rep.method)
            except CapacityError as exc:
                capacity = True
                row["error"] = f"capacity: {exc}"
            row["wall_time"] = round(time.perf_counter() - t0, 4)
            rows.append(row)
    _emit(rows, COUNT_HEADER, _config(args), args.format, args.out)
    return EXIT_CAPACITY if capacity else EXIT_OK


CONVERGE_HEADER = ["experiment", "n", "p", "statistic", "value", "stderr", "seed", "budget",
                   "wall_time"]


def _trend(values: list[float]) -> str:
    if len(values) < 2:
        return "n/a"
    d = np.diff(values)
    if np.all(d < 0):
        return "decreasing"
    if np.all(d > 0):
        return "increasing"
    return "none"


def _converge_cell(args, n: int, sd: int) -> list[dict]:
    stats = args.stat or ["counts"]
    motifs = [parse_motif(m) for m in (args.motifs or ["C4"])]
    kappa = load_kernel_arg(args.kernel) if args.kernel else None
    G, p_default, types, desc = _build(args, n, sd)
    p = _p_of(parse_p_expr(args.p_expr), G.n) if args.p_expr else (p_default or 1.0)
    base = {"experiment": desc, "n": G.n, "p": p, "seed": sd, "budget": args.budget}
    rows = []
    if "counts" in stats:
        for F in motifs:
            t0 = time.perf_counter()
            rep = normalized_counts(F, G, p)
            rows.append(base | {"statistic": f"s_p({F.label})", "value": rep.s_p,
                                "wall_time": round(time.perf_counter() - t0, 4)})
    if "cut" in stats:
        if kappa is None or types is None:
            raise ConfigError("the cut statistic needs --kernel (type-aligned estimate)")
        t0 = time.perf_counter()
        est = graph_kernel_cut(G, kappa, p, alignment="given", types=types,
                               restarts=args.budget, seed=sd)
        rows.append(base | {"statistic": "cut_aligned", "value": est.value,
                            "wall_time": round(time.perf_counter() - t0, 4)})
    if "partition" in stats:
        t0 = time.perf_counter()
        other = kappa if kappa is not None else graph_to_kernel(G, p)
        pd = partition_distance(G, other, p, k_max=args.k_max, k_min=2,
                                budget=args.budget, seed=sd)
        for k, d in pd.per_k.items():
            rows.append(base | {"statistic": f"d_H(k={k})", "value": d,
                                "wall_time": round(time.perf_counter() - t0, 4)})
    return rows


def cmd_converge(args) -> int:
    grid = parse_n_grid(args.n_grid)
    if not grid:
        raise ConfigError("--n-grid must list at least one size")
    for s in args.stat or ["counts"]:
        if s not in ("counts", "cut", "partition"):
            raise ConfigError(f"unknown statistic {s!r}")
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    seeds = [args.seed + i for i in range(args.seeds)]
    cells = [(n, sd) for n in grid for sd in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            chunks = list(pool.map(_converge_cell, [args] * len(cells), *zip(*cells)))
    else:
        chunks = [_converge_cell(args, n, sd) for n, sd in cells]
    rows = sorted((r for c in chunks for r in c), key=lambda r: (r["statistic"], r["n"], r["seed"]))
    # summary rows: median over seeds per n, with the trend across the grid
    names = sorted({r["statistic"] for r in rows})
    for name in names:
        meds, spreads = [], []
        ns = sorted({r["n"] for r in rows if r["statistic"] == name})
        for n in ns:
            vals = [r["value"] for r in rows if r["statistic"] == name and r["n"] == n]
            vals = [v for v in vals if v == v]
            meds.append(float(np.median(vals)) if vals else float("nan"))
            spreads.append(float(np.std(vals)) if vals else float("nan"))
        for n, m, s in zip(ns, meds, spreads):
            rows.append({"experiment": "summary", "n": n, "statistic": f"median:{name}", "value": m,
                         "stderr": s / math.sqrt(max(1, len(seeds)))})
        rows.append({"experiment": "summary", "statistic": f"trend:{name}",
                     "value": _trend(meds), "stderr": None})
        rows.append({"experiment": "summary", "statistic": f"spread_trend:{name}",
                     "value": _trend(spreads), "stderr": None})
    _emit(rows, CONVERGE_HEADER, _config(args), args.format, args.out)
    return EXIT_OK


REG_HEADER = ["experiment", "n", "p", "kind", "eps", "rounds", "parts", "cut_certificate",
              "irregular_pairs", "kernel_match", "seed", "wall_time"]


def cmd_regularity(args) -> int:
    if args.eps is None or args.eps <= 0:
        raise ConfigError("--eps must be positive")
    if args.C <= 0:
        raise ConfigError("--C must be positive")
    grid = parse_n_grid(args.n_grid)
    n = grid[0] if grid else None
    G, p_default, _, desc = _build(args, n, args.seed)
    p = _p_of(parse_p_expr(args.p_expr), G.n) if args.p_expr else (p_default or 1.0)
    t0 = time.perf_counter()
    if args.kind == "weak":
        rep = weak_regular_partition(G, p, args.eps, C=args.C, seed=args.seed)
    else:
        rep = strong_regular_partition(G, p, args.eps, C=args.C, seed=args.seed,
                                       max_rounds=args.max_rounds)
    wall = time.perf_counter() - t0
    match = None
    if args.kernel and G.m:
        match = match_to_kernel(quotient_kernel(G, rep.partition, p), load_kernel_arg(args.kernel))[0]
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json() + "\n")
    row = {"experiment": desc, "n": G.n, "p": p, "kind": rep.kind, "eps": args.eps,
           "rounds": rep.rounds, "parts": rep.partition.k, "cut_certificate": rep.cut_certificate,
           "irregular_pairs": len(rep.irregular_pairs), "kernel_match": match, "seed": args.seed,
           "wall_time": round(wall, 4)}
    _emit([row], REG_HEADER, _config(args), args.format, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# examples: each returns rows (check, measured, target, pass)

def _ex_chessboard():
    k1, k2 = named_kernel("chessboard1"), named_kernel("chessboard2")
    rows = []
    for k in range(2, 6):
        for F in simple_motifs(k):
            v = motif_density(F, k1)
            rows.append((f"s({F.label},chessboard1)", v, 2.0 ** (1 - k), abs(v - 2.0 ** (1 - k)) <= 1e-12))
    v = motif_density(cycle(5), k2)
    rows.append(("s(C5,chessboard2)", v, 0.0, abs(v) <= 1e-12))
    return rows


def _ex_dhat():
    K3 = complete_graph(3)
    one = Graph.from_edges(3, [(0, 1)])
    d = dhat_cut(K3, one)
    rows = [("dhat(K3, one edge)", str(d.upper_fraction), "2/9", d.upper_fraction == Fraction(2, 9)
             and d.exact)]
    b = dhat_cut(blow_up(K3, 2), blow_up(one, 2), budget=4000, seed=0)
    rows.append(("dhat over blow-up pairings", str(b.upper_fraction), "<= 1/6",
                 b.upper_fraction <= Fraction(1, 6)))
    return rows


def _ex_polarity():
    rows = []
    for q in (3, 5, 7, 17):
        G = construct_polarity_graph(q).graph
        e = emb_count(cycle(4), G)
        rows.append((f"emb(C4) q={q}", e, 0, e == 0))
    G = construct_polarity_graph(17).graph
    ratio = G.m / (G.n ** 1.5 / 2)
    rows.append(("e / (n^1.5/2) q=17", ratio, "[0.9,1.1]", 0.9 <= ratio <= 1.1))
    return rows


def _ex_subdivision():
    from .kernel import double_edge, triangle_multigraph
    rng = np.random.default_rng(7)
    rows = []
    for trial in range(3):
        W = rng.random((4, 4))
        kap = StepKernel(rng.dirichlet(np.ones(4)), W + W.T)
        for F in (edge(), double_edge(), triangle_multigraph()):
            for t in (2, 3):
                a = motif_density(F.subdivide(t), kap)
                b = motif_density(F, path_power(kap, t))
                rows.append((f"s({F.label}_sub{t}) vs s({F.label}, kappa^{t}) #{trial}", a - b, 0.0,
                             abs(a - b) <= 1e-12 * max(1.0, abs(a))))
    return rows


def _ex_inequalities():
    from .sampler import sample_gnp
    rows = []
    ok = True
    for s in range(20):
        G = sample_gnp(30, 0.2 + 0.02 * s, seed=s).graph
        ok &= inequality_checks(G)["pass"]
    rows.append(("C4 lower bound and walk bound on 20 G(30,p)", ok, True, bool(ok)))
    return rows


def _ex_planted_clique():
    from .sampler import construct_planted_clique, sample_gnp
    n = 5000
    p = n ** -0.4
    bad = construct_planted_clique(n, 1.5, p=p, seed=0).graph
    good = sample_gnp(n, p, seed=0).graph
    rows = []
    for name, G, want in (("planted clique", bad, False), ("G(n,p)", good, True)):
        scan = bounded_density_scan(G, p, 0.1 if want else 0.04, 2.0, seed=0)
        cond = condition_checks(G, p, 4, 2.0, seed=0)
        rows.append((f"density scan passes: {name}", scan.passed, want, scan.passed == want))
        rows.append((f"condition checks pass: {name}", cond["pass"], want, cond["pass"] == want))
    return rows


def _ex_too_few_triangles():
    from .sampler import construct_too_few_triangles
    rec = construct_too_few_triangles(10_000, 0.5, seed=0)
    p = rec.p_effective
    c4 = normalized_counts(cycle(4), rec.graph, p).s_p
    c3 = normalized_counts(cycle(3), rec.graph, p).s_p
    return [("s_p(C4)", c4, "[0.85,1.15]", 0.85 <= c4 <= 1.15),
            ("s_p(C3)", c3, "< 0.8", c3 < 0.8),
            ("(G,G,H)-triangles", rec.meta["gg_h_triangles"], 0, rec.meta["gg_h_triangles"] == 0)]


def _ex_quasirandom():
    from .kernel import complete_bipartite, star
    from .sampler import sample_gnp
    n = 4000
    p = n ** -0.3
    motifs = [edge(), cycle(4), cycle(6), star(3), complete_bipartite(2, 2)]
    vals = np.zeros((10, len(motifs)))
    for sd in range(10):
        G = sample_gnp(n, p, seed=sd).graph
        vals[sd] = [normalized_counts(F, G, p).s_p for F in motifs]
    means = vals.mean(axis=0)
    return [(f"mean s_p({F.label}) over 10 seeds", float(m), "1 +- 0.05", abs(m - 1) <= 0.05)
            for F, m in zip(motifs, means)]


EXAMPLES = {
    "chessboard-moments": _ex_chessboard,
    "dhat-triangle": _ex_dhat,
    "polarity-c4free": _ex_polarity,
    "subdivision-identity": _ex_subdivision,
    "walk-inequalities": _ex_inequalities,
    "assumption-falsifiers": _ex_planted_clique,
    "too-few-triangles": _ex_too_few_triangles,
    "quasirandom": _ex_quasirandom,
}

EX_HEADER = ["example", "check", "measured", "target", "pass"]


def cmd_examples(args) -> int:
    if args.list or not args.name:
        for name in EXAMPLES:
            print(name)
        return EXIT_OK
    if args.name not in EXAMPLES:
        raise ConfigError(f"unknown example {args.name!r}; known: {', '.join(EXAMPLES)}")
    rows = [{"example": args.name, "check": c, "measured": m, "target": t, "pass": bool(ok)}
            for c, m, t, ok in EXAMPLES[args.name]()]
    _emit(rows, EX_HEADER, _config(args), args.format, args.out)
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAILED


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparselimits", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, sources=True):
        if sources:
            p.add_argument("--graph", help="edge-list file")
            p.add_argument("--construction", help="name:key=val,... (gnp, too_few_triangles, ...)")
            p.add_argument("--kernel", help="kernel JSON file or named kernel spec, e.g. constant:c=1")
            p.add_argument("--p-expr", help="density: c, n^-a, 1/log n, sqrt(log n / n), times c")
            p.add_argument("--n-grid", help="comma-separated vertex counts")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--budget", type=int, default=50)
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("count", help="hom/emb counts and normalized densities")
    common(p)
    p.add_argument("--motifs", nargs="+", help="e.g. K2 C4 K2,3 Theta3,3 {0-1,1-2}")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("converge", help="statistics over an n grid and several seeds")
    common(p)
    p.add_argument("--motifs", nargs="+")
    p.add_argument("--stat", nargs="+", help="counts, cut, partition")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds per n")
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for (n, seed) cells")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("regularity", help="weak or strong regular partition")
    common(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--C", type=float, default=2.0)
    p.add_argument("--kind", choices=("weak", "strong"), default="weak")
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--json-out", help="serialized report (partition, energy trace, witnesses)")
    p.set_defaults(func=cmd_regularity)

    p = sub.add_parser("examples", help="run a registered example with its pass/fail checks")
    common(p, sources=False)
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    p.set_defaults(func=cmd_examples)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY


if __name__ == "__main__":
    sys.exit(main())
