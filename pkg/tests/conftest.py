import itertools

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from sparselimits.graph_core import Graph

ACCEPTANCE_LINES = []

# fixed example streams keep the suite reproducible run to run
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


def brute_hom(F, G, injective=False):
    """Count maps V(F) -> V(G) sending every edge of F (with multiplicity) to an edge of G."""
    A = G.dense(np.int64)
    total = 0
    for phi in itertools.product(range(G.n), repeat=F.k):
        if injective and len(set(phi)) < F.k:
            continue
        if all(A[phi[u], phi[v]] for u, v in F.edges):
            total += 1
    return total


def random_graph(rng, n, p):
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    return Graph.from_edges(n, np.column_stack([iu[0][keep], iu[1][keep]]))


@st.composite
def graphs(draw, min_n=1, max_n=8):
    n = draw(st.integers(min_n, max_n))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return Graph.from_edges(n, chosen)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":a-z"))):
            terminalreporter.write_line(line)
