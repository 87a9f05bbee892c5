import numpy as np
import pytest

from cspd.instance import FactorGraph, Kind

ACCEPTANCE_LINES: list[str] = []


def random_tree_graph(kind: Kind, k: int, n_max: int, rng: np.random.Generator,
                      extra_isolated: int = 0) -> FactorGraph:
    """Connected tree-shaped factor graph: every new clause hangs off one existing variable."""
    n_vars = 1
    clauses = []
    n_clauses = int(rng.integers(1, (n_max - 1) // (k - 1) + 1))
    for _ in range(n_clauses):
        anchor = int(rng.integers(0, n_vars))
        fresh = list(range(n_vars, n_vars + k - 1))
        n_vars += k - 1
        members = [anchor] + fresh
        rng.shuffle(members)
        clauses.append(members)
    n = n_vars + extra_isolated
    # relabel so the anchor structure is not visible in the indices
    perm = rng.permutation(n)
    cv = perm[np.array(clauses, dtype=np.int64)]
    m = len(clauses)
    if kind is Kind.SAT:
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=(m, k))
    else:
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=m)
    return FactorGraph(kind, k, n, cv, signs)


def single_clause(kind: Kind, k: int = 3, n: int | None = None, sign=1) -> FactorGraph:
    n = k if n is None else n
    cv = np.arange(k)[None, :]
    signs = np.full((1, k), sign, dtype=np.int8) if kind is Kind.SAT else np.array([sign], dtype=np.int8)
    return FactorGraph(kind, k, n, cv, signs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
