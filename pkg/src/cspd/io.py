"""DIMACS serialization.

SAT instances use plain DIMACS CNF. XORSAT instances use ``x``-prefixed
clause lines under a ``p xnf`` header: ``x l1 l2 ... 0`` with signed 1-based
literals asserts that the product of the literal spins is +1, so the clause
parity is the product of the literal signs. On output the parity is carried
by the first literal and the rest are positive.
"""

from __future__ import annotations

import numpy as np

from .instance import FactorGraph, Kind


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def serialize(g: FactorGraph) -> str:
    lines = []
    if g.kind is Kind.SAT:
        lines.append(f"p cnf {g.n_vars} {g.n_clauses}")
        for vs, ss in zip(g.clause_vars, g.signs):
            lits = [int(s) * (int(v) + 1) for v, s in zip(vs, ss)]
            lines.append(" ".join(map(str, lits)) + " 0")
    else:
        lines.append(f"p xnf {g.n_vars} {g.n_clauses}")
        for vs, s in zip(g.clause_vars, g.signs):
            lits = [int(v) + 1 for v in vs]
            lits[0] *= int(s)
            lines.append("x " + " ".join(map(str, lits)) + " 0")
    return "\n".join(lines) + "\n"


def parse(text: str, k: int | None = None) -> FactorGraph:
    """Parse DIMACS CNF or the XOR extension; the kind is taken from the header."""
    header = None
    kind = None
    clauses: list[list[int]] = []
    linenos: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            if header is not None:
                raise ParseError(lineno, "duplicate problem line")
            parts = line.split()
            if len(parts) != 4 or parts[1] not in ("cnf", "xnf", "xor"):
                raise ParseError(lineno, f"malformed problem line {line!r}")
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError:
                raise ParseError(lineno, f"malformed problem line {line!r}") from None
            if n < 0 or m < 0:
                raise ParseError(lineno, "negative counts in problem line")
            header = (n, m)
            kind = Kind.SAT if parts[1] == "cnf" else Kind.XORSAT
            continue
        if header is None:
            raise ParseError(lineno, "clause before problem line")
        is_xor = line.startswith("x")
        if is_xor:
            line = line[1:]
            if kind is Kind.SAT and clauses:
                raise ParseError(lineno, "XOR clause in a CNF instance")
            kind = Kind.XORSAT
        elif kind is Kind.XORSAT:
            raise ParseError(lineno, "plain clause in an XOR instance")
        try:
            lits = [int(t) for t in line.split()]
        except ValueError:
            raise ParseError(lineno, f"non-integer literal in {raw!r}") from None
        if not lits or lits[-1] != 0:
            raise ParseError(lineno, "clause not terminated by 0")
        lits = lits[:-1]
        if 0 in lits:
            raise ParseError(lineno, "literal 0 inside clause")
        n = header[0]
        if any(abs(l) > n for l in lits):
            raise ParseError(lineno, f"literal out of range 1..{n}")
        if len({abs(l) for l in lits}) != len(lits):
            raise ParseError(lineno, "repeated variable in clause")
        if k is None:
            k = len(lits)
        if len(lits) != k:
            raise ParseError(lineno, f"clause has {len(lits)} literals, expected {k}")
        clauses.append(lits)
        linenos.append(lineno)
    if header is None:
        raise ParseError(0, "missing problem line")
    n, m = header
    if len(clauses) != m:
        raise ParseError(linenos[-1] if linenos else 0,
                         f"header declares {m} clauses, found {len(clauses)}")
    if k is None:
        k = 2  # no clauses to infer arity from
    if k > n and m:
        raise ParseError(linenos[0], f"arity {k} exceeds {n} variables")
    lits = np.array(clauses, dtype=np.int64).reshape(m, k)
    cv = np.abs(lits) - 1
    sg = np.sign(lits).astype(np.int8)
    if kind is Kind.XORSAT:
        sg = np.prod(sg, axis=1).astype(np.int8) if m else np.zeros(0, dtype=np.int8)
    return FactorGraph(kind, k, n, cv, sg)


def read(path) -> FactorGraph:
    with open(path, encoding="utf-8") as f:
        return parse(f.read())


def write(g: FactorGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize(g))


def format_assignment(x) -> str:
    """Assignment as a DIMACS ``v`` line of signed literals."""
    return "v " + " ".join(str(int(s) * (i + 1)) for i, s in enumerate(x)) + " 0"


def parse_assignment(text: str) -> np.ndarray:
    vals = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("v"):
            line = line[1:]
        elif not line or line.startswith("c") or line.startswith("s"):
            continue
        vals.extend(int(t) for t in line.split())
    if vals and vals[-1] == 0:
        vals = vals[:-1]
    lits = np.array(vals, dtype=np.int64)
    if np.any(lits == 0):
        raise ValueError("literal 0 inside assignment")
    x = np.zeros(lits.size, dtype=np.int8)
    idx = np.abs(lits) - 1
    if idx.size and (np.sort(idx) != np.arange(idx.size)).any():
        raise ValueError("assignment must list every variable exactly once")
    x[idx] = np.sign(lits)
    return x
