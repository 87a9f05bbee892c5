"""Random k-SAT / k-XORSAT instances and their combinatorial structure.

A :class:`FactorGraph` stores clauses as a dense ``(m, k)`` index array.
Edge ``e = a * k + j`` is the j-th literal of clause ``a``; the per-variable
adjacency is kept in CSR form (``var_ptr``, ``var_edges``) so the message
passing kernels can walk both sides of the bipartite graph without Python
objects.

Spins are ``+1``/``-1``; ``UNSET`` (0) marks a masked variable.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

UNSET = 0


class Kind(enum.Enum):
    SAT = "sat"
    XORSAT = "xorsat"


class Strategy(enum.Enum):
    RANDOM = "random"
    REVERSED_LEAF = "reversed-leaf"
    REVERSED_DEGREE = "reversed-degree"
    MIN_DEG_SAT = "min-degree"
    DYNAMIC_MIN_DEG_SAT = "dynamic-min-degree"


class FreePolicy(enum.Enum):
    BIASED_PLUS_ONE = "biased"
    UNIFORM_FREE = "uniform"


class WeightStrategy(enum.Enum):
    IDENTITY = "identity"
    LEAF_RANK = "leaf-rank"


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Immutable k-CSP instance.

    ``signs`` has shape ``(m, k)`` for SAT (one sign per literal) and ``(m,)``
    for XORSAT (one parity per clause).
    """

    kind: Kind
    k: int
    n_vars: int
    clause_vars: np.ndarray
    signs: np.ndarray
    var_ptr: np.ndarray = field(init=False, repr=False)
    var_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        kind = Kind(self.kind)
        if self.k < 1:
            raise ValueError(f"clause arity must be positive, got k={self.k}")
        cv = np.array(self.clause_vars, dtype=np.int64).reshape(-1, self.k)
        m = cv.shape[0]
        sg = np.array(self.signs, dtype=np.int8)
        if kind is Kind.SAT:
            sg = sg.reshape(m, self.k)
        else:
            sg = sg.reshape(m)
        if m and (cv.min() < 0 or cv.max() >= self.n_vars):
            raise ValueError("clause variable index out of range")
        if m and np.any(np.diff(np.sort(cv, axis=1), axis=1) == 0):
            bad = int(np.nonzero(np.any(np.diff(np.sort(cv, axis=1), axis=1) == 0, axis=1))[0][0])
            raise ValueError(f"clause {bad} repeats a variable")
        if sg.size and not np.all(np.abs(sg) == 1):
            raise ValueError("signs / parities must be +1 or -1")

        edges_by_var = np.argsort(cv.ravel(), kind="stable")
        counts = np.bincount(cv.ravel(), minlength=self.n_vars)
        ptr = np.zeros(self.n_vars + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        for arr in (cv, sg, ptr, edges_by_var):
            arr.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "clause_vars", cv)
        object.__setattr__(self, "signs", sg)
        object.__setattr__(self, "var_ptr", ptr)
        object.__setattr__(self, "var_edges", edges_by_var.astype(np.int64))

    @property
    def n_clauses(self) -> int:
        return self.clause_vars.shape[0]

    @property
    def alpha(self) -> float:
        return self.n_clauses / self.n_vars if self.n_vars else 0.0

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.var_ptr)

    @property
    def edge_signs(self) -> np.ndarray:
        """Per-edge sign, shape ``(m, k)``; parity broadcast for XORSAT."""
        if self.kind is Kind.SAT:
            return self.signs
        return np.repeat(self.signs[:, None], self.k, axis=1)

    @property
    def var_adjacency(self) -> list[list[tuple[int, int]]]:
        """Per variable, the ``(clause, position)`` pairs it appears in."""
        out = []
        for i in range(self.n_vars):
            edges = self.var_edges[self.var_ptr[i]:self.var_ptr[i + 1]]
            out.append([(int(e) // self.k, int(e) % self.k) for e in edges])
        return out

    def polarity_degrees(self) -> tuple[np.ndarray, np.ndarray]:
        """(deg+, deg-) counts of positive / negated occurrences (SAT only)."""
        if self.kind is not Kind.SAT:
            raise ValueError("polarity degrees are defined for SAT graphs only")
        flat_v = self.clause_vars.ravel()
        flat_s = self.signs.ravel()
        pos = np.bincount(flat_v[flat_s > 0], minlength=self.n_vars)
        neg = np.bincount(flat_v[flat_s < 0], minlength=self.n_vars)
        return pos, neg

    def __eq__(self, other):
        if not isinstance(other, FactorGraph):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.k == other.k
            and self.n_vars == other.n_vars
            and np.array_equal(self.clause_vars, other.clause_vars)
            and np.array_equal(self.signs, other.signs)
        )

    __hash__ = None


@dataclass(frozen=True)
class LeafRemovalResult:
    visit_order: tuple[tuple[int, int], ...]
    success: bool
    core_vars: frozenset[int]
    free_vars: frozenset[int]

    @property
    def visited_vars(self) -> list[int]:
        return [v for v, _ in self.visit_order]


@dataclass(frozen=True)
class OrderingPlan:
    strategy: Strategy
    permutation: Optional[np.ndarray] = None

    @property
    def dynamic(self) -> bool:
        return self.permutation is None


def _random_k_subsets(n: int, m: int, k: int, rng: np.random.Generator) -> np.ndarray:
    out = rng.integers(0, n, size=(m, k))
    while True:
        s = np.sort(out, axis=1)
        bad = np.nonzero(np.any(s[:, 1:] == s[:, :-1], axis=1))[0] if m else np.array([], int)
        if bad.size == 0:
            return out
        out[bad] = rng.integers(0, n, size=(bad.size, k))


def _check_sizes(n: int, m: int, k: int):
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"clause arity k={k} exceeds number of variables n={n}")
    if m < 0:
        raise ValueError("m must be non-negative")


def gen_random(kind, n: int, m: int, k: int, rng: np.random.Generator) -> FactorGraph:
    """Draw ``m`` clauses i.i.d. uniformly (duplicates allowed)."""
    kind = Kind(kind)
    _check_sizes(n, m, k)
    cv = _random_k_subsets(n, m, k, rng)
    if kind is Kind.SAT:
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=(m, k))
    else:
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=m)
    return FactorGraph(kind, k, n, cv, signs)


def gen_planted_sat(n: int, m: int, k: int, rng: np.random.Generator) -> tuple[FactorGraph, np.ndarray]:
    """Random k-SAT formula conditioned on a uniformly drawn assignment being a solution.

    Each clause's sign pattern is uniform over the ``2**k - 1`` patterns that
    leave at least one literal true under the planted assignment.
    """
    _check_sizes(n, m, k)
    x = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    cv = _random_k_subsets(n, m, k, rng)
    # bit j of the mask set <=> literal j agrees with x; mask 0 is the excluded pattern
    masks = rng.integers(1, 2**k, size=m)
    agree = ((masks[:, None] >> np.arange(k)) & 1).astype(bool)
    xv = x[cv] if m else np.zeros((0, k), dtype=np.int8)
    signs = np.where(agree, xv, -xv).astype(np.int8)
    return FactorGraph(Kind.SAT, k, n, cv, signs), x


def _as_full_assignment(g: FactorGraph, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int8)
    if x.shape != (g.n_vars,):
        raise ValueError(f"assignment length {x.shape} does not match n_vars={g.n_vars}")
    if np.any(x == UNSET):
        raise ValueError("assignment contains UNSET entries")
    if not np.all(np.abs(x) == 1):
        raise ValueError("assignment entries must be +1 or -1")
    return x


def check_assignment(g: FactorGraph, x) -> np.ndarray:
    """Indices of violated clauses (empty array when ``x`` solves ``g``)."""
    x = _as_full_assignment(g, x)
    if g.n_clauses == 0:
        return np.zeros(0, dtype=np.int64)
    vals = x[g.clause_vars]
    if g.kind is Kind.SAT:
        ok = np.any(vals * g.signs == 1, axis=1)
    else:
        ok = np.prod(vals, axis=1, dtype=np.int64) == g.signs
    return np.nonzero(~ok)[0]


def is_solution(g: FactorGraph, x) -> bool:
    return check_assignment(g, x).size == 0


def xorsat_solve(g: FactorGraph, free_policy=FreePolicy.UNIFORM_FREE,
                 rng: Optional[np.random.Generator] = None) -> Optional[np.ndarray]:
    """Solve the parity system by Gaussian elimination over GF(2).

    Returns ``None`` if inconsistent. ``UNIFORM_FREE`` draws the free
    variables uniformly, which makes the output uniform over all solutions;
    ``BIASED_PLUS_ONE`` pins them to +1.
    """
    if g.kind is not Kind.XORSAT:
        raise ValueError("xorsat_solve requires an XORSAT graph")
    free_policy = FreePolicy(free_policy)
    if free_policy is FreePolicy.UNIFORM_FREE and rng is None:
        raise ValueError("UniformFree policy needs an rng")
    n = g.n_vars
    # row bitset: bits 0..n-1 are coefficients, bit n is the right-hand side
    rows = []
    for a in range(g.n_clauses):
        r = 0
        for v in g.clause_vars[a]:
            r ^= 1 << int(v)
        if g.signs[a] < 0:
            r |= 1 << n
        rows.append(r)

    pivots: list[tuple[int, int]] = []  # (column, row)
    rank = 0
    for col in range(n):
        bit = 1 << col
        piv = next((i for i in range(rank, len(rows)) if rows[i] & bit), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        prow = rows[rank]
        for i in range(len(rows)):
            if i != rank and rows[i] & bit:
                rows[i] ^= prow
        pivots.append((col, rank))
        rank += 1
    rhs_bit = 1 << n
    coef_mask = rhs_bit - 1
    for i in range(rank, len(rows)):
        if rows[i] & coef_mask == 0 and rows[i] & rhs_bit:
            return None

    pivot_cols = {c for c, _ in pivots}
    z = np.zeros(n, dtype=np.int64)
    free = [c for c in range(n) if c not in pivot_cols]
    if free_policy is FreePolicy.UNIFORM_FREE and free:
        z[free] = rng.integers(0, 2, size=len(free))
    free_bits = 0
    for c in free:
        if z[c]:
            free_bits |= 1 << c
    for col, r in pivots:
        row = rows[r]
        val = (row >> n) & 1
        val ^= bin(row & coef_mask & free_bits).count("1") & 1
        z[col] = val
    return np.where(z == 1, -1, 1).astype(np.int8)


def leaf_removal(g: FactorGraph) -> LeafRemovalResult:
    """Peel degree-one variables together with their unique clause.

    Ties go to the lowest variable index.
    """
    deg = g.degrees.copy()
    alive = np.ones(g.n_clauses, dtype=bool)
    visited = np.zeros(g.n_vars, dtype=bool)
    heap = [int(i) for i in np.nonzero(deg == 1)[0]]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        if visited[v] or deg[v] != 1:
            continue
        edges = g.var_edges[g.var_ptr[v]:g.var_ptr[v + 1]]
        a = next(int(e) // g.k for e in edges if alive[int(e) // g.k])
        alive[a] = False
        visited[v] = True
        order.append((v, a))
        for w in g.clause_vars[a]:
            w = int(w)
            deg[w] -= 1
            if deg[w] == 1 and not visited[w]:
                heapq.heappush(heap, w)
    unvisited = ~visited
    core = frozenset(int(i) for i in np.nonzero(unvisited & (deg > 0))[0])
    free = frozenset(int(i) for i in np.nonzero(unvisited & (deg == 0))[0])
    return LeafRemovalResult(tuple(order), len(order) == g.n_clauses, core, free)


def _ranked_desc(score: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    tie = rng.permutation(score.size)
    return np.lexsort((tie, -score))


def compute_ordering(g: FactorGraph, strategy, leaf_result: Optional[LeafRemovalResult] = None,
                     rng: Optional[np.random.Generator] = None) -> OrderingPlan:
    strategy = Strategy(strategy)
    if strategy is Strategy.DYNAMIC_MIN_DEG_SAT:
        if g.kind is not Kind.SAT:
            raise ValueError("dynamic min-degree ordering is defined for SAT graphs")
        return OrderingPlan(strategy, None)
    if rng is None:
        raise ValueError(f"{strategy.value} ordering needs an rng")
    if strategy is Strategy.RANDOM:
        perm = rng.permutation(g.n_vars)
    elif strategy is Strategy.REVERSED_LEAF:
        if leaf_result is None:
            leaf_result = leaf_removal(g)
        if not leaf_result.success:
            raise ValueError("reversed-leaf ordering requires a successful leaf removal")
        visited = leaf_result.visited_vars
        seen = set(visited)
        rest = np.array([i for i in range(g.n_vars) if i not in seen], dtype=np.int64)
        rest = rng.permutation(rest)
        perm = np.concatenate([rest, np.array(visited[::-1], dtype=np.int64)])
    elif strategy is Strategy.REVERSED_DEGREE:
        perm = _ranked_desc(g.degrees, rng)
    else:
        pos, neg = g.polarity_degrees()
        perm = _ranked_desc(np.minimum(pos, neg), rng)
    return OrderingPlan(strategy, np.asarray(perm, dtype=np.int64))


def reduced_min_degrees(g: FactorGraph, assigned) -> np.ndarray:
    """min(deg+, deg-) per variable after dropping clauses already satisfied."""
    assigned = np.asarray(assigned, dtype=np.int8)
    if g.n_clauses == 0:
        return np.zeros(g.n_vars, dtype=np.int64)
    lit = assigned[g.clause_vars] * g.signs
    live = ~np.any(lit == 1, axis=1)
    cv = g.clause_vars[live].ravel()
    sg = g.signs[live].ravel()
    free = assigned[cv] == UNSET
    pos = np.bincount(cv[free & (sg > 0)], minlength=g.n_vars)
    neg = np.bincount(cv[free & (sg < 0)], minlength=g.n_vars)
    return np.minimum(pos, neg)


def dynamic_next_variable(g: FactorGraph, assigned, logits) -> int:
    """Next variable for the dynamic reverse min-degree ordering.

    Largest reduced deg_min first, then largest |logit|, then lowest index.
    """
    if g.kind is not Kind.SAT:
        raise ValueError("dynamic min-degree ordering is defined for SAT graphs")
    assigned = np.asarray(assigned, dtype=np.int8)
    cand = np.nonzero(assigned == UNSET)[0]
    if cand.size == 0:
        raise ValueError("every variable is already assigned")
    dmin = reduced_min_degrees(g, assigned)[cand]
    cand = cand[dmin == dmin.max()]
    mag = np.abs(np.asarray(logits, dtype=np.float64)[cand])
    cand = cand[mag == mag.max()]
    return int(cand.min())


def weight_matrix(g: FactorGraph, strategy=WeightStrategy.IDENTITY, c0: float = 0.55,
                  plan: Optional[OrderingPlan] = None, rng: Optional[np.random.Generator] = None,
                  floor: float = 0.05) -> np.ndarray:
    """Diagonal of the weight matrix W used by the continuous sampler.

    ``LEAF_RANK`` sets ``W_ii = 1 + c0 (S_i - mean S) / std S`` where ``S_i`` is
    the rank of ``i`` in the leaf-removal visit order (free variables last),
    i.e. the reverse of the reversed-leaf sampling order. Variables sampled
    early therefore get the strongest signal. Weights are floored at ``floor``.
    """
    strategy = WeightStrategy(strategy)
    n = g.n_vars
    if strategy is WeightStrategy.IDENTITY:
        return np.ones(n)
    if plan is None:
        plan = compute_ordering(g, Strategy.REVERSED_LEAF, rng=rng)
    if plan.strategy is not Strategy.REVERSED_LEAF:
        raise ValueError("leaf-rank weights need a reversed-leaf plan")
    s = np.empty(n)
    s[plan.permutation] = n - np.arange(n)
    return np.maximum(rank_weights(s, c0), floor)


def rank_weights(ranks, c0: float) -> np.ndarray:
    """``1 + c0 * zscore(ranks)`` with population std (no clamping)."""
    s = np.asarray(ranks, dtype=np.float64)
    sd = s.std()
    if s.size < 2 or sd == 0:
        return np.ones_like(s)
    return 1.0 + c0 * (s - s.mean()) / sd
