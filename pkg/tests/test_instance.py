import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cspd.bp import enumerate_assignments, solution_mask
from cspd.instance import (
    UNSET,
    FactorGraph,
    FreePolicy,
    Kind,
    Strategy,
    WeightStrategy,
    check_assignment,
    compute_ordering,
    dynamic_next_variable,
    gen_planted_sat,
    gen_random,
    is_solution,
    leaf_removal,
    rank_weights,
    reduced_min_degrees,
    weight_matrix,
    xorsat_solve,
)

from conftest import single_clause


# ------------------------------------------------------------- generation


def test_empty_xorsat_graph():
    g = gen_random(Kind.XORSAT, 4, 0, 3, np.random.default_rng(0))
    assert g.n_clauses == 0 and g.n_vars == 4
    assert np.all(g.degrees == 0)


def test_generation_is_deterministic():
    a = gen_random(Kind.SAT, 50, 100, 4, np.random.default_rng(9))
    b = gen_random(Kind.SAT, 50, 100, 4, np.random.default_rng(9))
    assert a == b


def test_arity_larger_than_n_rejected():
    with pytest.raises(ValueError):
        gen_random(Kind.SAT, 3, 1, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        gen_random(Kind.SAT, 5, 1, 1, np.random.default_rng(0))


def test_sign_balance():
    g = gen_random(Kind.SAT, 1000, 2000, 4, np.random.default_rng(1))
    s = g.signs.astype(float).ravel()
    assert abs(s.mean()) < 3 / math.sqrt(s.size)


def test_clause_sets_are_distinct_and_uniform():
    g = gen_random(Kind.XORSAT, 10, 20000, 3, np.random.default_rng(2))
    assert np.all(np.diff(np.sort(g.clause_vars, axis=1), axis=1) > 0)
    counts = np.bincount(g.clause_vars.ravel(), minlength=10)
    assert stats.chisquare(counts).pvalue > 0.001


def test_var_adjacency_is_transpose():
    g = gen_random(Kind.SAT, 30, 60, 3, np.random.default_rng(3))
    seen = set()
    for i, adj in enumerate(g.var_adjacency):
        for a, j in adj:
            assert g.clause_vars[a, j] == i
            seen.add((a, j))
    assert len(seen) == g.n_clauses * g.k


def test_factor_graph_rejects_bad_input():
    with pytest.raises(ValueError):
        FactorGraph(Kind.SAT, 3, 3, [[0, 0, 1]], [[1, 1, 1]])
    with pytest.raises(ValueError):
        FactorGraph(Kind.SAT, 3, 3, [[0, 1, 3]], [[1, 1, 1]])
    with pytest.raises(ValueError):
        FactorGraph(Kind.XORSAT, 3, 3, [[0, 1, 2]], [0])


def test_planted_assignment_satisfies():
    for seed in range(20):
        g, x = gen_planted_sat(40, 200, 4, np.random.default_rng(seed))
        assert is_solution(g, x)


def test_planted_never_emits_falsifying_pattern():
    for seed in range(300):
        g, x = gen_planted_sat(4, 1, 4, np.random.default_rng(seed))
        assert np.any(g.signs[0] * x[g.clause_vars[0]] == 1)


def test_planted_sign_patterns_uniform():
    g, x = gen_planted_sat(30, 10000, 4, np.random.default_rng(4))
    agree = (g.signs * x[g.clause_vars] == 1).astype(int)
    codes = agree @ (1 << np.arange(4))
    counts = np.bincount(codes, minlength=16)
    assert counts[0] == 0
    p = 1 / 15
    sigma = math.sqrt(10000 * p * (1 - p))
    assert np.all(np.abs(counts[1:] - 10000 * p) < 3 * sigma)


# ------------------------------------------------------------ checking


def test_check_assignment_examples():
    g = single_clause(Kind.SAT)
    assert check_assignment(g, [-1, -1, -1]).tolist() == [0]
    assert check_assignment(g, [-1, 1, -1]).size == 0
    h = single_clause(Kind.XORSAT)
    assert check_assignment(h, [1, 1, 1]).size == 0
    assert check_assignment(h, [1, -1, 1]).tolist() == [0]


def test_check_assignment_rejects_unset():
    g = single_clause(Kind.SAT)
    with pytest.raises(ValueError):
        check_assignment(g, [1, UNSET, 1])


def _slow_check(g, x):
    bad = []
    for a in range(g.n_clauses):
        vals = [int(x[v]) for v in g.clause_vars[a]]
        if g.kind is Kind.SAT:
            ok = any(v * int(s) == 1 for v, s in zip(vals, g.signs[a]))
        else:
            ok = math.prod(vals) == int(g.signs[a])
        if not ok:
            bad.append(a)
    return bad


def test_check_assignment_matches_redundant_oracle():
    rng = np.random.default_rng(5)
    for case in range(1000):
        kind = Kind.SAT if case % 2 else Kind.XORSAT
        g = gen_random(kind, 8, int(rng.integers(0, 12)), 3, rng)
        x = rng.choice(np.array([-1, 1], dtype=np.int8), size=8)
        assert check_assignment(g, x).tolist() == _slow_check(g, x)


# ------------------------------------------------------------ xorsat_solve


def test_xorsat_solve_two_var_uniform():
    g = FactorGraph(Kind.XORSAT, 2, 2, [[0, 1]], [-1])
    rng = np.random.default_rng(6)
    counts = {(1, -1): 0, (-1, 1): 0}
    for _ in range(10000):
        x = xorsat_solve(g, FreePolicy.UNIFORM_FREE, rng)
        counts[tuple(int(v) for v in x)] += 1
    assert stats.chisquare(list(counts.values())).pvalue > 0.01


def test_xorsat_solve_inconsistent():
    g = FactorGraph(Kind.XORSAT, 3, 3, [[0, 1, 2], [0, 1, 2]], [1, -1])
    assert xorsat_solve(g, FreePolicy.BIASED_PLUS_ONE) is None


def test_xorsat_solve_biased_pins_free_to_plus():
    g = FactorGraph(Kind.XORSAT, 3, 5, [[0, 1, 2]], [-1])
    x = xorsat_solve(g, FreePolicy.BIASED_PLUS_ONE)
    assert is_solution(g, x)
    assert x[3] == 1 and x[4] == 1


def test_xorsat_solve_wrong_kind():
    with pytest.raises(ValueError):
        xorsat_solve(single_clause(Kind.SAT), FreePolicy.BIASED_PLUS_ONE)


def test_xorsat_solve_uniform_over_solution_set():
    rng = np.random.default_rng(7)
    g = gen_random(Kind.XORSAT, 12, 6, 3, rng)
    X = enumerate_assignments(12)
    sols = X[solution_mask(g, X)]
    index = {tuple(s): i for i, s in enumerate(sols.tolist())}
    counts = np.zeros(len(sols))
    for _ in range(50 * len(sols)):
        x = xorsat_solve(g, FreePolicy.UNIFORM_FREE, rng)
        counts[index[tuple(x.tolist())]] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_xorsat_solve_agrees_with_enumeration_on_satisfiability():
    rng = np.random.default_rng(8)
    for _ in range(100):
        g = gen_random(Kind.XORSAT, 8, int(rng.integers(1, 12)), 3, rng)
        X = enumerate_assignments(8)
        has = solution_mask(g, X).any()
        x = xorsat_solve(g, FreePolicy.UNIFORM_FREE, rng)
        assert (x is not None) == has
        if x is not None:
            assert is_solution(g, x)


# ------------------------------------------------------------ leaf removal


def test_leaf_removal_single_clause():
    res = leaf_removal(single_clause(Kind.XORSAT))
    assert res.success
    assert res.visit_order == ((0, 0),)
    assert res.core_vars == frozenset()


def test_leaf_removal_stuck_core():
    g = FactorGraph(Kind.XORSAT, 3, 3, [[0, 1, 2]] * 3, [1, 1, 1])
    res = leaf_removal(g)
    assert not res.success
    assert res.core_vars == frozenset({0, 1, 2})
    assert res.visit_order == ()


def test_leaf_removal_partition():
    rng = np.random.default_rng(9)
    for _ in range(50):
        g = gen_random(Kind.XORSAT, 30, int(rng.integers(0, 30)), 3, rng)
        res = leaf_removal(g)
        visited = set(res.visited_vars)
        assert len(visited) == len(res.visit_order) <= g.n_clauses
        assert res.success == (len(res.visit_order) == g.n_clauses)
        assert not (visited & res.core_vars) and not (visited & res.free_vars)
        assert len(visited) + len(res.core_vars) + len(res.free_vars) == g.n_vars


def test_leaf_removal_success_implies_consistent():
    rng = np.random.default_rng(10)
    checked = 0
    for _ in range(500):
        g = gen_random(Kind.XORSAT, 10, int(rng.integers(1, 9)), 3, rng)
        res = leaf_removal(g)
        if res.success:
            checked += 1
            assert g.n_vars - g.n_clauses >= 0
            assert xorsat_solve(g, FreePolicy.BIASED_PLUS_ONE) is not None
    assert checked > 100


def test_leaf_removal_threshold_straddle():
    rng = np.random.default_rng(11)
    ok_low = sum(leaf_removal(gen_random(Kind.XORSAT, 2000, 1400, 4, rng)).success for _ in range(200))
    ok_high = sum(leaf_removal(gen_random(Kind.XORSAT, 2000, 1700, 4, rng)).success for _ in range(200))
    assert ok_low >= 190
    assert ok_high <= 10


# ------------------------------------------------------------ orderings


def test_reversed_leaf_samples_removed_variable_last():
    g = single_clause(Kind.XORSAT, n=4)
    for seed in range(10):
        plan = compute_ordering(g, Strategy.REVERSED_LEAF, rng=np.random.default_rng(seed))
        assert plan.permutation[-1] == 0
        assert sorted(plan.permutation[:3].tolist()) == [1, 2, 3]


def test_reversed_leaf_rejects_failed_removal():
    g = FactorGraph(Kind.XORSAT, 3, 3, [[0, 1, 2]] * 3, [1, 1, 1])
    with pytest.raises(ValueError):
        compute_ordering(g, Strategy.REVERSED_LEAF, rng=np.random.default_rng(0))


def test_min_degree_prefers_balanced_variable():
    # var 0: deg+=3, deg-=0; var 1: deg+=2, deg-=2
    cv = [[0, 1, 2], [0, 1, 3], [0, 1, 4], [1, 2, 3]]
    sg = [[1, 1, 1], [1, 1, 1], [1, -1, 1], [-1, 1, 1]]
    g = FactorGraph(Kind.SAT, 3, 5, cv, sg)
    for seed in range(10):
        perm = compute_ordering(g, Strategy.MIN_DEG_SAT, rng=np.random.default_rng(seed)).permutation.tolist()
        assert perm.index(1) < perm.index(0)


def test_reversed_degree_is_decreasing():
    g = gen_random(Kind.XORSAT, 50, 40, 4, np.random.default_rng(12))
    perm = compute_ordering(g, Strategy.REVERSED_DEGREE, rng=np.random.default_rng(0)).permutation
    assert np.all(np.diff(g.degrees[perm]) <= 0)


def test_dynamic_plan_has_no_permutation():
    g = gen_random(Kind.SAT, 10, 10, 3, np.random.default_rng(0))
    assert compute_ordering(g, Strategy.DYNAMIC_MIN_DEG_SAT).dynamic


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(4, 40), alpha=st.floats(0.0, 1.0),
       strategy=st.sampled_from([Strategy.RANDOM, Strategy.REVERSED_LEAF, Strategy.REVERSED_DEGREE,
                                 Strategy.MIN_DEG_SAT]))
def test_orderings_are_bijections(seed, n, alpha, strategy):
    rng = np.random.default_rng(seed)
    kind = Kind.SAT if strategy is Strategy.MIN_DEG_SAT else Kind.XORSAT
    g = gen_random(kind, n, int(alpha * n), 3, rng)
    res = leaf_removal(g)
    if strategy is Strategy.REVERSED_LEAF and not res.success:
        return
    perm = compute_ordering(g, strategy, res, rng).permutation
    assert sorted(perm.tolist()) == list(range(n))
    if strategy is Strategy.REVERSED_LEAF:
        visited = set(res.visited_vars)
        pos = {v: i for i, v in enumerate(perm.tolist())}
        last_free = max((pos[v] for v in range(n) if v not in visited), default=-1)
        assert all(pos[v] > last_free for v in visited)


def test_ordering_bijection_bulk():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        g = gen_random(Kind.XORSAT, 20, int(rng.integers(0, 12)), 3, rng)
        for s in (Strategy.RANDOM, Strategy.REVERSED_DEGREE):
            perm = compute_ordering(g, s, rng=rng).permutation
            assert np.array_equal(np.sort(perm), np.arange(20))


# ------------------------------------------------------- dynamic ordering


def test_dynamic_fresh_instance_lowest_index():
    cv = [[0, 1, 2], [0, 1, 3]]
    sg = [[1, -1, 1], [-1, 1, 1]]
    g = FactorGraph(Kind.SAT, 3, 4, cv, sg)
    assert dynamic_next_variable(g, np.zeros(4, dtype=np.int8), np.zeros(4)) == 0


def test_dynamic_uses_logit_magnitude():
    cv = [[0, 1, 2], [0, 1, 2]]
    sg = [[1, 1, 1], [-1, -1, 1]]
    g = FactorGraph(Kind.SAT, 3, 3, cv, sg)
    assigned = np.array([0, 0, 1], dtype=np.int8)
    # clause 0 and 1 both satisfied by var 2 -> everyone has reduced deg_min 0
    assert dynamic_next_variable(g, assigned, [0.1, -0.9, 0.0]) == 1


def test_dynamic_deprioritizes_dead_variable():
    # var 0 only lives in clauses 0 and 1; revealing var 3 = +1 satisfies both
    cv = [[0, 3, 4], [0, 3, 5], [1, 2, 4], [1, 2, 5]]
    sg = [[1, 1, 1], [-1, 1, 1], [1, -1, 1], [-1, 1, 1]]
    g = FactorGraph(Kind.SAT, 3, 6, cv, sg)
    fresh = np.zeros(6, dtype=np.int8)
    assert dynamic_next_variable(g, fresh, np.zeros(6)) == 0
    assigned = fresh.copy()
    assigned[3] = 1
    dmin = reduced_min_degrees(g, assigned)
    assert dmin[0] == 0 and dmin[1] == 1
    assert dynamic_next_variable(g, assigned, np.zeros(6)) == 1


def test_dynamic_rejects_full_assignment():
    g = single_clause(Kind.SAT)
    with pytest.raises(ValueError):
        dynamic_next_variable(g, np.ones(3, dtype=np.int8), np.zeros(3))


# ------------------------------------------------------------ weights


def test_identity_weights():
    g = gen_random(Kind.XORSAT, 7, 3, 3, np.random.default_rng(0))
    assert np.array_equal(weight_matrix(g), np.ones(7))


def test_rank_weights_direct_evaluation():
    w = rank_weights([1, 2, 3], 0.55)
    assert np.allclose(w, [0.3264, 1.0, 1.6736], atol=1e-4)
    assert np.allclose(w, 1 + 0.55 * np.array([-1, 0, 1]) * math.sqrt(1.5), atol=1e-12)


def test_rank_weights_degenerate():
    assert np.array_equal(rank_weights([4], 0.55), [1.0])


def test_leaf_rank_weights_centered_and_floored():
    rng = np.random.default_rng(14)
    for _ in range(20):
        g = gen_random(Kind.XORSAT, 60, 20, 4, rng)
        if not leaf_removal(g).success:
            continue
        plan = compute_ordering(g, Strategy.REVERSED_LEAF, rng=rng)
        raw = weight_matrix(g, WeightStrategy.LEAF_RANK, 0.55, plan, floor=-np.inf)
        assert raw.mean() == pytest.approx(1.0, abs=1e-12)
        w = weight_matrix(g, WeightStrategy.LEAF_RANK, 3.0, plan)
        assert w.min() >= 0.05
        # sampled first -> strongest signal
        assert raw[plan.permutation[0]] == raw.max()
