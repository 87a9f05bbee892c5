"""Cavity-method computations: mask threshold, alpha_diff populations, BP_c initialization.

Populations are numpy arrays updated wholesale each sweep (Jacobi order).
Infinite fields are stored as ``±CLIP``; ``tanh(30.0) == 1.0`` in doubles.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .bp import LOG_FLOOR, MessageState, sat_clause_message
from .instance import UNSET, FactorGraph

CLIP = 30.0
ATANH_CLAMP = 1.0 - 1e-12

# k: (alpha_mask, alpha_diff, alpha_d) for k-XORSAT
THRESHOLD_TABLE = {
    3: (0.666667, 0.736, 0.818469),
    4: (0.562500, 0.632, 0.772280),
    5: (0.474074, 0.531, 0.701780),
    6: (0.406901, 0.511, 0.637081),
    7: (0.355474, 0.396, 0.581775),
    8: (0.315203, 0.384, 0.534997),
    9: (0.282944, 0.366, 0.495255),
    10: (0.256578, 0.350, 0.461197),
}
SAT_ALPHA_D_4 = 9.38
SAT_ALPHA_MASK_4 = 8.05


# --------------------------------------------------------------- alpha_mask


def _check_k(k: int):
    if k < 3:
        raise ValueError(f"the mask threshold is defined for k >= 3, got {k}")


def alpha_mask_closed_form(k: int) -> float:
    _check_k(k)
    return ((k - 1) / (k - 2)) ** (k - 2) / k


def mask_critical_point(k: int) -> tuple[float, float, float]:
    """``(q*, t*, alpha_mask)`` where the mask recursion has a cubic tangency."""
    _check_k(k)
    q = (k - 2) / (k - 1)
    t = 1.0 - math.exp((k - 2) / (k - 1)) / (k - 1)
    return q, t, alpha_mask_closed_form(k)


def mask_map(q, k: int, alpha: float, t: float):
    """One step ``q -> 1 - (1 - t) exp(-k alpha q^(k-1))``."""
    return 1.0 - (1.0 - t) * np.exp(-k * alpha * np.power(q, k - 1))


def mask_map_derivatives(q: float, k: int, alpha: float, t: float) -> tuple[float, float, float]:
    """``f(q), f'(q), f''(q)`` of the mask recursion."""
    c = k * alpha
    e = (1.0 - t) * math.exp(-c * q ** (k - 1))
    g1 = c * (k - 1) * q ** (k - 2)
    g2 = c * (k - 1) * (k - 2) * q ** (k - 3)
    return 1.0 - e, e * g1, e * (g2 - g1 * g1)


@njit(cache=True)
def _iterate_mask(q, k, alpha, t, max_iters, tol):
    for it in range(max_iters):
        nq = 1.0 - (1.0 - t) * math.exp(-k * alpha * q ** (k - 1))
        if abs(nq - q) < tol:
            return nq, it
        q = nq
    return q, max_iters


@njit(cache=True)
def _joint_gap(k, alpha, t, max_iters, tol, eps):
    """Iterate from 0 and 1 together. Every fixed point lies between the two
    monotone iterates, so once they are ``eps`` apart the gap is below ``eps``."""
    lo, hi = 0.0, 1.0
    for it in range(max_iters):
        nlo = 1.0 - (1.0 - t) * math.exp(-k * alpha * lo ** (k - 1))
        nhi = 1.0 - (1.0 - t) * math.exp(-k * alpha * hi ** (k - 1))
        done = nhi - nlo < eps or (abs(nlo - lo) < tol and abs(nhi - hi) < tol)
        lo, hi = nlo, nhi
        if done:
            return hi - lo, it
    return hi - lo, max_iters


@njit(cache=True)
def _scan(k, alpha, ts, max_iters, tol, eps):
    """Largest gap over ``ts`` and the ``t`` where convergence is slowest."""
    best = 0.0
    slow = -1
    t_slow = ts[0]
    for t in ts:
        gap, n = _joint_gap(k, alpha, t, max_iters, tol, eps)
        if gap > best:
            best = gap
            if best > eps:
                return best, t
        if n > slow:
            slow = n
            t_slow = t
    return best, t_slow


def mask_recursion_gap(k: int, alpha: float, t: float, max_iters: int = 100_000,
                       tol: float = 1e-13) -> tuple[float, float, float]:
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    lo, _ = _iterate_mask(0.0, k, alpha, t, max_iters, tol)
    hi, _ = _iterate_mask(1.0, k, alpha, t, max_iters, tol)
    return lo, hi, max(hi - lo, 0.0)


def max_mask_gap(k: int, alpha: float, n_grid: int = 512, zoom: int = 4, n_zoom: int = 64,
                 max_iters: int = 20_000, tol: float = 1e-13, gap_eps: float = 1e-6) -> float:
    """Sup over t of the gap, scanned on ``n_grid`` points and then zoomed.

    The multi-fixed-point region is a thin cusp just above threshold, so
    after the uniform scan the grid is re-centred ``zoom`` times on the
    slowest-converging t (critical slowing marks the cusp), each time on
    ``n_zoom`` points spanning four old spacings.
    """
    lo_t, hi_t = 0.0, 1.0
    best = 0.0
    for level in range(zoom + 1):
        ts = np.linspace(lo_t, hi_t, n_grid if level == 0 else n_zoom)
        gap, t_slow = _scan(k, alpha, ts, max_iters, tol, gap_eps)
        best = max(best, gap)
        if best > gap_eps:
            break
        dt = 2 * (ts[1] - ts[0])
        lo_t, hi_t = max(0.0, t_slow - dt), min(1.0, t_slow + dt)
    return best


def estimate_alpha_mask_numeric(k: int, tol: float = 1e-4, n_grid: int = 512,
                                gap_eps: float = 1e-6, max_iters: int = 20_000) -> float:
    """Largest alpha at which the mask recursion has a single fixed point for every t."""
    _check_k(k)
    lo, hi = 0.0, 2.0
    while max_mask_gap(k, hi, n_grid, max_iters=max_iters, gap_eps=gap_eps) <= gap_eps:
        hi *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if max_mask_gap(k, mid, n_grid, max_iters=max_iters, gap_eps=gap_eps) > gap_eps:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------- alpha_diff


def _xor_clause(T: np.ndarray) -> np.ndarray:
    """``atanh(prod tanh)`` over the last axis, given tanh values."""
    return np.arctanh(np.clip(np.prod(T, axis=-1), -ATANH_CLAMP, ATANH_CLAMP))


def popdyn_xorsat_diff(k: int, alpha: float, t_grid, pop_size: int = 10_000, iters: int = 100,
                       pool: int = 1, rng: Optional[np.random.Generator] = None,
                       A: float = 10.0) -> np.ndarray:
    """``Delta(t, alpha) = E tanh Q+ - E tanh Q0`` for every ``t`` in ``t_grid``.

    Both populations consume the same random draws, so their difference
    reflects the initial condition and not sampling noise. The last ``pool``
    sweeps are averaged.
    """
    if pop_size < 1:
        raise ValueError("pop_size must be positive")
    if pool < 1 or pool > iters:
        raise ValueError("pool must lie in [1, iters]")
    rng = rng if rng is not None else np.random.default_rng()
    ts = np.asarray(t_grid, dtype=np.float64)
    if np.any(ts < 0) or np.any(ts > 1):
        raise ValueError("t values must lie in [0, 1]")
    G, N = ts.size, pop_size
    rows = np.arange(G)[:, None] * N
    h0_scale = np.sqrt(ts)[:, None]
    # index 0: started from 0, index 1: started from +A
    h = np.stack([np.zeros((G, N)), np.full((G, N), A)])
    u = h.copy()
    acc = np.zeros(G)
    for sweep in range(iters):
        j = rng.integers(0, N, size=(G, N, k - 1))
        Th = np.tanh(h)
        u = _xor_clause(Th.reshape(2, -1)[:, (rows[:, :, None] + j)])
        m = rng.poisson(k * alpha, size=(G, N))
        owner = np.repeat(np.arange(G * N), m.ravel())
        jj = rng.integers(0, N, size=owner.size) + (owner // N) * N
        h0 = ts[:, None] + h0_scale * rng.standard_normal((G, N))
        for s in range(2):
            tot = np.bincount(owner, weights=u[s].ravel()[jj], minlength=G * N)
            h[s] = h0 + tot.reshape(G, N)
        if sweep >= iters - pool:
            Tn = np.tanh(h)
            acc += Tn[1].mean(axis=1) - Tn[0].mean(axis=1)
    return acc / pool


def estimate_alpha_diff(k: int, delta0: float = 0.01, grid=None, pop_size: int = 10_000,
                        iters: int = 100, seed: int = 0, resolution: float = 0.02,
                        lo: float = 0.0, hi: float = 1.0, pool: int = 1) -> float:
    """Bisection on ``max_t Delta(t, alpha) <= delta0``; each alpha reuses ``seed``."""
    if delta0 <= 0:
        raise ValueError("delta0 must be positive")
    grid = np.linspace(0.0, 1.0, 21) if grid is None else np.asarray(grid, dtype=np.float64)

    def below(a):
        d = popdyn_xorsat_diff(k, a, grid, pop_size, iters, pool, np.random.default_rng(seed))
        return d.max() <= delta0

    if not below(lo):
        return lo
    while below(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if below(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ------------------------------------------------------- SAT cavity fields


@dataclass
class Population:
    samples: np.ndarray
    k: int
    alpha: float
    t: float
    sweeps: int

    def __post_init__(self):
        if self.samples.size == 0:
            raise ValueError("population must be nonempty")


def _sat_clause(h: np.ndarray, k: int) -> np.ndarray:
    return sat_clause_message(h)


def popdyn_cavity_ksat(k: int, alpha: float, t: float, pop_size: int = 10_000, iters: int = 50,
                       pool: int = 1, rng: Optional[np.random.Generator] = None,
                       clip: float = CLIP) -> tuple[Population, Population]:
    """Cavity populations ``(Q_hat, Q)`` for k-SAT with a fraction ``t`` of revealed spins."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if pool < 1 or pool > iters:
        raise ValueError("pool must lie in [1, iters]")
    rng = rng if rng is not None else np.random.default_rng()
    N = pop_size
    h = np.zeros(N)
    u = np.zeros(N)
    keep_u, keep_h = [], []
    for sweep in range(iters):
        j = rng.integers(0, N, size=(N, k - 1))
        r = rng.random((N, k - 1))
        hh = np.where(r < t / 2, clip, np.where(r < t, -clip, h[j]))
        u = np.minimum(_sat_clause(hh, k), clip)
        mp = rng.poisson(k * alpha / 2, size=N)
        mm = rng.poisson(k * alpha / 2, size=N)
        hp = np.bincount(np.repeat(np.arange(N), mp), weights=u[rng.integers(0, N, size=mp.sum())], minlength=N)
        hm = np.bincount(np.repeat(np.arange(N), mm), weights=u[rng.integers(0, N, size=mm.sum())], minlength=N)
        h = np.clip(hp - hm, -clip, clip)
        if sweep >= iters - pool:
            keep_u.append(u)
            keep_h.append(h)
    return (Population(np.concatenate(keep_u), k, alpha, t, iters),
            Population(np.concatenate(keep_h), k, alpha, t, iters))


@dataclass
class PopulationCache:
    """Cavity populations on the grid ``t = 0, step, ..., 1``, built lazily.

    Each grid point has its own seed stream, so contents do not depend on
    lookup order.
    """

    k: int
    alpha: float
    pop_size: int = 10_000
    iters: int = 50
    seed: int = 0
    step: float = 0.05
    _pops: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> np.ndarray:
        return np.round(np.arange(0, round(1 / self.step) + 1) * self.step, 10)

    def at_index(self, idx: int) -> Population:
        if idx not in self._pops:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(idx,)))
            _, q = popdyn_cavity_ksat(self.k, self.alpha, float(self.grid[idx]), self.pop_size,
                                      self.iters, 1, rng)
            self._pops[idx] = q
        return self._pops[idx]

    def nearest(self, t: float) -> Population:
        idx = int(np.argmin(np.abs(self.grid - t)))
        if abs(self.grid[idx] - t) > self.step:
            raise ValueError(f"no cached population within {self.step} of t={t}")
        return self.at_index(idx)


def cavity_init_messages(g: FactorGraph, population: Population, revealed, rng: np.random.Generator,
                         clip: float = CLIP) -> MessageState:
    """Initial variable-to-clause fields: ``±clip`` on revealed spins, population draws elsewhere."""
    pop = np.asarray(population.samples, dtype=np.float64)
    if pop.size == 0:
        raise ValueError("empty population")
    rv = np.asarray(revealed, dtype=np.int8)
    shape = (g.n_clauses, g.k)
    pins = rv[g.clause_vars]
    h = np.where(pins != UNSET, pins * clip, 0.0)
    free = pins == UNSET
    h[free] = pop[rng.integers(0, pop.size, size=int(free.sum()))]
    return MessageState("cavity", np.zeros(shape), np.zeros(g.n_vars), h=h)


# -------------------------------------------------------------- export


THRESHOLD_CSV_HEADER = ["k", "alpha", "t", "statistic", "value", "seed"]


def threshold_csv(rows) -> str:
    """Rows are ``(k, alpha, t, statistic, value, seed)`` tuples."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(THRESHOLD_CSV_HEADER)
    w.writerows(rows)
    return buf.getvalue()


def write_threshold_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(threshold_csv(rows))
