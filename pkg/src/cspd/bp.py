"""Belief-propagation denoisers for k-SAT and k-XORSAT.

Only clause-to-variable messages ``u`` are stored (shape ``(m, k)``, aligned
with ``clause_vars``). Variable-to-clause cavity fields are rebuilt each
round from the full field, ``h_{i->a} = H_i - s_{a,i} u_{a->i}``. One round
is: fields from ``u``, then every clause update at once (Jacobi order).

Revealed variables are pinned: their outgoing fields are ``±clip`` whatever
the incoming messages say. ``tanh(30.0) == 1.0`` in double precision, so the
default clip behaves as an infinite field. Full fields stay unclamped inside
the iteration; only cavity fields and the returned field are clamped.

The SAT clause update uses ``2^-(k-1) prod_j (1 - tanh(s_j h_j)) =
exp(-sum_j softplus(2 s_j h_j))``, so ``1 - (1-eps) exp(-S)`` is formed with
``expm1`` and never cancels; the log floor only guards an exact zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .instance import UNSET, FactorGraph, Kind

LOG_FLOOR = 1e-300
ATANH_CLAMP = 1.0 - 1e-12
MAX_ENUM_VARS = 20


class InconsistencyError(RuntimeError):
    """Hard BP met both +INF and -INF at a variable: the conditioning is unsatisfiable."""

    def __init__(self, var: int):
        super().__init__(f"conflicting forced values at variable {var}")
        self.var = var


@dataclass
class BpConfig:
    r: float = 1
    tol: float = 0.0
    clip: float = 30.0
    epsilon: float = 0.0
    init: str = "zero"

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.init not in ("zero", "warm", "cavity"):
            raise ValueError(f"unknown init policy {self.init!r}")

    def rounds(self, cap: int) -> int:
        return cap if math.isinf(self.r) else int(self.r)


@dataclass
class MessageState:
    """Messages after a BP run, or a starting point for the next one.

    ``field`` holds the per-variable field H (for XORSAT-discrete one of
    ``+inf, 0, -inf``). ``h`` is only set for explicit variable-to-clause
    initializations such as the cavity policy.
    """

    mode: str
    u: np.ndarray
    field: np.ndarray
    h: Optional[np.ndarray] = None
    rounds: int = 0

    @property
    def magnetization(self) -> np.ndarray:
        return np.tanh(self.field)

    @property
    def p_plus(self) -> np.ndarray:
        return (1.0 + np.tanh(self.field)) / 2.0

    @property
    def logits(self) -> np.ndarray:
        return 2.0 * self.field


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _loo(vals, out):
    k = vals.size
    acc = 1.0
    for j in range(k):
        out[j] = acc
        acc *= vals[j]
    acc = 1.0
    for j in range(k - 1, -1, -1):
        out[j] *= acc
        acc *= vals[j]


@njit(cache=True)
def _loo_sum(vals, out):
    k = vals.size
    acc = 0.0
    for j in range(k):
        out[j] = acc
        acc += vals[j]
    acc = 0.0
    for j in range(k - 1, -1, -1):
        out[j] += acc
        acc += vals[j]


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _fields(sg, var_ptr, var_edges, k, ext, pin, clip, u, H, clamp):
    n = ext.size
    for i in range(n):
        if pin[i] != 0:
            H[i] = pin[i] * clip
            continue
        s = ext[i]
        for p in range(var_ptr[i], var_ptr[i + 1]):
            e = var_edges[p]
            a = e // k
            j = e - a * k
            s += sg[a, j] * u[a, j]
        if clamp:
            s = min(max(s, -clip), clip)
        H[i] = s


@njit(cache=True)
def _cavity(cv, sg, pin, clip, u, H, h):
    m, k = cv.shape
    for a in range(m):
        for j in range(k):
            v = cv[a, j]
            if pin[v] != 0:
                h[a, j] = pin[v] * clip
            else:
                x = H[v] - sg[a, j] * u[a, j]
                if x > clip:
                    x = clip
                elif x < -clip:
                    x = -clip
                h[a, j] = x


@njit(cache=True)
def _sat_run(cv, sg, var_ptr, var_edges, ext, pin, u, h0, use_h0, rounds, tol, clip, eps):
    m, k = cv.shape
    n = ext.size
    H = np.empty(n)
    h = np.empty((m, k))
    t = np.empty(k)
    loo = np.empty(k)
    done = 0
    for r in range(rounds):
        if r == 0 and use_h0:
            for a in range(m):
                for j in range(k):
                    v = cv[a, j]
                    h[a, j] = pin[v] * clip if pin[v] != 0 else h0[a, j]
        else:
            _fields(sg, var_ptr, var_edges, k, ext, pin, clip, u, H, False)
            _cavity(cv, sg, pin, clip, u, H, h)
        delta = 0.0
        for a in range(m):
            for j in range(k):
                t[j] = _softplus(2.0 * sg[a, j] * h[a, j])
            _loo_sum(t, loo)
            for j in range(k):
                arg = -math.expm1(-loo[j]) + eps * math.exp(-loo[j])
                if arg < LOG_FLOOR:
                    arg = LOG_FLOOR
                new = -0.5 * math.log(arg)
                if new > clip:
                    new = clip
                d = abs(new - u[a, j])
                if d > delta:
                    delta = d
                u[a, j] = new
        done = r + 1
        if delta < tol:
            break
    _fields(sg, var_ptr, var_edges, k, ext, pin, clip, u, H, True)
    return H, done


@njit(cache=True)
def _xor_soft_run(cv, par, var_ptr, var_edges, ext, u, h0, use_h0, rounds, tol, clip):
    m, k = cv.shape
    n = ext.size
    ones = np.ones((m, k))
    nopin = np.zeros(n, dtype=np.int8)
    H = np.empty(n)
    h = np.empty((m, k))
    t = np.empty(k)
    loo = np.empty(k)
    done = 0
    for r in range(rounds):
        if r == 0 and use_h0:
            h[:, :] = h0
        else:
            _fields(ones, var_ptr, var_edges, k, ext, nopin, clip, u, H, False)
            _cavity(cv, ones, nopin, clip, u, H, h)
        delta = 0.0
        for a in range(m):
            for j in range(k):
                t[j] = math.tanh(h[a, j])
            _loo(t, loo)
            for j in range(k):
                arg = par[a] * loo[j]
                if arg > 1.0 - 1e-12:
                    arg = 1.0 - 1e-12
                elif arg < -1.0 + 1e-12:
                    arg = -1.0 + 1e-12
                new = math.atanh(arg)
                d = abs(new - u[a, j])
                if d > delta:
                    delta = d
                u[a, j] = new
        done = r + 1
        if delta < tol:
            break
    _fields(ones, var_ptr, var_edges, k, ext, nopin, clip, u, H, True)
    return H, done


@njit(cache=True)
def _xor_hard_fields(var_ptr, var_edges, k, pin, u, H):
    """Three-valued total fields; returns the first conflicting variable or -1."""
    n = pin.size
    for i in range(n):
        pos = 1 if pin[i] > 0 else 0
        neg = 1 if pin[i] < 0 else 0
        for p in range(var_ptr[i], var_ptr[i + 1]):
            e = var_edges[p]
            a = e // k
            x = u[a, e - a * k]
            if x > 0:
                pos += 1
            elif x < 0:
                neg += 1
        if pos > 0 and neg > 0:
            return i
        H[i] = 1 if pos > 0 else (-1 if neg > 0 else 0)
    return -1


@njit(cache=True)
def _xor_hard_run(cv, par, var_ptr, var_edges, pin, u, rounds):
    m, k = cv.shape
    n = pin.size
    H = np.zeros(n, dtype=np.int8)
    h = np.zeros((m, k), dtype=np.int8)
    done = 0
    for r in range(rounds):
        bad = _xor_hard_fields(var_ptr, var_edges, k, pin, u, H)
        if bad >= 0:
            return H, done, bad
        for a in range(m):
            for j in range(k):
                v = cv[a, j]
                if H[v] == 0:
                    h[a, j] = 0
                elif pin[v] != 0:
                    h[a, j] = pin[v]
                else:
                    # H is forced by some clause; does it survive removing a?
                    own = u[a, j]
                    others = 0
                    for p in range(var_ptr[v], var_ptr[v + 1]):
                        e = var_edges[p]
                        b = e // k
                        if u[b, e - b * k] != 0:
                            others += 1
                    if own != 0:
                        others -= 1
                    h[a, j] = H[v] if others > 0 else 0
        changed = False
        for a in range(m):
            zeros = 0
            zpos = -1
            prod = par[a]
            for j in range(k):
                x = h[a, j]
                if x == 0:
                    zeros += 1
                    zpos = j
                else:
                    prod *= x
            for j in range(k):
                if zeros == 0:
                    new = prod * h[a, j]
                elif zeros == 1 and j == zpos:
                    new = prod
                else:
                    new = 0
                if new != u[a, j]:
                    changed = True
                    u[a, j] = new
        done = r + 1
        if not changed:
            break
    bad = _xor_hard_fields(var_ptr, var_edges, k, pin, u, H)
    return H, done, bad


# ------------------------------------------------------------- public API


def _pins(g: FactorGraph, revealed) -> np.ndarray:
    if revealed is None:
        return np.zeros(g.n_vars, dtype=np.int8)
    pin = np.asarray(revealed, dtype=np.int8)
    if pin.shape != (g.n_vars,):
        raise ValueError("revealed vector has wrong length")
    return pin


def _start(g: FactorGraph, cfg: BpConfig, init: Optional[MessageState], dtype=np.float64):
    shape = (g.n_clauses, g.k)
    if cfg.init == "warm" and init is not None:
        return np.array(init.u, dtype=dtype).reshape(shape), None
    if cfg.init == "cavity":
        if init is None or init.h is None:
            raise ValueError("cavity init needs a state carrying variable-to-clause fields")
        return np.zeros(shape, dtype=dtype), np.asarray(init.h, dtype=np.float64).reshape(shape)
    return np.zeros(shape, dtype=dtype), None


def _float_signs(g: FactorGraph) -> np.ndarray:
    return np.ascontiguousarray(g.edge_signs, dtype=np.float64)


def _soft_cap(cfg: BpConfig) -> int:
    return 1000


def _sat(g, ext, pin, cfg, init, mode):
    if g.kind is not Kind.SAT:
        raise ValueError("SAT BP called on a non-SAT graph")
    u, h0 = _start(g, cfg, init)
    rounds = cfg.rounds(_soft_cap(cfg))
    H, done = _sat_run(g.clause_vars, _float_signs(g), g.var_ptr, g.var_edges,
                       np.ascontiguousarray(ext, dtype=np.float64), pin, u,
                       h0 if h0 is not None else np.zeros((0, 0)), h0 is not None,
                       rounds, cfg.tol, cfg.clip, cfg.epsilon)
    return MessageState(mode, u, H, rounds=done)


def sat_clause_message(h: np.ndarray, epsilon: float = 0.0) -> np.ndarray:
    """Message to the missing variable from the signed fields ``s h`` of the other clause members (last axis)."""
    S = np.logaddexp(0.0, 2.0 * np.asarray(h, dtype=np.float64)).sum(axis=-1)
    arg = -np.expm1(-S) + epsilon * np.exp(-S)
    return -0.5 * np.log(np.maximum(arg, LOG_FLOOR))


def sat_bp_discrete(g: FactorGraph, revealed=None, cfg: Optional[BpConfig] = None,
                    init: Optional[MessageState] = None) -> MessageState:
    """BP marginals of the uniform measure conditioned on the revealed spins."""
    cfg = cfg or BpConfig()
    pin = _pins(g, revealed)
    return _sat(g, np.zeros(g.n_vars), pin, cfg, init, "sat-discrete")


def channel_scale(omega: float) -> float:
    """Field per unit observation, ``sqrt(omega) / (1 - omega)``."""
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must lie in (0, 1), got {omega}")
    return math.sqrt(omega) / (1.0 - omega)


def sat_bp_continuous(g: FactorGraph, y, omega: float, w_diag=None, cfg: Optional[BpConfig] = None,
                      init: Optional[MessageState] = None) -> MessageState:
    """BP magnetizations of the Gaussian-tilted measure."""
    cfg = cfg or BpConfig()
    w = np.ones(g.n_vars) if w_diag is None else np.asarray(w_diag, dtype=np.float64)
    ext = channel_scale(omega) * w * np.asarray(y, dtype=np.float64)
    return _sat(g, ext, np.zeros(g.n_vars, dtype=np.int8), cfg, init, "sat-continuous")


def xorsat_bp_continuous(g: FactorGraph, y, lam, cfg: Optional[BpConfig] = None,
                         init: Optional[MessageState] = None) -> MessageState:
    """Soft parity BP; ``lam`` (scalar or per variable) scales the observation ``y``."""
    if g.kind is not Kind.XORSAT:
        raise ValueError("XORSAT BP called on a non-XORSAT graph")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("lambda must be non-negative")
    cfg = cfg or BpConfig()
    ext = np.ascontiguousarray(lam * np.asarray(y, dtype=np.float64) * np.ones(g.n_vars))
    u, h0 = _start(g, cfg, init)
    rounds = cfg.rounds(_soft_cap(cfg))
    H, done = _xor_soft_run(g.clause_vars, g.signs.astype(np.float64), g.var_ptr, g.var_edges,
                            ext, u, h0 if h0 is not None else np.zeros((0, 0)), h0 is not None,
                            rounds, cfg.tol, cfg.clip)
    return MessageState("xorsat-continuous", u, H, rounds=done)


def xorsat_bp_discrete(g: FactorGraph, revealed=None, cfg: Optional[BpConfig] = None,
                       init: Optional[MessageState] = None) -> MessageState:
    """Hard parity BP (peeling) with messages in {+INF, 0, -INF}.

    ``u`` is kept as int8 sign codes standing for {-INF, 0, +INF}.
    ``cfg.r = math.inf`` runs to the fixed point. Messages only move away
    from 0, so at most ``#edges + 1`` rounds are ever needed.
    """
    if g.kind is not Kind.XORSAT:
        raise ValueError("XORSAT BP called on a non-XORSAT graph")
    cfg = cfg or BpConfig(r=math.inf)
    pin = _pins(g, revealed)
    if cfg.init == "warm" and init is not None:
        u = np.sign(np.nan_to_num(np.asarray(init.u, dtype=np.float64), posinf=1, neginf=-1))
        u = u.astype(np.int8).reshape(g.n_clauses, g.k)
    else:
        u = np.zeros((g.n_clauses, g.k), dtype=np.int8)
    rounds = cfg.rounds(g.n_clauses * g.k + 1)
    H, done, bad = _xor_hard_run(g.clause_vars, g.signs, g.var_ptr, g.var_edges, pin, u, rounds)
    if bad >= 0:
        raise InconsistencyError(int(bad))
    field = np.where(H > 0, np.inf, np.where(H < 0, -np.inf, 0.0))
    return MessageState("xorsat-discrete", u, field, rounds=done)


def leave_one_out_products(values) -> np.ndarray:
    """``out[i] = prod_{j != i} values[j]`` via prefix/suffix products, no division."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("need a non-empty 1-d vector")
    prefix = np.concatenate(([1.0], np.cumprod(v[:-1])))
    suffix = np.concatenate((np.cumprod(v[::-1][:-1])[::-1], [1.0]))
    return prefix * suffix


# ------------------------------------------------------------- exact oracle


@dataclass
class ExactMarginals:
    p_plus: Optional[np.ndarray]
    n_weighted: int

    @property
    def zero_mass(self) -> bool:
        return self.p_plus is None

    @property
    def magnetization(self) -> np.ndarray:
        return 2.0 * self.p_plus - 1.0


def enumerate_assignments(n: int) -> np.ndarray:
    if n > MAX_ENUM_VARS:
        raise ValueError(f"enumeration limited to {MAX_ENUM_VARS} variables, got {n}")
    bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    return (1 - 2 * bits).astype(np.int8)


def solution_mask(g: FactorGraph, X: np.ndarray) -> np.ndarray:
    ok = np.ones(X.shape[0], dtype=bool)
    for a in range(g.n_clauses):
        vals = X[:, g.clause_vars[a]]
        if g.kind is Kind.SAT:
            ok &= np.any(vals * g.signs[a] == 1, axis=1)
        else:
            ok &= np.prod(vals, axis=1) == g.signs[a]
    return ok


def brute_force_marginals(g: FactorGraph, revealed=None, y=None, omega=None, w_diag=None,
                          lam=None) -> ExactMarginals:
    """Exact marginals by enumerating all ``2**n`` assignments.

    Conditions on ``revealed`` spins and/or tilts by ``exp(sum_i c_i y_i x_i)``
    with ``c = sqrt(omega) W / (1 - omega)``, or ``c = lam`` if given.
    """
    X = enumerate_assignments(g.n_vars)
    ok = solution_mask(g, X)
    if revealed is not None:
        rv = np.asarray(revealed, dtype=np.int8)
        fixed = rv != UNSET
        ok &= np.all(X[:, fixed] == rv[fixed], axis=1)
    if not ok.any():
        return ExactMarginals(None, 0)
    Xs = X[ok].astype(np.float64)
    if y is not None:
        if lam is None:
            w = np.ones(g.n_vars) if w_diag is None else np.asarray(w_diag, dtype=np.float64)
            lam = channel_scale(omega) * w
        logw = Xs @ (np.asarray(lam, dtype=np.float64) * np.asarray(y, dtype=np.float64))
        wts = np.exp(logw - logw.max())
    else:
        wts = np.ones(Xs.shape[0])
    wts /= wts.sum()
    p = wts @ (Xs > 0)
    return ExactMarginals(p, int(ok.sum()))
