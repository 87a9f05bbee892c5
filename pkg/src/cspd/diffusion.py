"""Continuous denoising diffusion and masked discrete diffusion samplers.

A continuous denoiser is a callable ``denoiser(y, omega, w) -> m`` returning
posterior means in [-1, 1]. A discrete denoiser is a callable
``denoiser(revealed)`` returning an object with ``p_plus`` and ``logits``
arrays (``MessageState`` qualifies); it may raise ``InconsistencyError``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bp import (
    BpConfig,
    InconsistencyError,
    MessageState,
    brute_force_marginals,
    channel_scale,
    sat_bp_continuous,
    sat_bp_discrete,
    xorsat_bp_continuous,
    xorsat_bp_discrete,
)
from .instance import UNSET, FactorGraph, Kind, OrderingPlan, check_assignment, dynamic_next_variable

COSINE_OFFSET = 0.008
BETA_MIN, BETA_MAX = 1e-5, 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficients; ``omega`` has ``L + 1`` entries with ``omega[L] == 1``.

    ``checked=False`` skips the ``beta in (0, 1)`` check; only unclipped
    diagnostic schedules use it.
    """

    beta: np.ndarray
    omega: np.ndarray
    checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.omega.shape != (self.beta.size + 1,):
            raise ValueError("omega must have one more entry than beta")
        if self.checked and (np.any(self.beta <= 0) or np.any(self.beta >= 1)):
            raise ValueError("every beta must lie in (0, 1)")

    @classmethod
    def from_beta(cls, beta, checked: bool = True) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        omega = np.append(np.cumprod((1.0 - beta)[::-1])[::-1], 1.0)
        return cls(beta, omega, checked)

    @property
    def L(self) -> int:
        return self.beta.size

    @property
    def gamma(self) -> np.ndarray:
        b, w = self.beta, self.omega[:-1]
        return (1.0 - b / (1.0 - w)) / np.sqrt(1.0 - b)

    @property
    def delta(self) -> np.ndarray:
        b, w = self.beta, self.omega[:-1]
        return b * np.sqrt(w) / ((1.0 - w) * np.sqrt(1.0 - b))


def cosine_omega(L: int, offset: float = COSINE_OFFSET) -> np.ndarray:
    """Signal fraction ``f(l/L) / f(1)`` with ``f(t) = cos^2(((1-t)+s)/(1+s) * pi/2)``."""
    t = np.arange(L + 1) / L
    f = np.cos(((1.0 - t) + offset) / (1.0 + offset) * math.pi / 2) ** 2
    return f / f[-1]


def cosine_schedule(L: int, clip: bool = True, offset: float = COSINE_OFFSET) -> NoiseSchedule:
    """Betas from consecutive ratios of the cosine signal fraction.

    Without clipping the first beta rounds to 1, so the result is only fit
    for inspecting the schedule, not for sampling.
    """
    if L < 2:
        raise ValueError("schedule needs L >= 2")
    target = cosine_omega(L, offset)
    beta = 1.0 - target[:-1] / target[1:]
    if clip:
        beta = np.clip(beta, BETA_MIN, BETA_MAX)
    return NoiseSchedule.from_beta(beta, checked=clip)


@dataclass
class SampleTrace:
    x: np.ndarray
    success: bool
    violations: int
    steps: int
    logp: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    millis: float = 0.0
    error: Optional[str] = None

    @property
    def total_logp(self) -> float:
        return float(np.sum(self.logp)) if self.logp is not None else float("nan")


# ------------------------------------------------------------- denoisers


class ChannelDenoiser:
    """Ignores the constraints: ``m = tanh(sqrt(omega) W y / (1 - omega))``."""

    kind = None

    def __call__(self, y, omega, w):
        return np.tanh(channel_scale(omega) * w * y)


class ExactContinuousDenoiser:
    """Posterior mean of the tilted measure by enumeration (n <= 20)."""

    def __init__(self, g: FactorGraph):
        self.g = g
        self.kind = g.kind

    def __call__(self, y, omega, w):
        res = brute_force_marginals(self.g, y=y, omega=omega, w_diag=w)
        if res.zero_mass:
            return np.tanh(channel_scale(omega) * w * y)
        return res.magnetization


class BpContinuousDenoiser:
    def __init__(self, g: FactorGraph, cfg: Optional[BpConfig] = None):
        self.g = g
        self.kind = g.kind
        self.cfg = cfg or BpConfig(r=1)
        self.state: Optional[MessageState] = None

    def reset(self):
        self.state = None

    def __call__(self, y, omega, w):
        if self.g.kind is Kind.SAT:
            st = sat_bp_continuous(self.g, y, omega, w, self.cfg, self.state)
        else:
            st = xorsat_bp_continuous(self.g, y, channel_scale(omega) * w, self.cfg, self.state)
        if self.cfg.init == "warm":
            self.state = st
        return st.magnetization


@dataclass
class _Marginals:
    p_plus: np.ndarray
    logits: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.logits is None:
            with np.errstate(divide="ignore"):
                self.logits = np.log(self.p_plus) - np.log1p(-self.p_plus)


class ExactDiscreteDenoiser:
    """Conditional marginals given the revealed spins, by enumeration."""

    def __init__(self, g: FactorGraph):
        self.g = g
        self.kind = g.kind

    def __call__(self, revealed):
        res = brute_force_marginals(self.g, revealed=revealed)
        if res.zero_mass:
            raise InconsistencyError(-1)
        return _Marginals(res.p_plus)


class BpDiscreteDenoiser:
    """BP conditional marginals with zero, warm or cavity initialization.

    Cavity init needs ``cache`` (a ``PopulationCache``) and ``rng``. For
    XORSAT with ``r = inf`` the previous fixed point is always reused: hard
    messages only move away from 0 as more spins are revealed, so this
    reaches the same fixed point as a cold start.
    """

    def __init__(self, g: FactorGraph, cfg: Optional[BpConfig] = None, cache=None,
                 rng: Optional[np.random.Generator] = None):
        self.g = g
        self.kind = g.kind
        if cfg is None:
            cfg = BpConfig(r=math.inf) if g.kind is Kind.XORSAT else BpConfig(r=1)
        self.cfg = cfg
        if cfg.init == "cavity" and (cache is None or rng is None):
            raise ValueError("cavity init needs a population cache and an rng")
        self.cache = cache
        self.rng = rng
        self.state: Optional[MessageState] = None
        self._hard_warm = g.kind is Kind.XORSAT and math.isinf(cfg.r)

    def reset(self):
        self.state = None

    def __call__(self, revealed):
        g, cfg = self.g, self.cfg
        if g.kind is Kind.XORSAT:
            if self._hard_warm and cfg.init != "warm":
                cfg = BpConfig(r=cfg.r, tol=cfg.tol, clip=cfg.clip, init="warm")
            st = xorsat_bp_discrete(g, revealed, cfg, self.state)
        else:
            init = self.state
            if cfg.init == "cavity":
                from .cavity import cavity_init_messages

                t = float(np.mean(np.asarray(revealed) != UNSET)) if g.n_vars else 0.0
                init = cavity_init_messages(g, self.cache.nearest(t), revealed, self.rng, clip=cfg.clip)
            st = sat_bp_discrete(g, revealed, cfg, init)
        self.state = st
        return st


# -------------------------------------------------------------- samplers


def _finish(g, x, steps, t0, logp=None, probs=None, error=None):
    viol = check_assignment(g, x)
    ms = (time.perf_counter() - t0) * 1e3
    return SampleTrace(x, error is None and viol.size == 0, int(viol.size), steps, logp, probs, ms, error)


def continuous_sample(g: FactorGraph, denoiser: Callable, schedule: NoiseSchedule, w_diag=None,
                      rng: Optional[np.random.Generator] = None) -> SampleTrace:
    """Run ``Y <- gamma Y + delta W m(Y; omega) + sqrt(beta) g`` and return ``sign(Y_L)``."""
    kind = getattr(denoiser, "kind", None)
    if kind is not None and kind is not g.kind:
        raise ValueError(f"denoiser built for {kind.value} cannot sample a {g.kind.value} graph")
    if rng is None:
        raise ValueError("continuous_sample needs an rng")
    t0 = time.perf_counter()
    n = g.n_vars
    w = np.ones(n) if w_diag is None else np.asarray(w_diag, dtype=np.float64)
    if hasattr(denoiser, "reset"):
        denoiser.reset()
    gam, dlt, sb = schedule.gamma, schedule.delta, np.sqrt(schedule.beta)
    y = rng.standard_normal(n)
    for l in range(schedule.L):
        m = denoiser(y, schedule.omega[l], w)
        y = gam[l] * y + dlt[l] * w * m + sb[l] * rng.standard_normal(n)
    x = np.where(y >= 0, 1, -1).astype(np.int8)
    return _finish(g, x, schedule.L, t0)


def discrete_sample(g: FactorGraph, denoiser: Callable, plan: OrderingPlan,
                    rng: Optional[np.random.Generator] = None) -> SampleTrace:
    """Reveal one variable per step from the denoiser's conditional marginal.

    An inconsistency signal from the denoiser ends the run as a failure; the
    remaining variables are then filled with +1 so the result is scorable.
    """
    if rng is None:
        raise ValueError("discrete_sample needs an rng")
    n = g.n_vars
    if not plan.dynamic and sorted(plan.permutation.tolist()) != list(range(n)):
        raise ValueError("ordering plan is not a permutation of the variables")
    t0 = time.perf_counter()
    if hasattr(denoiser, "reset"):
        denoiser.reset()
    x = np.zeros(n, dtype=np.int8)
    logp = np.zeros(n)
    probs = np.zeros(n)
    for step in range(n):
        try:
            out = denoiser(x)
        except InconsistencyError as exc:
            x[x == UNSET] = 1
            return _finish(g, x, step, t0, logp[:step], probs[:step], error=str(exc))
        v = dynamic_next_variable(g, x, out.logits) if plan.dynamic else int(plan.permutation[step])
        p = float(out.p_plus[v])
        if rng.random() < p:
            x[v] = 1
            probs[step] = p
        else:
            x[v] = -1
            probs[step] = 1.0 - p
        logp[step] = math.log(probs[step])
    return _finish(g, x, n, t0, logp, probs)
