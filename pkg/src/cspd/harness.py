"""Reproducible success-rate sweeps and the uniformity diagnostic.

Every random stream is derived from the master seed and a fixed key, never
from scheduling order, so records do not depend on the worker count:

* formula ``(alpha_index, instance)``: ``SeedSequence(seed, spawn_key=(0, a, i))``
* sampler run ``(alpha_index, instance, replicate)``: ``spawn_key=(1, a, i, r)``
* cavity population for ``alpha_index``: ``spawn_key=(2, a)``
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.stats import binomtest

from .bp import BpConfig
from .cavity import PopulationCache
from .diffusion import (
    BpContinuousDenoiser,
    BpDiscreteDenoiser,
    ChannelDenoiser,
    ExactContinuousDenoiser,
    ExactDiscreteDenoiser,
    SampleTrace,
    continuous_sample,
    cosine_schedule,
    discrete_sample,
)
from .instance import (
    FactorGraph,
    Kind,
    Strategy,
    WeightStrategy,
    compute_ordering,
    gen_random,
    leaf_removal,
    weight_matrix,
)

CSV_HEADER = ["kind", "k", "n", "alpha", "method", "denoiser", "radius", "init", "ordering",
              "w_strategy", "seed", "instance", "replicate", "success", "violations", "logprob", "millis"]
METHODS = ("continuous", "discrete")
DENOISERS = ("bp", "exact", "channel")


def _parse_radius(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinite", "infinity"):
        return math.inf
    r = float(value)
    if r != math.inf and r != int(r):
        raise ValueError(f"radius must be an integer or 'inf', got {value!r}")
    return r


def format_radius(r: float) -> str:
    return "inf" if math.isinf(r) else str(int(r))


@dataclass
class SamplerSpec:
    method: str = "continuous"
    denoiser: str = "bp"
    radius: float = 1
    init: str = "zero"
    epsilon: float = 0.0
    clip: float = 30.0
    tol: float = 0.0
    ordering: str = "random"
    w_strategy: str = "identity"
    c0: float = 0.55
    steps: int = 500
    pop_size: int = 10_000
    pop_iters: int = 50

    def __post_init__(self):
        self.radius = _parse_radius(self.radius)
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.denoiser not in DENOISERS:
            raise ValueError(f"denoiser must be one of {DENOISERS}, got {self.denoiser!r}")
        Strategy(self.ordering)
        WeightStrategy(self.w_strategy)
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.pop_size < 1 or self.pop_iters < 1:
            raise ValueError("population size and iterations must be >= 1")
        self.bp_config()  # validates r, tol, clip, epsilon, init

    def bp_config(self) -> BpConfig:
        return BpConfig(r=self.radius, tol=self.tol, clip=self.clip, epsilon=self.epsilon, init=self.init)


@dataclass
class ExperimentConfig:
    kind: str = "xorsat"
    k: int = 4
    n: int = 100
    alphas: list = field(default_factory=lambda: [0.4])
    formulas: int = 10
    replicates: int = 1
    seed: int = 0
    workers: int = 1
    output: Optional[str] = None
    timing: bool = False
    sampler: SamplerSpec = field(default_factory=SamplerSpec)

    def __post_init__(self):
        Kind(self.kind)
        if self.k < 2 or self.n < self.k:
            raise ValueError("need 2 <= k <= n")
        if self.formulas < 1 or self.replicates < 1 or self.workers < 1:
            raise ValueError("formulas, replicates and workers must be >= 1")
        if not self.alphas or any(a < 0 for a in self.alphas):
            raise ValueError("alphas must be a nonempty list of non-negative numbers")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        spec_keys = {f.name for f in fields(SamplerSpec)}
        top_keys = {f.name for f in fields(cls)} - {"sampler"}
        unknown = set(values) - spec_keys - top_keys - {"alpha"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        spec = {}
        for f in fields(SamplerSpec):
            if f.name in values:
                spec[f.name] = _coerce(f.name, values[f.name], SamplerSpec)
        top = {}
        for key, raw in values.items():
            if key in ("alpha", "alphas"):
                top["alphas"] = _float_list(raw)
            elif key in top_keys:
                top[key] = _coerce(key, raw, cls)
        return cls(sampler=SamplerSpec(**spec), **top)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Flat ``key = value`` lines; ``#`` and ``;`` start comments."""
        text = Path(path).read_text(encoding="utf-8")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.read_string("[sweep]\n" + text)
        return cls.from_mapping(dict(cp["sweep"]))

    def to_mapping(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "sampler"}
        d.update(asdict(self.sampler))
        d["radius"] = format_radius(self.sampler.radius)
        return d


def _float_list(raw) -> list:
    if isinstance(raw, (list, tuple)):
        return [float(x) for x in raw]
    return [float(x) for x in str(raw).replace(",", " ").split()]


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(name, raw, owner):
    if not isinstance(raw, str):
        return raw
    default = {f.name: f for f in fields(owner)}[name].default
    if name == "radius":
        return _parse_radius(raw)
    if name == "output":
        return raw
    if isinstance(default, bool):
        if raw.strip().lower() not in _BOOL:
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return _BOOL[raw.strip().lower()]
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


# ----------------------------------------------------------------- running


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def clause_count(n: int, alpha: float) -> int:
    return int(round(alpha * n))


def make_formula(cfg: ExperimentConfig, alpha_index: int, instance: int) -> FactorGraph:
    alpha = cfg.alphas[alpha_index]
    return gen_random(Kind(cfg.kind), cfg.n, clause_count(cfg.n, alpha), cfg.k, _rng(cfg.seed, 0, alpha_index, instance))


_POP_CACHES: dict = {}


def population_cache(k: int, alpha: float, spec: SamplerSpec, seed: int) -> PopulationCache:
    key = (k, alpha, spec.pop_size, spec.pop_iters, seed)
    if key not in _POP_CACHES:
        _POP_CACHES[key] = PopulationCache(k, alpha, spec.pop_size, spec.pop_iters, seed)
    return _POP_CACHES[key]


def run_sampler(g: FactorGraph, spec: SamplerSpec, rng: np.random.Generator, cache=None) -> SampleTrace:
    """One sampler run; a graph the requested ordering/weights cannot handle raises ValueError."""
    if spec.method == "continuous":
        if spec.denoiser == "bp":
            den = BpContinuousDenoiser(g, spec.bp_config())
        elif spec.denoiser == "exact":
            den = ExactContinuousDenoiser(g)
        else:
            den = ChannelDenoiser()
        w = None
        if WeightStrategy(spec.w_strategy) is WeightStrategy.LEAF_RANK:
            lr = leaf_removal(g)
            if not lr.success:
                raise ValueError("leaf-rank weights need a successful leaf removal")
            plan = compute_ordering(g, Strategy.REVERSED_LEAF, lr, rng)
            w = weight_matrix(g, WeightStrategy.LEAF_RANK, spec.c0, plan)
        return continuous_sample(g, den, cosine_schedule(spec.steps), w, rng)
    strategy = Strategy(spec.ordering)
    plan = compute_ordering(g, strategy, rng=rng)
    if spec.denoiser == "exact":
        den = ExactDiscreteDenoiser(g)
    elif spec.denoiser == "bp":
        den = BpDiscreteDenoiser(g, spec.bp_config(), cache=cache, rng=rng)
    else:
        raise ValueError("the channel denoiser has no discrete form")
    return discrete_sample(g, den, plan, rng)


@dataclass
class Record:
    kind: str
    k: int
    n: int
    alpha: float
    method: str
    denoiser: str
    radius: str
    init: str
    ordering: str
    w_strategy: str
    seed: int
    instance: int
    replicate: int
    success: bool
    violations: int
    logprob: float
    millis: float

    def row(self) -> list:
        lp = "" if math.isnan(self.logprob) else repr(float(self.logprob))
        return [self.kind, self.k, self.n, repr(float(self.alpha)), self.method, self.denoiser, self.radius,
                self.init, self.ordering, self.w_strategy, self.seed, self.instance, self.replicate,
                int(self.success), self.violations, lp, f"{self.millis:.3f}"]

    @classmethod
    def from_row(cls, row: dict) -> "Record":
        return cls(row["kind"], int(row["k"]), int(row["n"]), float(row["alpha"]), row["method"],
                   row["denoiser"], row["radius"], row["init"], row["ordering"], row["w_strategy"],
                   int(row["seed"]), int(row["instance"]), int(row["replicate"]), row["success"] == "1",
                   int(row["violations"]), float(row["logprob"]) if row["logprob"] else math.nan,
                   float(row["millis"]))


def _task(args) -> list:
    cfg, a_idx, inst = args
    spec = cfg.sampler
    alpha = cfg.alphas[a_idx]
    g = make_formula(cfg, a_idx, inst)
    cache = None
    if spec.method == "discrete" and spec.init == "cavity":
        cache = population_cache(cfg.k, g.alpha, spec, int(_rng(cfg.seed, 2, a_idx).integers(2**63)))
    out = []
    for rep in range(cfg.replicates):
        rng = _rng(cfg.seed, 1, a_idx, inst, rep)
        try:
            tr = run_sampler(g, spec, rng, cache)
            ok, viol, lp, ms = tr.success, tr.violations, tr.total_logp, tr.millis
        except (ValueError, ArithmeticError, RuntimeError):
            # e.g. reversed-leaf ordering on a graph whose leaf removal stalls
            ok, viol, lp, ms = False, -1, math.nan, 0.0
        out.append(Record(cfg.kind, cfg.k, cfg.n, alpha, spec.method, spec.denoiser, format_radius(spec.radius),
                          spec.init, spec.ordering, spec.w_strategy, cfg.seed, inst, rep, bool(ok), int(viol),
                          lp if spec.method == "discrete" else math.nan, ms if cfg.timing else 0.0))
    return out


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = binomtest(successes, trials).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class SweepResult:
    records: list

    def points(self) -> list:
        return sorted({r.alpha for r in self.records})

    def summary(self) -> list:
        out = []
        for a in self.points():
            rs = [r for r in self.records if r.alpha == a]
            s = sum(r.success for r in rs)
            lo, hi = wilson_interval(s, len(rs))
            out.append({"alpha": a, "trials": len(rs), "successes": s, "rate": s / len(rs),
                        "wilson_low": lo, "wilson_high": hi})
        return out

    def rate(self, alpha: float) -> float:
        rs = [r.success for r in self.records if r.alpha == alpha]
        return float(np.mean(rs))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())
        with open(path.with_suffix(".json"), "w", encoding="utf-8") as f:
            json.dump({"points": self.summary()}, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def read(cls, path) -> "SweepResult":
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        if rows and list(rows[0].keys()) != CSV_HEADER:
            raise ValueError("unexpected CSV header")
        return cls([Record.from_row(r) for r in rows])


def run_sweep(cfg: ExperimentConfig, progress: Optional[Callable[[int, int], None]] = None) -> SweepResult:
    """Run every (alpha, formula, replicate) cell and return the records in key order."""
    tasks = [(cfg, a, i) for a in range(len(cfg.alphas)) for i in range(cfg.formulas)]
    records = []
    if cfg.workers == 1:
        for j, t in enumerate(tasks):
            records.extend(_task(t))
            if progress:
                progress(j + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            for j, recs in enumerate(ex.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * cfg.workers)))):
                records.extend(recs)
                if progress:
                    progress(j + 1, len(tasks))
    res = SweepResult(records)
    if cfg.output:
        res.write(cfg.output)
    return res


# -------------------------------------------------------------- uniformity


def phi(k: int, alpha: float) -> float:
    """``log 2 + alpha log(1 - 2^-k)`` in nats."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return math.log(2.0) + alpha * math.log1p(-(2.0 ** -k))


@dataclass
class UniformityReport:
    values: np.ndarray
    failures: int
    phi: float

    @property
    def ok(self) -> bool:
        return self.values.size > 0

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std())

    @property
    def kl_bound(self) -> float:
        return self.phi - self.mean

    def as_dict(self) -> dict:
        d = {"samples": int(self.values.size), "failures": self.failures, "phi": self.phi}
        if self.ok:
            d.update(mean=self.mean, std=self.std, kl_bound=self.kl_bound)
        return d


def uniformity_test(g: FactorGraph, sampler: Callable[[np.random.Generator], SampleTrace], n_samples: int,
                    rng: np.random.Generator) -> UniformityReport:
    """Per successful sample, ``-sum(trace) / N``; failed samples are only counted."""
    vals, fails = [], 0
    for _ in range(n_samples):
        tr = sampler(rng)
        if tr.logp is None:
            raise ValueError("uniformity needs a trace-producing (discrete) sampler")
        if tr.success:
            vals.append(-tr.total_logp / g.n_vars)
        else:
            fails += 1
    return UniformityReport(np.array(vals), fails, phi(g.k, g.alpha))
