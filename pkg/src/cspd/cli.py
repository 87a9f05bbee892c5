"""Command-line interface: ``cspd <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime failure.
The seed defaults to the ``CSPD_SEED`` environment variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import cavity, io
from .harness import ExperimentConfig, SamplerSpec, run_sampler, run_sweep, uniformity_test, population_cache
from .instance import FreePolicy, Kind, Strategy, WeightStrategy, check_assignment, gen_planted_sat, gen_random, xorsat_solve


class UsageError(Exception):
    def __init__(self, message: str, usage: str | None = None):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}", self.format_usage())


def _default_seed() -> int:
    raw = os.environ.get("CSPD_SEED")
    if raw is None or raw == "":
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise UsageError(f"CSPD_SEED must be a non-negative integer, got {raw!r}") from None
    if seed < 0:
        raise UsageError("CSPD_SEED must be non-negative")
    return seed


def _seed(value: str) -> int:
    s = int(value)
    if s < 0 or s >= 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return s


def _positive(value: str) -> int:
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg_float(value: str) -> float:
    v = float(value)
    if v < 0 or math.isnan(v):
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _unit(value: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


def _radius(value: str) -> float:
    if value.lower() in ("inf", "infinite", "infinity"):
        return math.inf
    v = int(value)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0 or 'inf'")
    return v


def _emit(text: str, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def _add_seed(p):
    p.add_argument("--seed", type=_seed, default=None, help="RNG seed (default: $CSPD_SEED or 0)")


def _add_sampler(p):
    p.add_argument("--method", choices=["continuous", "discrete"], default="continuous")
    p.add_argument("--denoiser", default="bp",
                   choices=["bp", "sat-bp", "xorsat-bp", "exact", "channel"])
    p.add_argument("--r", type=_radius, default=1, help="BP rounds, or 'inf' for the fixed point")
    p.add_argument("--init", choices=["zero", "warm", "cavity"], default="zero")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--clip", type=float, default=30.0)
    p.add_argument("--tol", type=_nonneg_float, default=0.0)
    p.add_argument("--ordering", choices=[s.value for s in Strategy], default="random")
    p.add_argument("--w-strategy", choices=[s.value for s in WeightStrategy], default="identity")
    p.add_argument("--c0", type=float, default=0.55)
    p.add_argument("--steps", type=int, default=500, help="diffusion steps L")
    p.add_argument("--pop-size", type=_positive, default=10_000)
    p.add_argument("--pop-iters", type=_positive, default=50)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cspd", description="Diffusion samplers with BP denoisers for random k-SAT / k-XORSAT.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a random instance")
    p.add_argument("--kind", choices=[k.value for k in Kind], required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=_positive, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--m", type=int)
    g.add_argument("--alpha", type=_nonneg_float)
    p.add_argument("--planted", action="store_true", help="SAT only: plant a random solution")
    p.add_argument("-o", "--output", default=None)
    _add_seed(p)

    p = sub.add_parser("solve", help="solve an XORSAT instance exactly, or check an assignment")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--check", metavar="ASSIGNMENT", help="file with a 'v ... 0' assignment line")
    p.add_argument("--free", choices=[f.value for f in FreePolicy], default="uniform")
    _add_seed(p)

    p = sub.add_parser("sample", help="run one sampler on one instance")
    p.add_argument("-i", "--input", required=True)
    _add_sampler(p)
    _add_seed(p)

    p = sub.add_parser("sweep", help="success-rate sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=_positive, default=None)
    p.add_argument("--output", default=None)
    _add_seed(p)

    p = sub.add_parser("thresholds", help="threshold table, alpha_mask or alpha_diff")
    p.add_argument("--mode", choices=["mask", "diff", "table"], default="table")
    p.add_argument("--k", type=int, action="append", help="repeatable; default 3..10")
    p.add_argument("--numeric", action="store_true", help="mask mode: also run the numeric estimator")
    p.add_argument("--pop-size", type=_positive, default=10_000)
    p.add_argument("--iters", type=_positive, default=100)
    p.add_argument("--grid", type=_positive, default=21, help="number of t points in [0, 1]")
    p.add_argument("--delta0", type=float, default=0.01)
    p.add_argument("--output", default=None, help="also write a CSV")
    _add_seed(p)

    p = sub.add_parser("popdyn", help="run population dynamics and emit CSV")
    p.add_argument("--model", choices=["ksat-cavity", "xorsat-diff"], required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha", type=_nonneg_float, required=True)
    p.add_argument("--t", type=_unit, action="append", help="repeatable; default 21-point grid")
    p.add_argument("--pop-size", type=_positive, default=10_000)
    p.add_argument("--iters", type=_positive, default=100)
    p.add_argument("--pool", type=_positive, default=1)
    p.add_argument("--output", default=None)
    _add_seed(p)

    p = sub.add_parser("uniformity", help="log-probability uniformity diagnostic")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--samples", type=_positive, default=100)
    p.add_argument("--denoiser", choices=["bp", "exact"], default="bp")
    p.add_argument("--r", type=_radius, default=3)
    p.add_argument("--init", choices=["zero", "warm", "cavity"], default="zero")
    p.add_argument("--ordering", choices=[s.value for s in Strategy], default="random")
    _add_seed(p)
    return ap


# ------------------------------------------------------------ subcommands


def _cmd_gen(a, seed):
    if a.k < 2 or a.k > a.n:
        raise UsageError("need 2 <= k <= n")
    m = a.m if a.m is not None else int(round(a.alpha * a.n))
    if m < 0:
        raise UsageError("--m must be non-negative")
    rng = np.random.default_rng(seed)
    if a.planted:
        if a.kind != "sat":
            raise UsageError("--planted applies to SAT instances only")
        g, _ = gen_planted_sat(a.n, m, a.k, rng)
    else:
        g = gen_random(Kind(a.kind), a.n, m, a.k, rng)
    _emit(io.serialize(g), a.output)


def _cmd_solve(a, seed):
    g = io.read(a.input)
    if a.check:
        with open(a.check, encoding="utf-8") as f:
            x = io.parse_assignment(f.read())
        if x.size != g.n_vars:
            raise ValueError(f"assignment has {x.size} variables, instance has {g.n_vars}")
        viol = check_assignment(g, x)
        if viol.size == 0:
            print("s SATISFIED")
        else:
            print("s VIOLATED " + " ".join(str(int(c)) for c in viol))
        return
    if g.kind is not Kind.XORSAT:
        raise ValueError("exact solving is only available for XORSAT; use --check for SAT")
    x = xorsat_solve(g, FreePolicy(a.free), np.random.default_rng(seed))
    if x is None:
        print("s UNSATISFIABLE")
    else:
        print("s SATISFIABLE")
        print(io.format_assignment(x))


def _spec_from_args(a) -> SamplerSpec:
    den = "bp" if a.denoiser in ("sat-bp", "xorsat-bp") else a.denoiser
    return SamplerSpec(method=a.method, denoiser=den, radius=a.r, init=a.init, epsilon=a.epsilon, clip=a.clip,
                       tol=a.tol, ordering=a.ordering, w_strategy=a.w_strategy, c0=a.c0, steps=a.steps,
                       pop_size=a.pop_size, pop_iters=a.pop_iters)


def _check_denoiser_kind(name: str, g):
    if name == "sat-bp" and g.kind is not Kind.SAT or name == "xorsat-bp" and g.kind is not Kind.XORSAT:
        raise ValueError(f"denoiser {name} does not match a {g.kind.value} instance")


def _cmd_sample(a, seed):
    g = io.read(a.input)
    _check_denoiser_kind(a.denoiser, g)
    spec = _spec_from_args(a)
    rng = np.random.default_rng(seed)
    cache = None
    if spec.method == "discrete" and spec.init == "cavity":
        cache = population_cache(g.k, g.alpha, spec, seed)
    tr = run_sampler(g, spec, rng, cache)
    print(f"c method={spec.method} steps={tr.steps} violations={tr.violations}")
    if tr.logp is not None:
        print(f"c logprob={tr.total_logp!r}")
        print("c trace " + " ".join(repr(float(v)) for v in tr.logp))
    if tr.error:
        print(f"c error: {tr.error}")
    print("s SOLUTION" if tr.success else "s FAILED")
    print(io.format_assignment(tr.x))


def _cmd_sweep(a, seed_given):
    cfg = ExperimentConfig.from_file(a.config)
    if seed_given is not None:
        cfg.seed = seed_given
    if a.workers is not None:
        cfg.workers = a.workers
    if a.output is not None:
        cfg.output = a.output
    res = run_sweep(cfg)
    if not cfg.output:
        sys.stdout.write(res.to_csv())
    else:
        for p in res.summary():
            print(f"alpha={p['alpha']:g} rate={p['rate']:.4f} "
                  f"[{p['wilson_low']:.4f}, {p['wilson_high']:.4f}] n={p['trials']}")


def _ks(a):
    ks = a.k or list(range(3, 11))
    for k in ks:
        if k < 3:
            raise UsageError("thresholds are defined for k >= 3")
    return ks


def _cmd_thresholds(a, seed):
    ks = _ks(a)
    rows = []
    if a.mode == "table":
        print("k alpha_mask alpha_diff alpha_d")
        for k in ks:
            if k not in cavity.THRESHOLD_TABLE:
                raise ValueError(f"no table entry for k={k}")
            m, d, dd = cavity.THRESHOLD_TABLE[k]
            print(f"{k} {m:.6f} {d:.3f} {dd:.6f}")
            rows += [(k, m, "", "alpha_mask", m, ""), (k, d, "", "alpha_diff", d, ""), (k, dd, "", "alpha_d", dd, "")]
    elif a.mode == "mask":
        for k in ks:
            v = cavity.alpha_mask_closed_form(k)
            line = f"{v:.6f}" if len(ks) == 1 else f"{k} {v:.6f}"
            rows.append((k, v, "", "alpha_mask", v, ""))
            if a.numeric:
                est = cavity.estimate_alpha_mask_numeric(k)
                line += f" {est:.6f}"
                rows.append((k, est, "", "alpha_mask_numeric", est, ""))
            print(line)
    else:
        grid = np.linspace(0.0, 1.0, a.grid)
        for k in ks:
            v = cavity.estimate_alpha_diff(k, a.delta0, grid, a.pop_size, a.iters, seed)
            print(f"{v:.3f}" if len(ks) == 1 else f"{k} {v:.3f}")
            rows.append((k, v, "", "alpha_diff", v, seed))
    if a.output:
        cavity.write_threshold_csv(a.output, rows)


def _cmd_popdyn(a, seed):
    ts = a.t if a.t else list(np.linspace(0.0, 1.0, 21))
    if a.pool > a.iters:
        raise UsageError("--pool cannot exceed --iters")
    rows = []
    if a.model == "xorsat-diff":
        d = cavity.popdyn_xorsat_diff(a.k, a.alpha, ts, a.pop_size, a.iters, a.pool, np.random.default_rng(seed))
        rows = [(a.k, a.alpha, float(t), "delta", float(v), seed) for t, v in zip(ts, d)]
    else:
        for j, t in enumerate(ts):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))
            qh, q = cavity.popdyn_cavity_ksat(a.k, a.alpha, float(t), a.pop_size, a.iters, a.pool, rng)
            rows += [(a.k, a.alpha, float(t), "u", float(v), seed) for v in qh.samples]
            rows += [(a.k, a.alpha, float(t), "h", float(v), seed) for v in q.samples]
    _emit(cavity.threshold_csv(rows), a.output)


def _cmd_uniformity(a, seed):
    g = io.read(a.input)
    spec = SamplerSpec(method="discrete", denoiser=a.denoiser, radius=a.r, init=a.init, ordering=a.ordering)
    cache = population_cache(g.k, g.alpha, spec, seed) if a.init == "cavity" else None
    rep = uniformity_test(g, lambda r: run_sampler(g, spec, r, cache), a.samples, np.random.default_rng(seed))
    print(json.dumps(rep.as_dict(), sort_keys=True))
    if not rep.ok:
        raise RuntimeError("no successful samples; summary unavailable")


_COMMANDS = {"gen": _cmd_gen, "solve": _cmd_solve, "sample": _cmd_sample, "thresholds": _cmd_thresholds,
             "popdyn": _cmd_popdyn, "uniformity": _cmd_uniformity}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        given = a.seed
        seed = given if given is not None else _default_seed()
        if a.command == "sweep":
            _cmd_sweep(a, given)
        else:
            _COMMANDS[a.command](a, seed)
    except UsageError as exc:
        sys.stderr.write(exc.usage or parser.format_usage())
        msg = str(exc)
        print(msg if msg.startswith("cspd") else f"cspd: error: {msg}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"cspd: error: {exc}", file=sys.stderr)
        return 2
    return 0


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
