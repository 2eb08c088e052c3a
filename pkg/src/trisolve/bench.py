"""Benchmark harness: recipes x solvers x tolerances, emitting CSV and history files.

Configuration is an INI file with a ``[bench]`` section::

    [bench]
    recipes =
        random_spd:n=100,kappa=1e4
        random_psd:n=100,rank=60,kappa=1e3
    solvers = cta cg gmres
    tolerances = 1e-2 1e-6 1e-12
    seeds = 1 2
    out = results/pd
    max_iter = 20000

Lists are whitespace separated (recipes may also be one per line).  Each
cell regenerates its matrix from ``(recipe, seed)``, so cells are
independent and may run in worker processes.
"""

from __future__ import annotations

import configparser
import csv
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .baselines import BaselineOptions, cg_solve, gmres_solve
from .cta import CtaOptions, ft_iterate, hybrid_solve, normal_equation_iterate
from .gallery import MatrixRecipe, generate
from .linalg import estimate_matrix_norm
from .report import Verdict
from .triangle import ta_solve, ta_solve_psd

CSV_COLUMNS = ("recipe", "solver", "n", "eps", "iters", "matvecs", "relres", "verdict", "seconds")
REQUIRED_KEYS = ("recipes", "solvers", "tolerances", "seeds")
THREADS_ENV = "TRISOLVE_BENCH_THREADS"


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    recipes: list
    solvers: list
    tolerances: list
    seeds: list = field(default_factory=lambda: [0])
    out: Optional[str] = None
    max_iter: int = 20_000
    history_stride: int = 1

    def __post_init__(self):
        bad = [t for t in self.tolerances if not 0 < t < 1]
        if bad:
            raise ConfigError(f"invalid value for key 'tolerances': {_fmt(bad[0])} is not in (0, 1)")
        for s in self.solvers:
            parse_solver(s)
        for r in self.recipes:
            MatrixRecipe.parse(r)
        if self.max_iter < 1:
            raise ConfigError("invalid value for key 'max_iter': must be >= 1")

    @classmethod
    def from_file(cls, path, out=None):
        parser = configparser.ConfigParser(interpolation=None)
        with open(path) as fh:
            parser.read_file(fh)
        if "bench" not in parser:
            raise ConfigError(f"{path}: missing section [bench] (keys required: {', '.join(REQUIRED_KEYS)})")
        sec = parser["bench"]
        missing = [k for k in REQUIRED_KEYS if not sec.get(k, "").strip()]
        if out is None and not sec.get("out", "").strip():
            missing.append("out")
        if missing:
            raise ConfigError(f"{path}: missing config keys: {', '.join(missing)}")
        try:
            tolerances = [float(v) for v in sec["tolerances"].split()]
        except ValueError as exc:
            raise ConfigError(f"invalid value for key 'tolerances': {exc}") from None
        try:
            seeds = [int(v) for v in sec["seeds"].split()]
        except ValueError as exc:
            raise ConfigError(f"invalid value for key 'seeds': {exc}") from None
        try:
            max_iter = int(sec.get("max_iter", "20000"))
            stride = int(sec.get("history_stride", "1"))
        except ValueError as exc:
            raise ConfigError(f"invalid integer value: {exc}") from None
        return cls(recipes=sec["recipes"].split(), solvers=sec["solvers"].split(),
                   tolerances=tolerances, seeds=seeds, out=out or sec["out"].strip(),
                   max_iter=max_iter, history_stride=stride)


@dataclass
class RunRecord:
    recipe: str
    solver: str
    n: int
    eps: float
    iters: int
    matvecs: int
    relres: float
    verdict: str
    seconds: float
    history: list = field(default_factory=list, repr=False)
    message: str = ""

    def row(self):
        return [self.recipe, self.solver, self.n, _fmt(self.eps), self.iters, self.matvecs,
                f"{self.relres:.6e}", self.verdict, f"{self.seconds:.6f}"]

    @property
    def key(self):
        return (self.recipe, self.solver, self.eps)


def _fmt(v):
    return f"{v:g}"


SOLVER_NAMES = ("cta", "cta-normal", "hybrid", "cg", "gmres", "ta", "ta-psd")


def parse_solver(text):
    """``name[:key=value,...]`` into ``(name, params)``."""
    name, _, rest = text.partition(":")
    if name not in SOLVER_NAMES:
        raise ConfigError(f"unknown solver {name!r}; choose from {', '.join(SOLVER_NAMES)}")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"solver option {item!r} is not key=value")
        params[key] = value
    return name, params


def _cta_options(params, eps, max_iter, stride, **defaults):
    kw = dict(eps=eps, max_iter=max_iter, history_stride=stride, schedule="cycle", t_max=5,
              eps_grad=0.0)
    kw.update(defaults)
    for key, value in params.items():
        if key in ("t", "t_max", "window"):
            kw[key] = int(value)
            if key == "t":
                kw["schedule"] = "fixed"
        elif key in ("eps_grad", "eta"):
            kw[key] = float(value)
        elif key in ("schedule", "mode", "precond"):
            kw[key] = value
        else:
            raise ConfigError(f"unknown cta option {key!r}")
    return CtaOptions(**kw)


def run_solver(solver, A, b, eps, max_iter=20_000, stride=1):
    """Run one named solver at relative tolerance ``eps``."""
    name, params = parse_solver(solver)
    if name == "cta":
        return ft_iterate(A, b, _cta_options(params, eps, max_iter, stride))
    if name == "cta-normal":
        return normal_equation_iterate(A, b, _cta_options(params, eps, max_iter, stride,
                                                          schedule="fixed", t=1))
    if name == "hybrid":
        return hybrid_solve(A, b, _cta_options(params, eps, max_iter, stride, hybrid=True))
    if name in ("cg", "gmres"):
        kw = dict(method=name, eps=eps, max_iter=max_iter, history_stride=stride)
        for key, value in params.items():
            if key == "restart":
                kw[key] = int(value)
            elif key == "precond":
                kw[key] = value
            else:
                raise ConfigError(f"unknown {name} option {key!r}")
        opts = BaselineOptions(**kw)
        return (cg_solve if name == "cg" else gmres_solve)(A, b, opts)
    # the triangle algorithm takes absolute tolerances
    nb = float(np.linalg.norm(b))
    if name == "ta-psd":
        return ta_solve_psd(A, b, eps * nb, eps * nb * estimate_matrix_norm(A), max_iter=max_iter,
                            history_stride=stride)
    return ta_solve(A, b, eps * nb, eps * nb * estimate_matrix_norm(A), max_iter=max_iter,
                    history_stride=stride)


@lru_cache(maxsize=8)
def _instance(recipe_text, seed):
    return generate(MatrixRecipe.parse(recipe_text, seed))


def recipe_id(recipe_text, seed):
    return f"{MatrixRecipe.parse(recipe_text).label}@{seed}"


def run_cell(recipe_text, seed, solver, eps, max_iter=20_000, stride=1):
    """One (recipe, seed, solver, tolerance) cell; failures become ``Error`` records."""
    rid = recipe_id(recipe_text, seed)
    t0 = time.perf_counter()
    n = 0
    try:
        inst = _instance(recipe_text, seed)
        n = inst.n
        rep = run_solver(solver, inst.A, inst.b, eps, max_iter, stride)
        nb = float(np.linalg.norm(inst.b))
        hist = [(k, v / nb) for k, v in rep.history]
        return RunRecord(rid, solver, n, eps, rep.iterations, rep.matvecs, rep.rel_residual,
                         rep.verdict.value, rep.seconds, hist)
    except Exception as exc:  # a broken cell must not stop the suite
        return RunRecord(rid, solver, n, eps, 0, 0, float("nan"), Verdict.ERROR.value,
                         time.perf_counter() - t0, [], f"{type(exc).__name__}: {exc}")


def _cells(config):
    for recipe in config.recipes:
        for seed in config.seeds:
            for solver in config.solvers:
                for eps in config.tolerances:
                    yield (recipe, seed, solver, eps, config.max_iter, config.history_stride)


def _run_star(args):
    return run_cell(*args)


def run_experiment(config, out=None, threads=None):
    """Run every cell, write ``results.csv`` and history files, return the records.

    Records are sorted by (recipe, solver, eps) before writing, so the
    output does not depend on execution order.  ``threads`` (default from
    the ``TRISOLVE_BENCH_THREADS`` environment variable) above one runs
    cells in worker processes.
    """
    out = out or config.out
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    cells = list(_cells(config))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_star, cells))
    else:
        records = [run_cell(*c) for c in cells]
    records.sort(key=lambda r: (r.recipe, r.solver, r.eps))
    if out:
        write_results(records, out)
    return records


def _safe(text):
    return re.sub(r"[^A-Za-z0-9.=@+-]+", "_", text)


def write_results(records, out):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "results.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())
    tightest = {}
    for rec in records:
        key = (rec.recipe, rec.solver)
        if key not in tightest or rec.eps < tightest[key].eps:
            tightest[key] = rec
    for (recipe, solver), rec in sorted(tightest.items()):
        path = os.path.join(out, f"{_safe(recipe)}_{_safe(solver)}.dat")
        with open(path, "w") as fh:
            for k, v in rec.history:
                fh.write(f"{k} {v:.17g}\n")
    errors = [r for r in records if r.message]
    if errors:
        with open(os.path.join(out, "errors.txt"), "w") as fh:
            for r in errors:
                fh.write(f"{r.recipe} {r.solver} {_fmt(r.eps)}: {r.message}\n")


def read_results(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
