"""Command-line entry point: ``trisolve solve | bench | orbit``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .baselines import BaselineOptions, cg_solve, gmres_solve
from .bench import BenchConfig, ConfigError, run_experiment
from .cta import (CtaOptions, ft_iterate, hybrid_solve, normal_equation_iterate,
                  operator_for, pointwise_orbit)
from .linalg import estimate_matrix_norm, matvec
from .mmio import read_matrix_market, read_vector, write_vector
from .report import SolveReport, Verdict
from .triangle import ta_min_norm, ta_solve, ta_solve_psd

METHODS = ("ta", "ta-psd", "ta-minnorm", "cta", "cta-orbit", "cta-normal", "hybrid", "cg", "gmres")


class UsageError(Exception):
    pass


def _rhs(text, A, seed=0):
    if text == "ones":
        return np.ones(A.nrows)
    if text == "seeded" or text.startswith("seeded:"):
        _, _, s = text.partition(":")
        rng = np.random.default_rng(int(s) if s else seed)
        return matvec(A, rng.standard_normal(A.ncols))
    b = read_vector(text)
    if b.shape != (A.nrows,):
        raise UsageError(f"right-hand side has length {len(b)}, matrix has {A.nrows} rows")
    return b


def _mode(args, A):
    if args.mode == "auto":
        return "psd" if (A.symmetric and args.assume_psd) else "gram"
    if args.mode == "psd" and not A.symmetric:
        raise UsageError("--mode psd needs a matrix declared symmetric")
    return args.mode


def _cta_opts(args, A, **kw):
    if args.precond == "ilu0":
        raise UsageError("CTA methods support --precond none or jacobi")
    mode = _mode(args, A)
    if args.precond == "jacobi" and mode != "psd":
        raise UsageError("--precond jacobi with CTA needs psd mode (--assume-psd)")
    base = dict(t=args.t, eps=args.eps, eps_grad=args.eps_grad, mode=mode,
                max_iter=args.max_iter or 10_000, precond=args.precond)
    if args.cycle:
        base.update(schedule="cycle", t_max=args.cycle)
    base.update(kw)
    return CtaOptions(**base)


def _solve(args, A, b):
    m = args.method
    nb = float(np.linalg.norm(b))
    if m in ("ta", "ta-psd", "ta-minnorm"):
        if args.precond != "none":
            raise UsageError("the triangle algorithm takes no preconditioner")
        eps = args.eps * nb
        eps_n = (args.eps_grad if args.eps_grad is not None else args.eps) * nb * estimate_matrix_norm(A)
        if m == "ta":
            return ta_solve(A, b, eps, eps_n, max_iter=args.max_iter)
        if m == "ta-psd":
            return ta_solve_psd(A, b, eps, eps_n, max_iter=args.max_iter)
        first = ta_solve(A, b, eps, eps_n, max_iter=args.max_iter)
        if first.verdict is not Verdict.SYSTEM:
            return first
        _, rep = ta_min_norm(A, b, eps, first.x, inner_max_iter=args.max_iter)
        rep.iterations += first.iterations
        rep.matvecs += first.matvecs
        return rep
    if m == "cta":
        return ft_iterate(A, b, _cta_opts(args, A))
    if m == "cta-normal":
        return normal_equation_iterate(A, b, _cta_opts(args, A))
    if m == "hybrid":
        return hybrid_solve(A, b, _cta_opts(args, A, hybrid=True))
    if m == "cta-orbit":
        return _orbit_report(A, b, args)
    opts = BaselineOptions(method=m, eps=args.eps, max_iter=args.max_iter or 10_000,
                           precond=args.precond, restart=args.restart)
    if m == "cg":
        if not A.symmetric:
            raise UsageError("cg needs a matrix declared symmetric")
        return cg_solve(A, b, opts)
    return gmres_solve(A, b, opts)


def _orbit_report(A, b, args):
    import time

    from .report import finalize
    t0 = time.perf_counter()
    mode = _mode(args, A)
    cap = args.max_degree or min(operator_for(A, mode).dim, 30)
    orbit = pointwise_orbit(A, b, eps=args.eps, t_cap=cap, mode=mode)
    verdict = {"SystemSolved": Verdict.SYSTEM, "NormalSolved": Verdict.NORMAL}.get(orbit.verdict, Verdict.NC)
    rep = SolveReport("cta-orbit", verdict, orbit.degree or len(orbit.residual_norms), orbit.matvecs)
    rep.history = [(t + 1, v) for t, v in enumerate(orbit.residual_norms)]
    rep.info.update(degree=orbit.degree, orbit_verdict=orbit.verdict,
                    normal_norms=orbit.normal_norms, diagnostic=orbit.diagnostic,
                    coefficients=None if orbit.coefficients is None else list(orbit.coefficients))
    rep.seconds = time.perf_counter() - t0
    return finalize(rep, A, b, orbit.x)


def cmd_solve(args):
    A = read_matrix_market(args.matrix)
    b = _rhs(args.rhs, A)
    rep = _solve(args, A, b)
    if args.report:
        rep.to_json(args.report)
    if args.solution:
        write_vector(rep.x, args.solution)
    print(f"{rep.solver}: {rep.verdict.value} after {rep.iterations} iterations, "
          f"{rep.matvecs} products, relres {rep.rel_residual:.3e}, "
          f"normal relres {rep.rel_normal_residual:.3e}")
    for ev in rep.events:
        if ev.get("kind") == "switch":
            print(f"switched to the normal equation at iteration {ev['iteration']}")
    if rep.info.get("coefficients") is not None:
        print(f"degree {rep.info['degree']}; coefficients {_coeffs(rep.info['coefficients'])}")
    return rep.exit_code


def _coeffs(c):
    return " ".join(f"{v:.17g}" for v in c)


def cmd_bench(args):
    cfg = BenchConfig.from_file(args.config, out=args.out)
    records = run_experiment(cfg, out=args.out or cfg.out, threads=args.threads)
    failed = sum(r.verdict == Verdict.ERROR.value for r in records)
    print(f"{len(records)} runs written to {args.out or cfg.out} ({failed} errors)")
    return 0


def cmd_orbit(args):
    A = read_matrix_market(args.matrix)
    b = _rhs(args.rhs, A)
    mode = _mode(args, A)
    cap = args.max_degree or min(operator_for(A, mode).dim, 30)
    orbit = pointwise_orbit(A, b, eps=args.eps, t_cap=cap, mode=mode)
    print(f"{'t':>3}  {'||F_t(r0)||':>22}  {'||A^T F_t(r0)||':>22}")
    for t, (a, g) in enumerate(zip(orbit.residual_norms, orbit.normal_norms), start=1):
        print(f"{t:>3}  {a:>22.15e}  {g:>22.15e}")
    print(f"verdict {orbit.verdict}" + (f" at t={orbit.degree}" if orbit.degree else ""))
    if orbit.diagnostic:
        print(f"note: {orbit.diagnostic}")
    if orbit.coefficients is not None:
        print(f"coefficients (ascending) {_coeffs(orbit.coefficients)}")
    return {"SystemSolved": 0, "NormalSolved": 2}.get(orbit.verdict, 3)


def build_parser():
    p = argparse.ArgumentParser(prog="trisolve", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one system")
    s.add_argument("--matrix", required=True)
    s.add_argument("--rhs", default="ones", help="path, 'ones' or 'seeded[:seed]'")
    s.add_argument("--method", choices=METHODS, default="cta")
    s.add_argument("--t", type=int, default=1)
    s.add_argument("--cycle", type=int, default=0, metavar="TMAX",
                   help="cycle F_1..F_TMAX instead of a fixed t")
    s.add_argument("--eps", type=float, default=1e-10)
    s.add_argument("--eps-grad", type=float, default=None)
    s.add_argument("--mode", choices=("auto", "psd", "gram"), default="auto")
    s.add_argument("--assume-psd", action="store_true")
    s.add_argument("--max-iter", type=int, default=None)
    s.add_argument("--max-degree", type=int, default=None)
    s.add_argument("--restart", type=int, default=5)
    s.add_argument("--precond", choices=("none", "jacobi", "ilu0"), default="none")
    s.add_argument("--report")
    s.add_argument("--solution")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.add_argument("--threads", type=int, default=None)
    b.set_defaults(func=cmd_bench)

    o = sub.add_parser("orbit", help="print the point-wise orbit table")
    o.add_argument("--matrix", required=True)
    o.add_argument("--rhs", default="ones")
    o.add_argument("--max-degree", type=int, default=None)
    o.add_argument("--eps", type=float, default=1e-10)
    o.add_argument("--mode", choices=("auto", "psd", "gram"), default="auto")
    o.add_argument("--assume-psd", action="store_true")
    o.set_defaults(func=cmd_orbit)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValueError, OSError, ArithmeticError) as exc:
        print(f"trisolve: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
