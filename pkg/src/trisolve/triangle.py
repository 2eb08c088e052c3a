"""The Triangle Algorithm: pivots, witnesses and the minimum-norm bisection.

The iterate ``b' = A x'`` lives in the ellipsoid ``E = {A x : ||x|| <= rho}``.
Each step either moves ``b'`` strictly closer to ``b`` along a segment
towards a *pivot* ``v`` of ``E``, or certifies that ``b'`` is a *witness*:
the hyperplane bisecting ``[b, b']`` separates ``b`` from ``E``, so ``rho``
must grow.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .linalg import estimate_matrix_norm, matvec, transpose_matvec
from .report import SolveReport, Verdict, finalize

log = logging.getLogger(__name__)

MAX_ITER_CAP = 10_000_000
# ties rho ||c|| == (b - b')^T b are pivots; after rho is set to the witness
# bound they occur up to rounding, so allow a few ulps
TIE = 1.0 - 8.0 * np.finfo(np.float64).eps


def _is_witness(rho, cn, gap):
    return rho * cn < gap * TIE


@dataclass(frozen=True)
class TAState:
    """Iterate ``x'`` with ``b' = A x'`` inside the ellipsoid of radius ``rho``."""

    x: np.ndarray
    bp: np.ndarray
    rho: float = 0.0
    iterations: int = 0
    matvecs: int = 0

    @classmethod
    def zero(cls, A):
        return cls(np.zeros(A.ncols), np.zeros(A.nrows))


@dataclass(frozen=True)
class Witness:
    """``b'`` admits no strict pivot at radius ``rho``.

    ``lower_bound = (b - b')^T b / ||c||`` is a lower bound on the norm of the
    minimum-norm solution (for consistent systems).
    """

    bp: np.ndarray
    rho: float
    lower_bound: float
    c_norm: float
    gap: float
    degenerate: bool = False


@dataclass(frozen=True)
class MinNormBracket:
    upper: float
    lower: float
    x: np.ndarray
    certified: bool = True

    @property
    def width(self):
        return self.upper - self.lower


class StepKind(enum.Enum):
    CONVERGED = "converged"
    NORMAL = "normal"
    IMPROVED = "improved"
    WITNESS = "witness"


@dataclass(frozen=True)
class StepOutcome:
    kind: StepKind
    state: TAState
    witness: Optional[Witness] = None
    c: Optional[np.ndarray] = None


def pivot_step(A, b, state, eps, eps_normal, c=None):
    """One step of the triangle algorithm at the current ``rho``.

    Parameters
    ----------
    A : SparseMatrix
    b : ndarray
    state : TAState
    eps, eps_normal : float
        Absolute tolerances on ``||b - b'||`` and ``||A^T (b - b')||``.
    c : ndarray, optional
        ``A^T (b - b')`` if already known (saves one product after a witness).

    Returns
    -------
    StepOutcome
        ``c`` is returned on a witness so the caller can reuse it.
    """
    diff = b - state.bp
    if np.linalg.norm(diff) <= eps:
        return StepOutcome(StepKind.CONVERGED, state)
    used = 0
    if c is None:
        c = transpose_matvec(A, diff)
        used += 1
    cn = float(np.linalg.norm(c))
    if cn <= eps_normal:
        return StepOutcome(StepKind.NORMAL, replace(state, matvecs=state.matvecs + used), c=c)
    gap = float(diff @ b)
    rho = state.rho
    bumped = replace(state, iterations=state.iterations + 1, matvecs=state.matvecs + used)
    if _is_witness(rho, cn, gap):
        w = Witness(state.bp, rho, gap / cn, cn, gap)
        return StepOutcome(StepKind.WITNESS, bumped, witness=w, c=c)
    direction = c / cn
    v = rho * matvec(A, direction)
    bumped = replace(bumped, matvecs=bumped.matvecs + 1)
    seg = v - state.bp
    seg2 = float(seg @ seg)
    if seg2 == 0.0:
        # v coincides with b': no movement is possible at this radius
        w = Witness(state.bp, rho, gap / cn, cn, gap, degenerate=True)
        return StepOutcome(StepKind.WITNESS, bumped, witness=w, c=c)
    # nearest point of b on the segment [b', v]
    alpha = min(1.0, max(0.0, float(diff @ seg) / seg2))
    x = (1.0 - alpha) * state.x + (alpha * rho) * direction
    bp = (1.0 - alpha) * state.bp + alpha * v
    return StepOutcome(StepKind.IMPROVED, replace(bumped, x=x, bp=bp))


def _default_max_iter(A, b, eps):
    nrm_a = estimate_matrix_norm(A)
    atb = float(np.linalg.norm(transpose_matvec(A, b)))
    rho1 = float(b @ b) / atb if atb > 0 else 1.0
    est = 10.0 * math.ceil((nrm_a * rho1 / eps) ** 2)
    return int(min(max(est, 1000), MAX_ITER_CAP))


def _resync(A, state):
    return replace(state, bp=matvec(A, state.x), matvecs=state.matvecs + 1)


def ta_solve(A, b, eps=1e-6, eps_normal=None, max_iter=None, want_system=False,
             max_halvings=20, recompute_every=256, state=None, history_stride=1):
    """Triangle algorithm for ``Ax = b`` or its normal equation.

    Stops when ``||A x' - b|| <= eps`` (system) or ``||A^T (A x' - b)|| <=
    eps_normal`` (normal).  With ``want_system`` a normal exit halves
    ``eps_normal`` and resumes, at most ``max_halvings`` times.  Tolerances
    are absolute.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b):
        raise ValueError("b must be nonzero")
    if not (0 < eps < 1):
        raise ValueError("eps must lie in (0, 1)")
    eps_normal = eps if eps_normal is None else eps_normal
    if max_iter is None:
        max_iter = _default_max_iter(A, b, eps)
    state = TAState.zero(A) if state is None else state
    report = SolveReport("ta", Verdict.NC, 0, 0)
    witnesses = []
    halvings = 0
    c = None
    rho_logged = False
    nb2 = float(b @ b)
    verdict = Verdict.NC
    while state.iterations < max_iter:
        out = pivot_step(A, b, state, eps, eps_normal, c)
        state, c = out.state, None
        if out.kind is StepKind.CONVERGED:
            verdict = Verdict.SYSTEM
            break
        if out.kind is StepKind.NORMAL:
            if want_system and halvings < max_halvings:
                halvings += 1
                eps_normal *= 0.5
                report.events.append({"kind": "halve_eps_normal", "iteration": state.iterations,
                                      "eps_normal": eps_normal})
                c = out.c
                continue
            verdict = Verdict.NORMAL
            break
        if out.kind is StepKind.WITNESS:
            w = out.witness
            witnesses.append(w)
            report.events.append({"kind": "witness", "iteration": state.iterations, "rho": w.rho,
                                  "lower_bound": w.lower_bound, "c_norm": w.c_norm, "gap": w.gap,
                                  "degenerate": w.degenerate})
            state = replace(state, rho=max(2.0 * state.rho, w.lower_bound))
            c = out.c
            if not rho_logged and eps_normal > 0 and state.rho > nb2 / eps_normal:
                log.info("rho exceeds ||b||^2/eps'; a normal-equation exit is likely")
                rho_logged = True
        elif recompute_every and state.iterations % recompute_every == 0:
            state = _resync(A, state)
        if state.iterations % history_stride == 0:
            report.history.append((state.iterations, float(np.linalg.norm(b - state.bp))))
    report.verdict = verdict
    report.iterations = state.iterations
    report.matvecs = state.matvecs
    report.info.update(rho=state.rho, eps=eps, eps_normal=eps_normal, halvings=halvings,
                       witnesses=len(witnesses))
    report.info["witness_list"] = witnesses
    report.seconds = time.perf_counter() - t0
    finalize(report, A, b, state.x)
    report.info["state"] = state
    return report


def ta_solve_psd(A, b, eps=1e-6, eps_normal=None, max_iter=None, recompute_every=256,
                 tol_psd=1e-12, history_stride=1):
    """Triangle algorithm for symmetric PSD ``A``, one product per iteration.

    Works implicitly with ``A^{1/2} y = b``, ``y = A^{1/2} x``: the ellipsoid
    is ``{A x : x^T A x <= rho^2}`` and ``||c|| = sqrt(d^T A d)`` for the
    gap ``d = b - b'``.  The normal exit means ``sqrt(d^T A d) <= eps_normal``.
    """
    t0 = time.perf_counter()
    if not A.symmetric:
        raise ValueError("ta_solve_psd requires a matrix flagged symmetric")
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b):
        raise ValueError("b must be nonzero")
    eps_normal = eps if eps_normal is None else eps_normal
    if max_iter is None:
        max_iter = _default_max_iter(A, b, eps)
    x = np.zeros(A.ncols)
    bp = np.zeros(A.nrows)
    rho = 0.0
    k = mv = 0
    report = SolveReport("ta-psd", Verdict.NC, 0, 0)
    scale = float(b @ b) * max(np.abs(A.data).max(initial=0.0), 1.0)
    verdict = Verdict.NC
    Ad = None
    while k < max_iter:
        d = b - bp
        if np.linalg.norm(d) <= eps:
            verdict = Verdict.SYSTEM
            break
        if Ad is None:
            Ad = matvec(A, d)
            mv += 1
        q = float(d @ Ad)
        if q < -tol_psd * scale:
            raise ValueError(f"d^T A d = {q:.3e} < 0: A is not PSD")
        cn = math.sqrt(max(q, 0.0))
        if cn <= eps_normal:
            verdict = Verdict.NORMAL
            break
        k += 1
        gap = float(d @ b)
        if not _is_witness(rho, cn, gap):
            v = (rho / cn) * Ad
            seg = v - bp
            seg2 = float(seg @ seg)
            if seg2 > 0.0:
                alpha = min(1.0, max(0.0, float(d @ seg) / seg2))
                x = (1.0 - alpha) * x + (alpha * rho / cn) * d
                bp = (1.0 - alpha) * bp + alpha * v
                Ad = None
                if recompute_every and k % recompute_every == 0:
                    bp = matvec(A, x)
                    mv += 1
                if k % history_stride == 0:
                    report.history.append((k, float(np.linalg.norm(b - bp))))
                continue
            report.events.append({"kind": "witness", "iteration": k, "rho": rho, "degenerate": True})
        else:
            report.events.append({"kind": "witness", "iteration": k, "rho": rho,
                                  "lower_bound": gap / cn})
        # a witness keeps b', so A d is still valid
        rho = max(2.0 * rho, gap / cn)
    report.verdict = verdict
    report.iterations = k
    report.matvecs = mv
    report.info.update(rho=rho, eps=eps, eps_normal=eps_normal)
    report.seconds = time.perf_counter() - t0
    return finalize(report, A, b, x)


def ta_min_norm(A, b, eps, x_eps, inner_max_iter=None, recompute_every=256):
    """Bisection on ``rho`` for an ``eps``-approximate minimum-norm solution.

    Returns ``(MinNormBracket, SolveReport)``.  The report verdict is
    ``MinNormSolved`` when every bisection step was certified, ``SystemSolved``
    when some inner run hit its iteration cap (the bracket is then not a
    proof), and ``NormalSolved`` when ``A^T (b - b')`` vanished.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    x_eps = np.asarray(x_eps, dtype=np.float64)
    if not np.any(b):
        raise ValueError("b must be nonzero")
    if np.linalg.norm(matvec(A, x_eps) - b) > eps * (1 + 1e-12):
        raise ValueError("x_eps is not an eps-approximate solution")
    nrm_a = estimate_matrix_norm(A)
    c_floor = 1e-14 * nrm_a * float(np.linalg.norm(b))
    if inner_max_iter is None:
        inner_max_iter = _default_max_iter(A, b, eps)
    upper, lower = float(np.linalg.norm(x_eps)), 0.0
    best = x_eps.copy()
    x = np.zeros(A.ncols)
    bp = np.zeros(A.nrows)
    report = SolveReport("ta-minnorm", Verdict.MINNORM, 0, 1)
    k = 0
    mv = 1
    outer = 0
    certified = True
    normal = False
    while upper - lower > eps:
        outer += 1
        rho = 0.5 * (upper + lower)
        xn = float(np.linalg.norm(x))
        if xn > rho:
            # shrink the carried iterate back into the smaller ellipsoid
            x *= rho / xn
            bp *= rho / xn
        inner = 0
        c = None
        cn = gap = float("nan")
        witness = False
        while True:
            d = b - bp
            if np.linalg.norm(d) <= eps:
                break
            c = transpose_matvec(A, d)
            mv += 1
            cn = float(np.linalg.norm(c))
            if cn <= c_floor:
                normal = True
                break
            gap = float(d @ b)
            witness = _is_witness(rho, cn, gap)
            if witness or inner >= inner_max_iter:
                break
            u = c / cn
            v = rho * matvec(A, u)
            mv += 1
            seg = v - bp
            seg2 = float(seg @ seg)
            if seg2 == 0.0:
                witness = True
                break
            alpha = min(1.0, max(0.0, float(d @ seg) / seg2))
            x = (1.0 - alpha) * x + (alpha * rho) * u
            bp = (1.0 - alpha) * bp + alpha * v
            inner += 1
            k += 1
            if recompute_every and k % recompute_every == 0:
                bp = matvec(A, x)
                mv += 1
        if normal:
            report.events.append({"kind": "normal_stop", "outer": outer, "rho": rho})
            break
        if np.linalg.norm(b - bp) <= eps:
            upper = rho
            best = x.copy()
            report.events.append({"kind": "upper", "outer": outer, "rho": rho})
        else:
            if not witness:
                certified = False
                report.events.append({"kind": "uncertified_lower", "outer": outer, "rho": rho})
                lower = rho
            else:
                lower = min(max(rho, gap / cn), upper)
                report.events.append({"kind": "witness", "outer": outer, "rho": rho,
                                      "lower_bound": gap / cn})
        report.history.append((outer, upper - lower))
    if normal:
        report.verdict = Verdict.NORMAL
        best = x.copy()
    elif not certified:
        report.verdict = Verdict.SYSTEM
    report.iterations = k
    report.matvecs = mv
    report.info.update(outer=outer, upper=upper, lower=lower, certified=certified,
                       outer_bound=max(0, math.ceil(math.log2(max(np.linalg.norm(x_eps), eps) / eps))))
    report.seconds = time.perf_counter() - t0
    finalize(report, A, b, best)
    bracket = MinNormBracket(upper, lower, best, certified and not normal)
    return bracket, report
