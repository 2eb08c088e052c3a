"""The Centering Triangle Algorithm family.

For a residual ``r = b - A x`` and the PSD operator ``H`` (``A`` itself when
``A`` is symmetric PSD, ``A A^T`` otherwise) the order-``t`` map is

    F_t(r) = r - sum_{i=1..t} alpha_i H^i r,

with ``alpha`` minimising ``||F_t(r)||``.  The matching solution update is
``x += sum alpha_i H^{i-1} r`` (``A^T`` of that sum in Gram mode), so the
identity ``F_t(r) = b - A x_new`` holds exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import (Breakdown, CacheOverflow, KrylovCache, Mode, OperatorH,
                     SparseMatrix, estimate_norm, jacobi_scale, matvec,
                     solve_aux_min_norm, transpose_matvec)
from .report import SolveReport, Verdict, finalize

MAX_T = 30


@dataclass
class CtaOptions:
    """Knobs shared by the CTA solvers.

    Parameters
    ----------
    t : int
        Order of ``F_t`` for the fixed schedule.
    eps, eps_grad : float
        Tolerances for ``||r||`` and for the quadratic forms ``r^T H r``.
        ``eps_grad`` defaults to ``eps``; ``0`` disables the quadratic-form
        exits so only the residual test stops the iteration.
    tol_mode : {'relative', 'absolute'}
        Relative mode tests ``||r|| <= eps ||b||`` and
        ``r^T H r <= eps_grad ||b||^2 ||H||``.
    mode : {'auto', 'psd', 'gram'}
        ``auto`` picks ``psd`` when ``A`` is flagged symmetric.
    schedule : {'fixed', 'cycle'}
        ``cycle`` applies ``F_1, F_2, ..., F_{t_max}`` and starts over.
    hybrid, window, eta
        Switch to the normal equation when ``||r_k|| / ||r_{k-window}|| > eta``.
    precond : {'none', 'jacobi'}
        Jacobi scaling of a symmetric PSD system before iterating.
    """

    t: int = 1
    eps: float = 1e-10
    eps_grad: Optional[float] = None
    tol_mode: str = "relative"
    max_iter: int = 10_000
    mode: str = "auto"
    schedule: str = "fixed"
    t_max: int = 5
    hybrid: bool = False
    window: int = 25
    eta: float = 0.99
    max_t: int = MAX_T
    recompute_every: int = 256
    history_stride: int = 1
    precond: str = "none"

    def __post_init__(self):
        if not 1 <= self.t <= self.max_t:
            raise ValueError(f"t must lie in [1, {self.max_t}]")
        if not 1 <= self.t_max <= self.max_t:
            raise ValueError(f"t_max must lie in [1, {self.max_t}]")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.eps <= 0 or (self.eps_grad is not None and self.eps_grad < 0):
            raise ValueError("eps must be positive and eps_grad nonnegative")
        if self.tol_mode not in ("relative", "absolute"):
            raise ValueError("tol_mode must be 'relative' or 'absolute'")
        if self.mode not in ("auto", "psd", "gram"):
            raise ValueError("mode must be 'auto', 'psd' or 'gram'")
        if self.schedule not in ("fixed", "cycle"):
            raise ValueError("schedule must be 'fixed' or 'cycle'")
        if self.precond not in ("none", "jacobi"):
            raise ValueError("precond must be 'none' or 'jacobi'")
        if self.max_iter < 0 or self.history_stride < 1:
            raise ValueError("max_iter must be >= 0 and history_stride >= 1")

    @property
    def grad_eps(self):
        return self.eps if self.eps_grad is None else self.eps_grad

    def order(self, k):
        """Order used at iteration ``k`` (0-based)."""
        if self.schedule == "cycle":
            return k % self.t_max + 1
        return self.t


@dataclass
class CtaState:
    """Residual and solution pair with counters."""

    r: np.ndarray
    x: np.ndarray
    k: int = 0
    matvecs: int = 0
    history: list = field(default_factory=list)


@dataclass
class OrbitResult:
    """Record of the point-wise orbit ``F_1(r0), F_2(r0), ...``."""

    residual_norms: list
    normal_norms: list
    degree: Optional[int]
    verdict: str
    x: np.ndarray
    alpha: Optional[np.ndarray]
    coefficients: Optional[np.ndarray]
    matvecs: int
    diagnostic: str = ""


def operator_for(A, mode="auto"):
    if mode == "auto":
        mode = "psd" if A.symmetric else "gram"
    return OperatorH(A, Mode(mode))


# ---------------------------------------------------------------------------
# first order


def f1_apply(H, r):
    """``(F_1(r), alpha_11)`` with ``alpha_11 = r^T H r / r^T H^2 r``.

    Raises
    ------
    Breakdown
        When ``Hr = 0``: the normal equation already holds at the current x.
    """
    r = np.asarray(r, dtype=np.float64)
    hr = H.apply(r)
    phi2 = float(hr @ hr)
    if phi2 == 0.0:
        raise Breakdown("annihilated", "Hr = 0: A^T r = 0")
    alpha = float(r @ hr) / phi2
    return r - alpha * hr, alpha


def f1_fold(H, r, j_max):
    """Composed ``F_1`` sequence ``[(F_1^j(r), q_j, alpha_j)]`` for ``j = 0..j_max``.

    ``q_j = F_1^j(r)^T H F_1^j(r)``; ``alpha_j`` is the coefficient used to
    go from step ``j`` to ``j+1`` (``None`` on the last entry).  Stops early
    at a breakdown and returns the prefix.
    """
    if j_max > MAX_T:
        raise ValueError(f"j_max must be <= {MAX_T}")
    out = []
    f = np.array(r, dtype=np.float64)
    for j in range(j_max + 1):
        hf = H.apply(f)
        q = float(f @ hf)
        phi2 = float(hf @ hf)
        if j == j_max or phi2 == 0.0:
            out.append((f, q, None))
            break
        alpha = q / phi2
        out.append((f, q, alpha))
        f = f - alpha * hf
    return out


def _fold_from_cache(cache, H, depth):
    """F_1 fold of ``cache.r`` as polynomials in ``H``, using stored columns.

    Yields ``(j, q_j, f_j, alpha_j, coeffs_j)`` for ``j = 0..depth`` where
    ``f_j = sum coeffs_j[i] H^i r`` and ``q_j = f_j^T H f_j``.  Needs
    columns up to ``H^{depth+1} r``; no operator applications are made.
    """
    coeffs = np.array([1.0])
    for j in range(depth + 1):
        f = cache.combination(coeffs, 0)
        hf = cache.combination(coeffs, 1)
        q = float(f @ hf)
        phi2 = float(hf @ hf)
        alpha = q / phi2 if phi2 > 0.0 else None
        yield j, q, f, alpha, coeffs
        if alpha is None:
            return
        nxt = np.zeros(len(coeffs) + 1)
        nxt[:-1] += coeffs
        nxt[1:] -= alpha * coeffs
        coeffs = nxt


def ft_apply(cache, t, H=None, shift=0):
    """Apply ``F_t`` at ``cache.r``.

    Returns ``(F_t(r), alpha, dx)`` where ``dx`` is the solution increment
    (``sum alpha_i H^{i-1} r``, or ``A^T`` of it in Gram mode; taken from the
    cached half products when available).  With ``H`` given the cache is
    extended as needed.  ``shift=1`` uses the normal-equation coefficients.
    """
    need = t + shift
    if H is not None:
        cache = cache.extend_to_power(H, need)
    if cache.power < need:
        raise ValueError(f"cache must hold H^{need} r")
    aux = solve_aux_min_norm(cache, t, shift=shift)
    alpha = aux.alpha
    F = cache.r - cache.combination(alpha, 1)
    if len(cache.halves) >= t:
        dx = cache.combination(alpha, 0, halves=True)
    else:
        dx = cache.combination(alpha, 0)
    return F, alpha, dx


# ---------------------------------------------------------------------------
# tolerances


@dataclass(frozen=True)
class _Tol:
    res: float
    quad: float
    normal: float
    hnorm: float
    setup_matvecs: int


def _tolerances(A, H, b, opts, need_normal=False):
    nb = float(np.linalg.norm(b))
    hnorm = 0.0
    setup = 0
    if opts.tol_mode == "relative":
        hnorm = estimate_norm(H)
        setup = 20 * H.matvecs_per_apply
        res = opts.eps * nb
        quad = opts.grad_eps * nb * nb * hnorm
        normal = opts.eps * float(np.linalg.norm(transpose_matvec(A, b))) if need_normal else 0.0
    else:
        res, quad, normal = opts.eps, opts.grad_eps, opts.eps
    return _Tol(res, quad, normal, hnorm, setup)


def _initial_x(A, x0, w0):
    if x0 is not None and w0 is not None:
        raise ValueError("give x0 or w0, not both")
    if w0 is not None:
        return transpose_matvec(A, np.asarray(w0, dtype=np.float64)), 1
    if x0 is None:
        return np.zeros(A.ncols), 0
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (A.ncols,):
        raise ValueError(f"x0 must have length {A.ncols}")
    return x0.copy(), 0


# ---------------------------------------------------------------------------
# Algorithm: iteration of F_1


def f1_iterate(A, b, opts=None, x0=None, w0=None):
    """Iterate ``F_1`` until ``||r|| <= eps`` or ``r^T H r <= eps_grad``.

    ``x`` moves by ``alpha_11 r`` (PSD mode) or ``alpha_11 A^T r`` (Gram
    mode).  The report's ``exit`` event names the guard that fired.
    """
    opts = opts or CtaOptions()
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b):
        raise ValueError("b must be nonzero")
    H = operator_for(A, opts.mode)
    tol = _tolerances(A, H, b, opts)
    x, mv = _initial_x(A, x0, w0)
    r = b - matvec(A, x) if np.any(x) else b.copy()
    mv += int(np.any(x))
    report = SolveReport("cta-f1", Verdict.NC, 0, 0)
    report.history.append((0, float(np.linalg.norm(r))))
    k = 0
    clause = None
    while k < opts.max_iter:
        if np.linalg.norm(r) <= tol.res:
            clause = "residual"
            break
        half, hr = H.apply_split(r)
        mv += H.matvecs_per_apply
        phi1 = float(r @ hr)
        if tol.quad > 0 and phi1 <= tol.quad:
            clause = "quadratic"
            break
        phi2 = float(hr @ hr)
        if phi2 == 0.0:
            clause = "breakdown"
            break
        a = phi1 / phi2
        x += a * half
        r -= a * hr
        k += 1
        if opts.recompute_every and k % opts.recompute_every == 0:
            r = b - matvec(A, x)
            mv += 1
        if k % opts.history_stride == 0:
            report.history.append((k, float(np.linalg.norm(r))))
    _close(report, A, b, x, k, mv, clause, tol, H, t0)
    return report


def _bound_class(clause, H):
    if clause == "residual":
        return "eps"
    return "sqrt(eps)" if H.mode is Mode.GRAM else "sqrt(eps*||A||)"


def _close(report, A, b, x, k, mv, clause, tol, H, t0, **extra):
    if clause is None:
        report.verdict = Verdict.NC
    elif clause == "residual":
        report.verdict = Verdict.SYSTEM
    else:
        report.verdict = Verdict.NORMAL
    report.iterations = k
    report.matvecs = mv
    report.events.append({"kind": "exit", "clause": clause or "max_iter", "iteration": k,
                          "bound_class": _bound_class(clause, H) if clause else None, **extra})
    report.info.update(mode=H.mode.value, res_tol=tol.res, quad_tol=tol.quad,
                       h_norm_est=tol.hnorm, setup_matvecs=tol.setup_matvecs)
    report.seconds = time.perf_counter() - t0
    finalize(report, A, b, x)
    if report.verdict is Verdict.NORMAL and report.residual <= tol.res:
        # the normal clause fired on an iterate that also solves the system
        report.verdict = Verdict.SYSTEM
        report.delta_star = None
    if report.history and report.history[-1][0] != k:
        report.history.append((k, report.history[-1][1] if clause is None else report.residual))
    return report


# ---------------------------------------------------------------------------
# Algorithm: iteration of F_t


def _ft_core(A, b, H, opts, tol, x, mv, report, k0=0, stagnation=False, guards=True):
    """Shared loop for ``ft_iterate`` and ``hybrid_solve``.

    Returns ``(x, k, mv, clause, extra)``; ``clause`` is ``None`` at
    ``max_iter``, ``'stagnation'`` when the hybrid rule fires and
    ``'overflow'`` on a non-finite Krylov column.  ``guards=False`` drops the
    quadratic-form exits.
    """
    r = b - matvec(A, x) if np.any(x) else b.copy()
    mv += int(np.any(x))
    norms = [float(np.linalg.norm(r))]
    if not report.history:
        report.history.append((k0, norms[0]))
    k = k0
    clause = None
    extra = {}
    while k < opts.max_iter:
        rn = norms[-1]
        if rn <= tol.res:
            clause = "residual"
            break
        if stagnation and len(norms) > opts.window and rn / norms[-1 - opts.window] > opts.eta:
            clause = "stagnation"
            break
        t = opts.order(k - k0)
        try:
            cache = KrylovCache.start(r).extend_to_power(H, t)
        except CacheOverflow as exc:
            clause, extra = "overflow", {"power": exc.power}
            break
        mv += t * H.matvecs_per_apply
        fired = None
        if guards and tol.quad > 0:
            if cache.phi(1) <= tol.quad:
                clause = "quadratic"
                break
            for j, q, f, a, coeffs in _fold_from_cache(cache, H, t - 1):
                if j >= 1 and q <= tol.quad:
                    fired = j
                    break
                if a is None:
                    break
        if fired is not None:
            x = _fold_solution(cache, H, x, fired)
            clause, extra = "fold", {"j": fired}
            break
        try:
            F, alpha, dx = ft_apply(cache, t)
        except Breakdown as exc:
            clause, extra = "breakdown", {"reason": exc.reason}
            break
        Fn = float(np.linalg.norm(F))
        if not Fn <= rn:
            # round-off broke monotonicity; F_1 is always safe
            F, alpha, dx = ft_apply(cache, 1)
            Fn = float(np.linalg.norm(F))
            report.events.append({"kind": "fallback_f1", "iteration": k, "t": t})
        x = x + dx
        r = F
        k += 1
        if opts.recompute_every and k % opts.recompute_every == 0:
            r = b - matvec(A, x)
            mv += 1
            Fn = float(np.linalg.norm(r))
        norms.append(Fn)
        if k % opts.history_stride == 0:
            report.history.append((k, Fn))
    return x, k, mv, clause, extra


def _fold_solution(cache, H, x, j):
    """Augmented solution after a fold exit at ``j``.

    ``x + sum_{i<j} alpha_11(F_1^i r) * F_1^i r`` (``A^T`` of each term in
    Gram mode), assembled from cached columns and half products.
    """
    for i, q, f, a, coeffs in _fold_from_cache(cache, H, j):
        if i == j:
            break
        if H.mode is Mode.GRAM:
            x = x + a * cache.combination(coeffs, 0, halves=True)
        else:
            x = x + a * f
    return x


def _scaled_problem(A, b, x, H):
    """Rescaled system used after an overflow: ``(A2, b2, y, back)``."""
    if H.mode is Mode.PSD and np.all(A.diagonal() > 0):
        A2, d = jacobi_scale(A)
        s = np.sqrt(d)
        return A2, b / s, x * s, lambda y: y / s, "jacobi"
    nrm = math.sqrt(estimate_norm(OperatorH(A, Mode.GRAM)))
    A2 = SparseMatrix(A.nrows, A.ncols, A.indptr, A.indices, A.data / nrm, A.symmetric)
    return A2, b, x * nrm, lambda y: y / nrm, "scalar"


def ft_iterate(A, b, opts=None, x0=None, w0=None):
    """Iterate ``F_t`` (fixed ``t`` or the cycle schedule).

    The loop continues while ``||r|| > eps``, ``r^T H r > eps_grad`` and
    ``F_1^j(r)^T H F_1^j(r) > eps_grad`` for ``j = 1..t-1``.  A fold exit
    returns the augmented solution built from the same fold.  A
    non-finite Krylov column triggers one retry on a rescaled system.
    """
    opts = opts or CtaOptions()
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b):
        raise ValueError("b must be nonzero")
    H = operator_for(A, opts.mode)
    x, mv = _initial_x(A, x0, w0)
    report = SolveReport(_solver_name(opts), Verdict.NC, 0, 0)
    if opts.precond == "jacobi":
        return _ft_scaled(A, b, H, opts, x, mv, report, t0)
    tol = _tolerances(A, H, b, opts)
    x, k, mv, clause, extra = _ft_core(A, b, H, opts, tol, x, mv, report)
    if clause == "overflow":
        report.events.append({"kind": "overflow", "iteration": k, **extra})
        A2, b2, y, back, how = _scaled_problem(A, b, x, H)
        H2 = OperatorH(A2, H.mode)
        tol2 = _tolerances(A2, H2, b2, opts)
        report.events.append({"kind": "rescale", "how": how, "iteration": k})
        y, k, mv, clause, extra = _ft_core(A2, b2, H2, opts, tol2, y, mv, report, k0=k)
        x = back(y)
    _close(report, A, b, x, k, mv, None if clause == "overflow" else clause, tol, H, t0, **extra)
    if clause == "overflow":
        report.verdict = Verdict.ERROR
        report.events.append({"kind": "overflow", "iteration": k, **extra})
    return report


def _ft_scaled(A, b, H, opts, x, mv, report, t0):
    if H.mode is not Mode.PSD:
        raise ValueError("jacobi scaling for CTA needs psd mode")
    A2, d = jacobi_scale(A)
    s = np.sqrt(d)
    H2 = OperatorH(A2, Mode.PSD)
    tol2 = _tolerances(A2, H2, b / s, opts)
    y, k, mv, clause, extra = _ft_core(A2, b / s, H2, opts, tol2, x * s, mv, report)
    report.info["precond"] = "jacobi"
    return _close(report, A, b, y / s, k, mv, None if clause == "overflow" else clause,
                  tol2, H, t0, **extra)


def _solver_name(opts):
    if opts.schedule == "cycle":
        return f"cta-cycle{opts.t_max}"
    return f"cta-t{opts.t}"


# ---------------------------------------------------------------------------
# Algorithm: point-wise orbit


def pointwise_orbit(A, b, x0=None, eps=1e-10, t_cap=None, mode="auto", tol_mode="relative"):
    """Evaluate ``F_1(r0), F_2(r0), ...`` on one growing Krylov cache.

    Stops at the first ``t`` with ``||F_t(r0)|| <= eps`` (system solved) or
    ``||A^T F_t(r0)|| <= eps`` (normal equation solved); relative mode
    scales by ``||r0||`` and ``||A|| ||r0||``.  For well separated spectra
    the stopping ``t`` is the degree of the minimal polynomial of ``r0``
    restricted to the positive eigenvalues of ``H``.
    """
    b = np.asarray(b, dtype=np.float64)
    H = operator_for(A, mode)
    x0, mv = _initial_x(A, x0, None)
    r0 = b - matvec(A, x0)
    mv += 1
    nr0 = float(np.linalg.norm(r0))
    if nr0 == 0.0:
        raise ValueError("r0 = b - A x0 must be nonzero")
    cap = min(H.dim, MAX_T) if t_cap is None else t_cap
    if cap > min(H.dim, MAX_T):
        raise ValueError(f"t_cap must be <= {min(H.dim, MAX_T)}")
    if tol_mode == "relative":
        hn = estimate_norm(H)
        anorm = math.sqrt(hn) if H.mode is Mode.GRAM else hn
        res_tol, nrm_tol = eps * nr0, eps * anorm * nr0
    else:
        res_tol = nrm_tol = eps
    cache = KrylovCache.start(r0)
    res, nres = [], []
    verdict, degree, alpha, x = "Exhausted", None, None, x0
    diag = ""
    for t in range(1, cap + 1):
        try:
            cache = cache.extend_to_power(H, t + 1)
        except CacheOverflow as exc:
            diag = f"{exc}; try Jacobi scaling"
            break
        try:
            F, a, dx = ft_apply(cache, t)
        except Breakdown as exc:
            diag = str(exc)
            break
        # A^T F without new products: A^T r0 - sum a_i A^T H^i r0
        if H.mode is Mode.GRAM:
            atf = cache.halves[0] - cache.combination(a, 1, halves=True)
        else:
            atf = cache.columns[1] - cache.combination(a, 2)
        res.append(float(np.linalg.norm(F)))
        nres.append(float(np.linalg.norm(atf)))
        x, alpha = x0 + dx, a
        if res[-1] <= res_tol:
            verdict, degree = "SystemSolved", t
            break
        if nres[-1] <= nrm_tol:
            verdict, degree = "NormalSolved", t
            break
    mv += (cache.power) * H.matvecs_per_apply
    coeffs = None
    if degree is not None:
        coeffs = minimal_poly_coefficients(alpha, normal=(verdict == "NormalSolved"))
    return OrbitResult(res, nres, degree, verdict, x, alpha, coeffs, mv, diag)


def minimal_poly_coefficients(alpha, normal=False):
    """Monic polynomial (ascending coefficients) from a terminating ``alpha``.

    ``F_s(r) = p(H) r`` with ``p(z) = 1 - sum alpha_i z^i``; ``-p / alpha_s``
    is monic.  A normal-equation exit leaves a null-space component, which
    contributes the extra factor ``z``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    s = len(alpha)
    if alpha[-1] == 0.0:
        raise Breakdown("degenerate", "leading coefficient vanished")
    coeffs = np.empty(s + 1)
    coeffs[0] = -1.0 / alpha[-1]
    coeffs[1:s] = alpha[:-1] / alpha[-1]
    coeffs[s] = 1.0
    if normal:
        coeffs = np.concatenate([[0.0], coeffs])
    return coeffs


def minimal_poly_factor(H, seed=0, r0=None, eps=1e-10, t_cap=None, tol=1e-8):
    """Monic factor of the minimal polynomial of ``H`` from an orbit.

    ``H`` is a symmetric PSD :class:`SparseMatrix`.  The orbit runs on
    ``H x = b`` from ``x0 = 0`` so ``r0 = b``; without ``r0`` the right-hand
    side is ``H z`` for a seeded random ``z``, which lies in the range of
    ``H`` even when ``H`` is singular.

    Returns ``(coefficients, OrbitResult)``.
    """
    if not H.symmetric:
        raise ValueError("minimal_poly_factor needs a symmetric matrix")
    if r0 is None:
        z = np.random.default_rng(seed).standard_normal(H.ncols)
        r0 = matvec(H, z)
    r0 = np.asarray(r0, dtype=np.float64)
    orbit = pointwise_orbit(H, r0, eps=eps, t_cap=t_cap, mode="psd")
    if orbit.degree is None:
        raise Breakdown("exhausted", f"orbit did not terminate {orbit.diagnostic}".strip())
    coeffs = orbit.coefficients
    # check mu(H) r0 ~ 0 by Horner's rule
    acc = coeffs[-1] * r0
    for c in coeffs[-2::-1]:
        acc = matvec(H, acc) + c * r0
    hn = estimate_norm(OperatorH(H, Mode.PSD))
    scale = np.linalg.norm(r0) * max(hn, 1.0) ** (len(coeffs) - 1)
    if np.linalg.norm(acc) > tol * scale * max(1.0, np.abs(coeffs).max()):
        raise Breakdown("inaccurate", "computed polynomial does not annihilate r0")
    return coeffs, orbit


# ---------------------------------------------------------------------------
# normal equation and the hybrid


def normal_equation_iterate(A, b, opts=None, x0=None, report=None, k0=0, t0=None):
    """``F_t`` applied to ``A^T A x = A^T b`` through the moments of ``A A^T``.

    Coefficients solve the shifted auxiliary system (``phi_{i+j+1}``,
    ``phi_{i+1}`` in 1-based indices); ``r -= sum a_i H^i r`` and
    ``x += A^T sum a_i H^{i-1} r``.  Stops when ``||A^T r|| <= eps``
    (relative to ``||A^T b||`` in relative mode).
    """
    opts = opts or CtaOptions()
    t0 = time.perf_counter() if t0 is None else t0
    b = np.asarray(b, dtype=np.float64)
    H = OperatorH(A, Mode.GRAM)
    tol = _tolerances(A, H, b, opts, need_normal=True)
    x, mv = _initial_x(A, x0, None)
    if report is None:
        report = SolveReport("cta-normal", Verdict.NC, 0, 0)
    else:
        mv = report.matvecs
    r = b - matvec(A, x)
    mv += 1
    k = k0
    clause = None
    if not report.history or report.history[-1][0] != k:
        report.history.append((k, float(np.linalg.norm(r))))
    while k < opts.max_iter:
        t = opts.order(k - k0)
        try:
            cache = KrylovCache.start(r).extend_to_power(H, t + 1)
        except CacheOverflow as exc:
            report.events.append({"kind": "overflow", "iteration": k, "power": exc.power})
            clause = "overflow"
            break
        mv += (t + 1) * 2
        if np.linalg.norm(cache.halves[0]) <= tol.normal:
            clause = "normal"
            break
        if np.linalg.norm(r) <= tol.res:
            clause = "residual"
            break
        try:
            F, alpha, dx = ft_apply(cache, t, shift=1)
        except Breakdown:
            clause = "normal"
            break
        x = x + dx
        r = F
        k += 1
        if opts.recompute_every and k % opts.recompute_every == 0:
            r = b - matvec(A, x)
            mv += 1
        if k % opts.history_stride == 0:
            report.history.append((k, float(np.linalg.norm(r))))
    report.iterations = k
    report.matvecs = mv
    report.events.append({"kind": "exit", "clause": clause or "max_iter", "iteration": k})
    report.info.update(normal_tol=tol.normal, res_tol=tol.res)
    report.seconds = time.perf_counter() - t0
    finalize(report, A, b, x)
    if clause == "residual" or report.residual <= tol.res:
        report.verdict = Verdict.SYSTEM
    elif clause == "normal":
        report.verdict = Verdict.NORMAL
    elif clause == "overflow":
        report.verdict = Verdict.ERROR
    else:
        report.verdict = Verdict.NC
    report.delta_star = report.residual if report.verdict is Verdict.NORMAL else None
    return report


def hybrid_solve(A, b, opts=None, x0=None, w0=None):
    """``F_t`` on ``Ax = b``, switching to the normal equation on stagnation.

    The switch fires at iteration ``k`` iff ``||r_k|| / ||r_{k-W}|| > eta``.
    Before the switch only the residual test can stop the iteration.
    """
    opts = opts or CtaOptions(hybrid=True)
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b):
        raise ValueError("b must be nonzero")
    H = operator_for(A, opts.mode)
    tol = _tolerances(A, H, b, opts)
    x, mv = _initial_x(A, x0, w0)
    report = SolveReport("hybrid", Verdict.NC, 0, 0)
    # the normal phase handles inconsistency, so phase one has no quadratic exits
    x, k, mv, clause, extra = _ft_core(A, b, H, opts, tol, x, mv, report, stagnation=True,
                                       guards=False)
    if clause == "stagnation":
        report.events.append({"kind": "switch", "iteration": k})
        report.matvecs = mv
        return normal_equation_iterate(A, b, opts, x0=x, report=report, k0=k, t0=t0)
    return _close(report, A, b, x, k, mv, None if clause == "overflow" else clause, tol, H, t0,
                  **extra)


# ---------------------------------------------------------------------------
# spectral quantities used by the convergence bounds


def rate_factor(kappa):
    """``(kappa - 1) / (kappa + 1)``: per-order residual reduction bound."""
    return (kappa - 1.0) / (kappa + 1.0)


def centering_ratio(H, x):
    """``(x^T H x)^2 / (x^T H^2 x ||x||^2)`` for a dense symmetric ``H``."""
    hx = H @ x
    return float((x @ hx) ** 2 / ((hx @ hx) * (x @ x)))
