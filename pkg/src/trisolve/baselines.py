"""Reference Krylov solvers and preconditioners: CG, restarted GMRES, ILU(0), Jacobi."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .linalg import SparseMatrix, matvec
from .report import SolveReport, Verdict, finalize


@dataclass
class BaselineOptions:
    method: str = "gmres"
    restart: int = 5
    eps: float = 1e-10
    max_iter: int = 10_000
    precond: str = "none"
    history_stride: int = 1

    def __post_init__(self):
        if self.method not in ("cg", "gmres"):
            raise ValueError("method must be 'cg' or 'gmres'")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.precond not in ("none", "jacobi", "ilu0"):
            raise ValueError("precond must be 'none', 'jacobi' or 'ilu0'")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


class Preconditioner:
    """Approximate inverse ``M^{-1}`` applied by :meth:`solve`."""

    name = "none"
    warning = None
    setup_seconds = 0.0

    def solve(self, v):
        return np.array(v, dtype=np.float64)


class JacobiPreconditioner(Preconditioner):
    name = "jacobi"

    def __init__(self, A):
        t0 = time.perf_counter()
        d = A.diagonal()
        if np.any(d == 0.0):
            raise ValueError("Jacobi preconditioner needs a nonzero diagonal")
        self.inv = 1.0 / d
        self.setup_seconds = time.perf_counter() - t0

    def solve(self, v):
        return self.inv * v


@dataclass
class ILU0:
    """Incomplete LU with zero fill: ``L`` unit lower, ``U`` upper, both on the pattern of ``A``."""

    L: sp.csr_matrix
    U: sp.csr_matrix
    shifted: bool = False
    shift: float = 0.0


def ilu0(A):
    """ILU(0) factors of a square matrix.

    A zero pivot triggers one restart with the diagonal shifted by
    ``1e-8 ||A||_F`` and ``shifted`` set.
    """
    if A.nrows != A.ncols:
        raise ValueError("ilu0 requires a square matrix")
    try:
        return _ilu0(A, 0.0)
    except ZeroDivisionError:
        shift = 1e-8 * A.frobenius_norm()
        return _ilu0(A, shift)


def _ilu0(A, shift):
    n = A.nrows
    csr = A.to_scipy()
    if shift:
        csr = (csr + shift * sp.identity(n, format="csr")).tocsr()
        csr.sort_indices()
    indptr, indices = csr.indptr, csr.indices
    data = csr.data.astype(np.float64).copy()
    diag_pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        row = indices[indptr[i]:indptr[i + 1]]
        hit = np.searchsorted(row, i)
        if hit < len(row) and row[hit] == i:
            diag_pos[i] = indptr[i] + hit
    if np.any(diag_pos < 0):
        raise ValueError("ilu0 requires every diagonal entry to be stored")
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        for p in range(lo, diag_pos[i]):
            k = indices[p]
            piv = data[diag_pos[k]]
            if piv == 0.0:
                raise ZeroDivisionError(k)
            data[p] /= piv
            # row k of U beyond the diagonal, restricted to the pattern of row i
            klo, khi = diag_pos[k] + 1, indptr[k + 1]
            if klo == khi:
                continue
            kcols = indices[klo:khi]
            pos = np.searchsorted(cols, kcols)
            ok = (pos < len(cols))
            ok[ok] = cols[pos[ok]] == kcols[ok]
            data[lo + pos[ok]] -= data[p] * data[klo:khi][ok]
        if data[diag_pos[i]] == 0.0:
            raise ZeroDivisionError(i)
    full = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    L = (sp.tril(full, k=-1) + sp.identity(n)).tocsr()
    U = sp.triu(full).tocsr()
    return ILU0(L, U, shifted=bool(shift), shift=shift)


class ILUPreconditioner(Preconditioner):
    name = "ilu0"

    def __init__(self, A):
        t0 = time.perf_counter()
        self.factors = ilu0(A)
        if self.factors.shifted:
            self.warning = f"zero pivot: diagonal shifted by {self.factors.shift:.3e}"
        self.setup_seconds = time.perf_counter() - t0

    def solve(self, v):
        y = spsolve_triangular(self.factors.L, v, lower=True, unit_diagonal=True)
        return spsolve_triangular(self.factors.U, y, lower=False)


def make_preconditioner(A, name):
    if name == "none":
        return Preconditioner()
    if name == "jacobi":
        return JacobiPreconditioner(A)
    if name == "ilu0":
        return ILUPreconditioner(A)
    raise ValueError(f"unknown preconditioner {name!r}")


def _prologue(A, b, opts, solver):
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b):
        raise ValueError("b must be nonzero")
    if A.nrows != A.ncols:
        raise ValueError(f"{solver} requires a square matrix")
    M = make_preconditioner(A, opts.precond)
    report = SolveReport(solver if opts.precond == "none" else f"{solver}+{opts.precond}",
                         Verdict.NC, 0, 0)
    report.info.update(precond=opts.precond, precond_seconds=M.setup_seconds)
    if M.warning:
        report.events.append({"kind": "precond_warning", "message": M.warning})
    return b, M, report


def cg_solve(A, b, opts=None, x0=None):
    """Preconditioned conjugate gradients for symmetric PSD ``A``.

    Stops on ``||b - A x|| <= eps ||b||``.  A nonpositive curvature
    ``p^T A p <= 0`` ends the run with verdict ``Error``.
    """
    opts = opts or BaselineOptions(method="cg")
    t0 = time.perf_counter()
    if not A.symmetric:
        raise ValueError("cg requires a matrix flagged symmetric")
    b, M, report = _prologue(A, b, opts, "cg")
    nb = float(np.linalg.norm(b))
    x = np.zeros(A.ncols) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - matvec(A, x)
    mv = 1
    z = M.solve(r)
    p = z.copy()
    rz = float(r @ z)
    rn = float(np.linalg.norm(r))
    report.history.append((0, rn))
    k = 0
    verdict = Verdict.NC
    while True:
        if rn <= opts.eps * nb:
            verdict = Verdict.SYSTEM
            break
        if k >= opts.max_iter:
            break
        ap = matvec(A, p)
        mv += 1
        pap = float(p @ ap)
        if pap <= 0.0:
            verdict = Verdict.ERROR
            report.events.append({"kind": "indefinite", "iteration": k, "pAp": pap})
            break
        a = rz / pap
        x += a * p
        r -= a * ap
        k += 1
        rn = float(np.linalg.norm(r))
        if k % opts.history_stride == 0:
            report.history.append((k, rn))
        z = M.solve(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    report.verdict = verdict
    report.iterations = k
    report.matvecs = mv
    report.seconds = time.perf_counter() - t0
    return finalize(report, A, b, x)


def gmres_solve(A, b, opts=None, x0=None):
    """Restarted GMRES(restart) with right preconditioning.

    Arnoldi uses modified Gram-Schmidt with one reorthogonalisation pass
    when the new vector is not orthogonal to the basis to ``1e-8``.  The
    small least-squares problem is updated with Givens rotations.  ``iterations`` counts inner steps; ``max_iter`` bounds
    them, and reaching it unconverged gives verdict ``NC``.
    """
    opts = opts or BaselineOptions()
    t0 = time.perf_counter()
    b, M, report = _prologue(A, b, opts, "gmres")
    n = A.ncols
    nb = float(np.linalg.norm(b))
    tol = opts.eps * nb
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    m = opts.restart
    k = 0
    mv = 0
    cycles = 0
    verdict = Verdict.NC
    r = b - matvec(A, x)
    mv += 1
    beta = float(np.linalg.norm(r))
    report.history.append((0, beta))
    while True:
        if beta <= tol:
            verdict = Verdict.SYSTEM
            break
        if k >= opts.max_iter:
            break
        cycles += 1
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        Hs = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        happy = False
        for j in range(m):
            if k >= opts.max_iter:
                break
            Z[j] = M.solve(V[j])
            w = matvec(A, Z[j])
            mv += 1
            wn0 = float(np.linalg.norm(w))
            for i in range(j + 1):
                Hs[i, j] = float(w @ V[i])
                w -= Hs[i, j] * V[i]
            wn = float(np.linalg.norm(w))
            if wn > 0 and np.abs(V[:j + 1] @ w).max() > 1e-8 * wn:
                for i in range(j + 1):
                    c = float(w @ V[i])
                    Hs[i, j] += c
                    w -= c * V[i]
            hn = float(np.linalg.norm(w))
            Hs[j + 1, j] = hn
            for i in range(j):
                tmp = cs[i] * Hs[i, j] + sn[i] * Hs[i + 1, j]
                Hs[i + 1, j] = -sn[i] * Hs[i, j] + cs[i] * Hs[i + 1, j]
                Hs[i, j] = tmp
            den = math.hypot(Hs[j, j], Hs[j + 1, j])
            if den == 0.0:
                j_done = j
                happy = True
                break
            cs[j] = Hs[j, j] / den
            sn[j] = Hs[j + 1, j] / den
            Hs[j, j] = den
            Hs[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k += 1
            j_done = j + 1
            res_est = abs(g[j + 1])
            if k % opts.history_stride == 0:
                report.history.append((k, res_est))
            if hn <= 1e-14 * wn0:
                happy = True
                break
            V[j + 1] = w / hn
            if res_est <= tol:
                break
        if j_done:
            y = np.linalg.solve(np.triu(Hs[:j_done, :j_done]), g[:j_done])
            x += y @ Z[:j_done]
        r = b - matvec(A, x)
        mv += 1
        beta = float(np.linalg.norm(r))
        if happy:
            report.events.append({"kind": "happy_breakdown", "iteration": k})
            if beta > tol and j_done == 0:
                break
    report.verdict = verdict
    report.iterations = k
    report.matvecs = mv
    report.info.update(restart=m, cycles=cycles)
    report.seconds = time.perf_counter() - t0
    return finalize(report, A, b, x)
