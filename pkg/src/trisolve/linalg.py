"""Sparse operators, Krylov moment caches and the small auxiliary solve.

Everything the solvers touch numerically goes through this module: the CSR
matrix type, the implicit operator ``H`` (``A``, ``A A^T`` or ``A^T A``),
the cache of Krylov columns ``r, Hr, H^2 r, ...`` with their moments
``phi_j = r^T H^j r``, and the minimum-norm solve of the Hankel system built
from those moments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

EPS = np.finfo(np.float64).eps

# Symmetry is verified entrywise on construction up to this many stored entries.
SYMMETRY_CHECK_NNZ = 2_000_000


class DimensionError(ValueError):
    """Operand shapes do not match."""


class Breakdown(ArithmeticError):
    """An iteration cannot proceed; ``reason`` names the cause."""

    def __init__(self, reason, msg=None):
        super().__init__(msg or reason)
        self.reason = reason


class CacheOverflow(Breakdown):
    """A Krylov column became non-finite."""

    def __init__(self, power):
        super().__init__("overflow", f"non-finite Krylov column H^{power} r; rescale H")
        self.power = power


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real matrix in CSR form.

    Parameters
    ----------
    nrows, ncols : int
    indptr, indices, data : ndarray
        Standard CSR arrays; column indices must be strictly increasing
        inside each row.
    symmetric : bool
        Declares ``A == A^T``.  Verified on construction unless the matrix
        is very large (see :meth:`check_symmetric`).
    """

    nrows: int
    ncols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetric: bool = False
    _csr: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        indptr = np.array(self.indptr, dtype=np.int64)
        indices = np.array(self.indices, dtype=np.int64)
        data = np.array(self.data, dtype=np.float64)
        nrows, ncols = int(self.nrows), int(self.ncols)
        if nrows < 0 or ncols < 0:
            raise ValueError("negative dimension")
        if indptr.shape != (nrows + 1,):
            raise ValueError("row offsets must have length nrows + 1")
        if indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            raise ValueError("row offsets must start at 0 and be nondecreasing")
        if indptr[-1] != len(indices) or len(indices) != len(data):
            raise ValueError("final row offset must equal the number of stored entries")
        if len(indices) and (indices.min() < 0 or indices.max() >= ncols):
            raise ValueError("column index out of range")
        if len(indices) > 1:
            same_row = np.ones(len(indices) - 1, dtype=bool)
            starts = indptr[1:-1]
            starts = starts[(starts > 0) & (starts < len(indices))]
            same_row[starts - 1] = False
            if np.any(np.diff(indices)[same_row] <= 0):
                raise ValueError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(data)):
            raise ValueError("stored values must be finite")
        for name, value in (("indptr", indptr), ("indices", indices), ("data", data)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "nrows", nrows)
        object.__setattr__(self, "ncols", ncols)
        object.__setattr__(self, "symmetric", bool(self.symmetric))
        csr = sp.csr_matrix((data, indices, indptr), shape=(nrows, ncols))
        object.__setattr__(self, "_csr", csr)
        if self.symmetric:
            if nrows != ncols:
                raise ValueError("symmetric flag requires a square matrix")
            if len(data) <= SYMMETRY_CHECK_NNZ and not self.check_symmetric():
                raise ValueError("matrix flagged symmetric is not symmetric")

    @classmethod
    def from_scipy(cls, mat, symmetric=False):
        csr = sp.csr_matrix(mat, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data, symmetric)

    @classmethod
    def from_dense(cls, array, symmetric=False):
        array = np.atleast_2d(np.asarray(array, dtype=np.float64))
        return cls.from_scipy(sp.csr_matrix(array), symmetric)

    @classmethod
    def from_coo(cls, rows, cols, values, shape, symmetric=False):
        coo = sp.coo_matrix((values, (rows, cols)), shape=shape)
        return cls.from_scipy(coo.tocsr(), symmetric)

    @classmethod
    def identity(cls, n):
        return cls.from_scipy(sp.identity(n, format="csr"), symmetric=True)

    @classmethod
    def diag(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls.from_scipy(sp.diags(values, format="csr"), symmetric=True)

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self):
        return len(self.data)

    def to_scipy(self):
        return self._csr.copy()

    def to_dense(self):
        return self._csr.toarray()

    def diagonal(self):
        return self._csr.diagonal()

    def transpose(self):
        return SparseMatrix.from_scipy(self._csr.T.tocsr(), self.symmetric)

    def with_symmetric(self, flag=True):
        return SparseMatrix(self.nrows, self.ncols, self.indptr, self.indices, self.data, flag)

    def check_symmetric(self, rtol=0.0):
        """Entrywise test of ``A == A^T`` (exact unless ``rtol`` > 0)."""
        if self.nrows != self.ncols:
            return False
        diff = (self._csr - self._csr.T).tocsr()
        diff.eliminate_zeros()
        if diff.nnz == 0:
            return True
        scale = np.abs(self.data).max()
        return bool(np.abs(diff.data).max() <= rtol * scale)

    def frobenius_norm(self):
        return float(np.sqrt(self.data @ self.data))

    def __repr__(self):
        sym = ", symmetric" if self.symmetric else ""
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz}{sym})"


def _vector(v, n, what):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise DimensionError(f"{what}: expected a vector of length {n}, got shape {v.shape}")
    return v


def matvec(A, v):
    """``A v``; each row is reduced sequentially in index order."""
    return A._csr @ _vector(v, A.ncols, "matvec")


def transpose_matvec(A, v):
    """``A^T v`` without forming ``A^T``."""
    return A._csr.T @ _vector(v, A.nrows, "transpose_matvec")


class Mode(str, enum.Enum):
    PSD = "psd"          # H = A, A symmetric PSD
    GRAM = "gram"        # H = A A^T
    NORMAL = "normal"    # H = A^T A


@dataclass(frozen=True)
class OperatorH:
    """The implicit symmetric PSD operator ``H`` built from ``A``.

    ``GRAM`` applies ``A (A^T v)`` and ``NORMAL`` applies ``A^T (A v)``;
    neither product is ever formed.
    """

    A: SparseMatrix
    mode: Mode = Mode.GRAM

    def __post_init__(self):
        mode = Mode(self.mode)
        object.__setattr__(self, "mode", mode)
        if mode is Mode.PSD and not self.A.symmetric:
            raise ValueError("psd mode requires a matrix flagged symmetric")

    @property
    def dim(self):
        return self.A.ncols if self.mode is Mode.NORMAL else self.A.nrows

    @property
    def matvecs_per_apply(self):
        return 1 if self.mode is Mode.PSD else 2

    def apply(self, v):
        return self.apply_split(v)[1]

    def apply_split(self, v):
        """Return ``(half, Hv)``.

        ``half`` is the intermediate product: ``A^T v`` in GRAM mode,
        ``A v`` in NORMAL mode and ``v`` itself in PSD mode.  In GRAM mode
        it is exactly the vector a solution update needs.
        """
        v = _vector(v, self.dim, "apply_H")
        csr = self.A._csr
        if self.mode is Mode.PSD:
            return v, csr @ v
        if self.mode is Mode.GRAM:
            half = csr.T @ v
            return half, csr @ half
        half = csr @ v
        return half, csr.T @ half

    def to_solution_space(self, v):
        """Map a residual-space vector to solution space (``A^T v`` in GRAM mode)."""
        if self.mode is Mode.GRAM:
            return transpose_matvec(self.A, v)
        return np.array(v, dtype=np.float64)


def apply_H(H, v):
    return H.apply(v)


def estimate_norm(H, steps=20, seed=0):
    """Power-iteration estimate of ``||H||_2`` for a symmetric PSD operator."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(H.dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(steps):
        w = H.apply(v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def estimate_matrix_norm(A, steps=20, seed=0):
    """``||A||_2`` estimated as the square root of ``||A A^T||``."""
    return float(np.sqrt(estimate_norm(OperatorH(A, Mode.GRAM), steps, seed)))


@dataclass(frozen=True)
class KrylovCache:
    """Columns ``H^j r`` and moments ``phi_j = r^T H^j r``.

    ``halves[j]`` is the intermediate product formed while computing
    ``H^{j+1} r`` (``A^T H^j r`` in GRAM mode), so solution updates cost no
    extra matrix-vector products.  Moments use the balanced inner product
    ``(H^a r)^T (H^b r)`` with ``a + b = j`` and ``|a - b| <= 1``, which is
    the most accurate of the mathematically equal choices and means columns
    up to ``H^p r`` already give every moment up to ``phi_{2p}``.
    """

    columns: tuple
    halves: tuple = ()
    moments: tuple = ()

    @classmethod
    def start(cls, r):
        r = np.array(r, dtype=np.float64)
        if not np.all(np.isfinite(r)):
            raise CacheOverflow(0)
        r.setflags(write=False)
        return cls(columns=(r,), halves=(), moments=(float(r @ r),))

    @property
    def r(self):
        return self.columns[0]

    @property
    def t(self):
        """Order in the ``[r, Hr, ..., H^{2t} r]`` sense."""
        return (len(self.columns) - 1) // 2

    @property
    def power(self):
        return len(self.columns) - 1

    def phi(self, j):
        return self.moments[j]

    def raw_moment(self, j):
        """``dot(r, H^j r)``; cross-check for the balanced moment."""
        return float(self.r @ self.columns[j])

    def extend(self, H, target_t):
        """Grow to order ``target_t`` using exactly ``2 (target_t - t)`` applications."""
        if target_t < self.t:
            raise ValueError("cannot shrink a Krylov cache")
        return self.extend_to_power(H, 2 * target_t)

    def extend_to_power(self, H, power):
        """Grow until ``H^power r`` is stored; one application per new column."""
        if power <= self.power:
            return self
        columns = list(self.columns)
        halves = list(self.halves)
        while len(columns) <= power:
            half, col = H.apply_split(columns[-1])
            if not (np.all(np.isfinite(col)) and np.all(np.isfinite(half))):
                raise CacheOverflow(len(columns))
            col.setflags(write=False)
            half.setflags(write=False)
            halves.append(half)
            columns.append(col)
        moments = list(self.moments)
        for j in range(len(moments), 2 * power + 1):
            a = j // 2
            moments.append(float(columns[a] @ columns[j - a]))
        if not np.all(np.isfinite(moments)):
            raise CacheOverflow(power)
        return KrylovCache(tuple(columns), tuple(halves), tuple(moments))

    def combination(self, coeffs, start=0, halves=False):
        """``sum_i coeffs[i] * H^(start+i) r`` (or the same sum over ``halves``)."""
        source = self.halves if halves else self.columns
        out = np.zeros_like(source[start])
        for i, c in enumerate(coeffs):
            out += c * source[start + i]
        return out


def extend_cache(cache, H, target_t):
    return cache.extend(H, target_t)


@dataclass(frozen=True)
class SmallSymmetricSystem:
    """Auxiliary system ``M alpha = beta`` with its minimum-norm solution."""

    M: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    rank: int
    min_eig: float

    @property
    def t(self):
        return len(self.beta)

    def residual(self):
        return float(np.linalg.norm(self.M @ self.alpha - self.beta))


def solve_aux_min_norm(cache, t, shift=0, tol_psd=1e-8):
    """Minimum-norm solution of the ``t x t`` auxiliary system.

    With ``shift=0`` the system is ``M[i, j] = phi_{i+j+2}``,
    ``beta[i] = phi_{i+1}`` (0-based); its solutions minimise
    ``||r - sum_i alpha_i H^i r||``.  ``shift=1`` gives ``phi_{i+j+3}`` and
    ``phi_{i+2}``, minimising ``||A^T (r - sum_i alpha_i H^i r)||`` for the
    normal equation (GRAM caches only).

    ``M`` is the Gram matrix of the basis ``H r, ..., H^t r`` (of
    ``A^T H r, ...`` when shifted).  When the cache stores that basis the
    system is solved as the equivalent least-squares problem on the
    column-scaled basis, which squares the attainable accuracy relative to
    factoring ``M``.  Otherwise ``M`` itself is scaled to unit diagonal and
    eigendecomposed.  Either way singular values below ``t * eps`` times the
    largest are dropped and the null-space component is projected out, so
    ``alpha`` is the minimum-norm solution.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    top = 2 * t + shift
    if len(cache.moments) <= top:
        raise ValueError(f"cache holds moments up to phi_{len(cache.moments) - 1}, need phi_{top}")
    phi = np.asarray(cache.moments[: top + 1])
    idx = np.arange(t)
    M = phi[idx[:, None] + idx[None, :] + 2 + shift]
    beta = phi[idx + 1 + shift].copy()
    diag = np.diag(M).copy()
    if not diag[0] > 0.0:
        raise Breakdown("annihilated", "H-annihilated residual: the auxiliary matrix is zero")
    d = np.zeros(t)
    pos = diag > 0.0
    d[pos] = 1.0 / np.sqrt(diag[pos])
    S = d[:, None] * M * d[None, :]
    vals = np.linalg.eigvalsh(S)
    if vals[0] < -tol_psd * np.linalg.norm(S):
        raise ValueError(f"auxiliary matrix is not PSD (min eigenvalue {vals[0]:.3e}); H is not PSD")

    basis = cache.halves if shift else cache.columns
    if len(basis) >= t + 1:
        target = basis[0]
        K = np.column_stack(basis[1: t + 1]) * d[None, :]
        U, sv, Vt = np.linalg.svd(K, full_matrices=False)
        keep = sv > t * EPS * sv[0]
        z = Vt[keep].T @ ((U[:, keep].T @ target) / sv[keep])
        null = Vt[~keep].T
    else:
        ev, vecs = np.linalg.eigh(S)
        keep = ev > t * EPS * ev[-1]
        z = vecs[:, keep] @ ((vecs[:, keep].T @ (d * beta)) / ev[keep])
        null = vecs[:, ~keep]
    rank = int(keep.sum())
    alpha = d * z
    if rank < t:
        # remove the component along the null space: minimum norm in alpha
        N = d[:, None] * null
        alpha = alpha - N @ np.linalg.lstsq(N, alpha, rcond=None)[0]
    return SmallSymmetricSystem(M=M, beta=beta, alpha=alpha, rank=rank, min_eig=float(vals[0]))


def jacobi_scale(A):
    """Return ``(D^{-1/2} A D^{-1/2}, d)`` with ``d`` the diagonal of ``A``."""
    if A.nrows != A.ncols:
        raise DimensionError("jacobi_scale requires a square matrix")
    d = A.diagonal()
    if np.any(d <= 0.0):
        raise ValueError("jacobi_scale requires a strictly positive diagonal")
    s = 1.0 / np.sqrt(d)
    csr = A.to_scipy()
    rows = np.repeat(np.arange(A.nrows), np.diff(csr.indptr))
    # s_i * s_j is commutative, so symmetry survives bit for bit
    data = csr.data * (s[rows] * s[csr.indices])
    data[rows == csr.indices] = 1.0
    scaled = SparseMatrix(A.nrows, A.ncols, csr.indptr, csr.indices, data, A.symmetric)
    return scaled, d
