"""Seeded test matrices and the dense spectral oracle."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .linalg import Mode, SparseMatrix, matvec
from .mmio import read_matrix_market

ORACLE_MAX_N = 2000


@dataclass(frozen=True)
class MatrixRecipe:
    """A named matrix family with parameters; ``generate`` is deterministic in ``seed``."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    KINDS = ("diag_range", "diag_squares", "random_spd", "random_psd", "random_nonsym",
             "lotkin", "dorr", "file")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown recipe kind {self.kind!r}; choose from {', '.join(self.KINDS)}")

    @classmethod
    def parse(cls, text, seed=0):
        """Parse ``kind:key=value,key=value``."""
        kind, _, rest = text.strip().partition(":")
        params = {}
        for item in filter(None, (p.strip() for p in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"recipe parameter {item!r} is not key=value")
            params[key.strip()] = _number(value.strip())
        return cls(kind.strip(), params, seed)

    @property
    def label(self):
        args = ",".join(f"{k}={_fmt(v)}" for k, v in self.params.items())
        return f"{self.kind}:{args}" if args else self.kind

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items())), self.seed))


def _number(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _fmt(v):
    return f"{v:g}" if isinstance(v, float) else str(v)


@dataclass
class Instance:
    recipe: MatrixRecipe
    A: SparseMatrix
    x_true: Optional[np.ndarray]
    b: np.ndarray

    @property
    def n(self):
        return self.A.nrows


def _log_uniform(rng, count, kappa):
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if count == 1:
        return np.array([1.0])
    u = np.sort(rng.random(count))
    u[0], u[-1] = 0.0, 1.0
    return kappa ** u


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _sym_from_spectrum(rng, lam):
    Q = _orthogonal(rng, len(lam))
    M = (Q * lam) @ Q.T
    return 0.5 * (M + M.T)


def diag_range(m):
    return SparseMatrix.diag(np.arange(1, m + 1, dtype=np.float64))


def diag_squares(m):
    return SparseMatrix.diag(np.arange(1, m + 1, dtype=np.float64) ** 2)


def random_spd(n, kappa, rng):
    return SparseMatrix.from_dense(_sym_from_spectrum(rng, _log_uniform(rng, n, kappa)),
                                   symmetric=True)


def random_psd(n, rank, kappa, rng):
    if not 1 <= rank <= n:
        raise ValueError("rank must lie in [1, n]")
    lam = np.zeros(n)
    lam[:rank] = _log_uniform(rng, rank, kappa)
    return SparseMatrix.from_dense(_sym_from_spectrum(rng, lam), symmetric=True)


def random_nonsym(n, kappa, rng):
    U, V = _orthogonal(rng, n), _orthogonal(rng, n)
    return SparseMatrix.from_dense((U * _log_uniform(rng, n, kappa)) @ V.T)


def lotkin(n):
    """Hilbert matrix with the first row replaced by ones."""
    i = np.arange(1, n + 1)
    M = 1.0 / (i[:, None] + i[None, :] - 1.0)
    M[0, :] = 1.0
    return SparseMatrix.from_dense(M)


def dorr(n, theta=0.01):
    """Tridiagonal, row diagonally dominant M-matrix from a convection-diffusion stencil."""
    if n < 2:
        raise ValueError("dorr needs n >= 2")
    h = 1.0 / (n + 1)
    m = (n + 1) // 2
    term = theta / h ** 2
    i = np.arange(1, n + 1)
    c = np.empty(n)
    e = np.empty(n)
    first = i <= m
    c[first] = -term
    e[first] = c[first] - (0.5 - i[first] * h) / h
    e[~first] = -term
    c[~first] = e[~first] + (0.5 - i[~first] * h) / h
    d = -(c + e)
    M = sp.diags([c[1:], d, e[:-1]], [-1, 0, 1], format="csr")
    return SparseMatrix.from_scipy(M)


def generate(recipe):
    """Matrix, known solution and right-hand side ``b = A x_true``."""
    p = dict(recipe.params)
    rng = np.random.default_rng(recipe.seed)
    kind = recipe.kind
    if kind == "diag_range":
        A = diag_range(int(p["m"]))
    elif kind == "diag_squares":
        A = diag_squares(int(p["m"]))
    elif kind == "random_spd":
        A = random_spd(int(p["n"]), float(p.get("kappa", 1e4)), rng)
    elif kind == "random_psd":
        n = int(p["n"])
        A = random_psd(n, int(p.get("rank", max(1, n // 2))), float(p.get("kappa", 1e4)), rng)
    elif kind == "random_nonsym":
        A = random_nonsym(int(p["n"]), float(p.get("kappa", 1e2)), rng)
    elif kind == "lotkin":
        A = lotkin(int(p["n"]))
    elif kind == "dorr":
        A = dorr(int(p["n"]), float(p.get("theta", 0.01)))
    else:
        path = os.path.expanduser(str(p["path"]))
        A = read_matrix_market(path)
    x_true = rng.standard_normal(A.ncols)
    return Instance(recipe, A, x_true, matvec(A, x_true))


@dataclass(frozen=True)
class SpectralStats:
    """Dense eigen-information of a symmetric PSD operator ``H``."""

    kappa_plus: float
    lambda_max: float
    lambda_min_pos: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def c(self):
        return 1.0 / (self.kappa_plus * self.lambda_max)

    def rate(self):
        return (self.kappa_plus - 1.0) / (self.kappa_plus + 1.0)


def spectral_oracle(A, mode="auto", threshold=1e-10):
    """Spectrum of ``H`` (``A``, ``A A^T`` or ``A^T A``) by dense ``eigh``.

    Eigenvalues at or below ``threshold * lambda_max`` count as zero.
    """
    if isinstance(A, np.ndarray):
        A = SparseMatrix.from_dense(A, symmetric=np.array_equal(A, A.T))
    if mode == "auto":
        mode = "psd" if A.symmetric else "gram"
    mode = Mode(mode)
    size = A.ncols if mode is Mode.NORMAL else A.nrows
    if size > ORACLE_MAX_N:
        raise ValueError(f"spectral oracle is limited to n <= {ORACLE_MAX_N}")
    D = A.to_dense()
    H = D if mode is Mode.PSD else (D @ D.T if mode is Mode.GRAM else D.T @ D)
    H = 0.5 * (H + H.T)
    lam, U = np.linalg.eigh(H)
    lmax = float(lam[-1])
    if lmax <= 0:
        raise ValueError("H has no positive eigenvalue")
    pos = lam > threshold * lmax
    lmin = float(lam[pos][0])
    return SpectralStats(lmax / lmin, lmax, lmin, lam, U)


def diagonal_dominance(A):
    """Per-row ``|a_ii| - sum_{j != i} |a_ij|``."""
    D = A.to_scipy()
    diag = np.abs(D.diagonal())
    off = np.asarray(abs(D).sum(axis=1)).ravel() - diag
    return diag - off
