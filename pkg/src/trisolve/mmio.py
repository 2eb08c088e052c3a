"""Matrix Market and plain-text vector I/O."""

from __future__ import annotations

import os

import numpy as np
import scipy.io
import scipy.sparse as sp

from .linalg import SparseMatrix


class MatrixMarketError(ValueError):
    """A Matrix Market file could not be read as a real matrix."""


def _info(path):
    try:
        return scipy.io.mminfo(path)
    except Exception as exc:  # scipy raises bare ValueError/OSError variants
        raise MatrixMarketError(f"{path}: malformed Matrix Market header ({exc})") from exc


def read_matrix_market(path):
    """Read a real coordinate or array ``.mtx`` file.

    Symmetric storage is expanded to full CSR and the symmetry flag is set.
    """
    path = os.fspath(path)
    rows, cols, entries, fmt, field, symmetry = _info(path)
    if field not in ("real", "double"):
        raise MatrixMarketError(f"{path}: unsupported field '{field}' (only real is accepted)")
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"{path}: unsupported symmetry '{symmetry}'")
    try:
        mat = scipy.io.mmread(path)
    except Exception as exc:
        raise MatrixMarketError(f"{path}: {exc}") from exc
    mat = sp.csr_matrix(mat, dtype=np.float64)
    if mat.shape != (rows, cols):
        raise MatrixMarketError(f"{path}: size line says {rows}x{cols}, data gives {mat.shape}")
    # an explicit symmetric header is trusted for very large files
    return SparseMatrix.from_scipy(mat, symmetric=(symmetry == "symmetric"))


def write_matrix_market(A, path, symmetric=None):
    """Write ``A`` in coordinate format with 17 significant digits."""
    symmetric = A.symmetric if symmetric is None else symmetric
    coo = sp.coo_matrix(A.to_scipy())
    scipy.io.mmwrite(os.fspath(path), coo, field="real", precision=17,
                     symmetry="symmetric" if symmetric else "general")


def read_vector(path):
    """Read a dense vector: an ``.mtx`` array file or one value per line."""
    path = os.fspath(path)
    with open(path) as fh:
        head = fh.readline()
    if head.startswith("%%MatrixMarket"):
        mat = scipy.io.mmread(path)
        arr = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        if arr.ndim == 2 and 1 not in arr.shape:
            raise MatrixMarketError(f"{path}: expected a single column, got {arr.shape}")
        return np.asarray(arr, dtype=np.float64).ravel()
    values = np.loadtxt(path, dtype=np.float64, ndmin=1, comments="%")
    if values.ndim != 1:
        raise ValueError(f"{path}: expected one value per line")
    return values


def write_vector(x, path):
    """Write one value per line with 17 significant digits."""
    np.savetxt(os.fspath(path), np.asarray(x, dtype=np.float64), fmt="%.17g")
