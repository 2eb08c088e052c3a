"""Independent dense oracles shared by the test modules."""

import numpy as np
import pytest

from trisolve.linalg import SparseMatrix


def svd_pinv_solve(D, b, rcond=1e-12):
    """Minimum-norm least-squares solution through an explicit SVD."""
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    keep = s > rcond * s[0]
    return Vt[keep].T @ ((U[:, keep].T @ b) / s[keep])


def lstsq_solve(D, b):
    return np.linalg.lstsq(D, b, rcond=None)[0]


def row_space_residual(D, x):
    """Distance from ``x`` to range(D^T)."""
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    V = Vt[s > 1e-12 * s[0]].T
    return float(np.linalg.norm(x - V @ (V.T @ x)))


def spd_with_spectrum(lam, rng):
    q, r = np.linalg.qr(rng.standard_normal((len(lam), len(lam))))
    q = q * np.sign(np.diag(r))
    M = (q * lam) @ q.T
    return 0.5 * (M + M.T), q


def sparse(D, symmetric=None):
    if symmetric is None:
        symmetric = D.shape[0] == D.shape[1] and np.array_equal(D, D.T)
    return SparseMatrix.from_dense(D, symmetric=symmetric)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion

_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _criteria[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        number = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        verdict = "PASS" if _criteria[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {label}")
