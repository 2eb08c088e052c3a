import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisolve.linalg import SparseMatrix, matvec
from trisolve.report import Verdict
from trisolve.triangle import (StepKind, TAState, pivot_step, ta_min_norm, ta_solve,
                               ta_solve_psd)

from conftest import row_space_residual, spd_with_spectrum, svd_pinv_solve


def check_witnesses(report, D, b, x_star):
    for w in report.info["witness_list"]:
        c = D.T @ (b - w.bp)
        gap = float((b - w.bp) @ b)
        # no strict pivot: rho ||c|| < (b - b')^T b, unless the segment degenerated
        assert w.degenerate or w.rho * np.linalg.norm(c) < gap
        assert w.lower_bound == pytest.approx(gap / np.linalg.norm(c), rel=1e-10)
        assert w.lower_bound < np.linalg.norm(x_star) * (1 + 1e-8)


def test_identity_converges_at_norm_of_b():
    A = SparseMatrix.identity(2)
    b = np.array([3.0, 4.0])
    rep = ta_solve(A, b, eps=1e-10)
    assert rep.verdict is Verdict.SYSTEM
    assert np.allclose(rep.x, b, atol=1e-10)
    assert rep.info["rho"] == pytest.approx(5.0)


def test_inconsistent_diagonal_gives_normal_verdict():
    A = SparseMatrix.diag([1.0, 0.0])
    b = np.array([1.0, 1.0])
    rep = ta_solve(A, b, eps=1e-6, eps_normal=1e-9)
    assert rep.verdict is Verdict.NORMAL
    assert np.allclose(rep.x, [1.0, 0.0], atol=1e-8)


def test_pivot_step_strictly_improves(rng):
    D = rng.standard_normal((6, 9))
    A = SparseMatrix.from_dense(D)
    b = D @ rng.standard_normal(9)
    state = TAState.zero(A)
    out = pivot_step(A, b, state, 1e-12, 1e-12)
    assert out.kind is StepKind.WITNESS
    state = TAState(state.x, state.bp, rho=2 * out.witness.lower_bound)
    for _ in range(20):
        before = np.linalg.norm(b - state.bp)
        out = pivot_step(A, b, state, 1e-12, 1e-12)
        if out.kind is not StepKind.IMPROVED:
            break
        state = out.state
        assert np.linalg.norm(b - state.bp) < before
        assert np.linalg.norm(state.x) <= state.rho * (1 + 1e-12)
        assert np.allclose(D @ state.x, state.bp, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_consistent_systems_and_witnesses(m, extra, seed):
    rng = np.random.default_rng(seed)
    n = m + extra
    D = rng.standard_normal((m, n))
    A = SparseMatrix.from_dense(D)
    b = D @ rng.standard_normal(n)
    eps = 1e-6 * np.linalg.norm(b)
    rep = ta_solve(A, b, eps=eps, eps_normal=0.0)
    assert rep.verdict is Verdict.SYSTEM
    assert np.linalg.norm(D @ rep.x - b) <= eps * (1 + 1e-9)
    assert row_space_residual(D, rep.x) <= 1e-8 * np.linalg.norm(rep.x)
    check_witnesses(rep, D, b, svd_pinv_solve(D, b))


def test_underdetermined_solution_near_min_norm(rng):
    D = rng.standard_normal((20, 30))
    A = SparseMatrix.from_dense(D)
    b = D @ rng.standard_normal(30)
    rep = ta_solve(A, b, eps=1e-8 * np.linalg.norm(b), eps_normal=0.0)
    x_star = svd_pinv_solve(D, b)
    assert np.linalg.norm(rep.x - x_star) <= 1e-5 * np.linalg.norm(x_star)


def test_want_system_halves_normal_tolerance(rng):
    D = rng.standard_normal((5, 8))
    b = D @ rng.standard_normal(8)
    A = SparseMatrix.from_dense(D)
    rep = ta_solve(A, b, eps=1e-10, eps_normal=1.0, want_system=True, max_halvings=60)
    assert rep.verdict is Verdict.SYSTEM
    assert rep.events_of("halve_eps_normal")


def test_psd_variant_matches_dense_solve(rng):
    M, _ = spd_with_spectrum(np.linspace(1, 20, 15), rng)
    A = SparseMatrix.from_dense(M, symmetric=True)
    b = rng.standard_normal(15)
    rep = ta_solve_psd(A, b, eps=1e-9, eps_normal=0.0)
    assert rep.verdict is Verdict.SYSTEM
    assert np.linalg.norm(M @ rep.x - b) <= 1e-9 * (1 + 1e-9)
    # one product per iteration plus those spent after witnesses
    assert rep.matvecs <= rep.iterations + 1


def test_psd_variant_rejects_indefinite():
    A = SparseMatrix.diag([1.0, -1.0])
    with pytest.raises(ValueError):
        ta_solve_psd(A, np.array([0.0, 1.0]), eps=1e-8)


def test_psd_variant_normal_exit_on_singular():
    A = SparseMatrix.diag([2.0, 0.0])
    rep = ta_solve_psd(A, np.array([1.0, 1.0]), eps=1e-8, eps_normal=1e-9)
    assert rep.verdict is Verdict.NORMAL
    assert rep.x[0] == pytest.approx(0.5, abs=1e-8)


def test_min_norm_bracket_on_single_row():
    A = SparseMatrix.from_dense([[1.0, 1.0]])
    b = np.array([2.0])
    eps = 1e-4
    x_eps = np.array([2.0, 0.0])
    bracket, rep = ta_min_norm(A, b, eps, x_eps)
    assert rep.verdict is Verdict.MINNORM and bracket.certified
    assert bracket.width <= eps
    assert bracket.lower <= math.sqrt(2) * (1 + 1e-8) <= bracket.upper + eps
    assert rep.info["outer"] <= math.ceil(math.log2(np.linalg.norm(x_eps) / eps))


def test_min_norm_rejects_bad_start():
    A = SparseMatrix.identity(2)
    with pytest.raises(ValueError):
        ta_min_norm(A, np.ones(2), 1e-3, np.zeros(2))


def test_rejects_zero_rhs():
    with pytest.raises(ValueError):
        ta_solve(SparseMatrix.identity(2), np.zeros(2))


def test_resync_keeps_bp_consistent(rng):
    D = rng.standard_normal((10, 10))
    A = SparseMatrix.from_dense(D)
    b = D @ rng.standard_normal(10)
    rep = ta_solve(A, b, eps=1e-6, eps_normal=0.0, recompute_every=7)
    st_ = rep.info["state"]
    assert np.linalg.norm(matvec(A, st_.x) - st_.bp) <= 1e-8 * np.linalg.norm(b)
