import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisolve.cta import (CtaOptions, centering_ratio, f1_apply, f1_fold, f1_iterate, ft_apply,
                          ft_iterate, hybrid_solve, minimal_poly_factor, normal_equation_iterate,
                          operator_for, pointwise_orbit, rate_factor)
from trisolve.gallery import spectral_oracle
from trisolve.linalg import Breakdown, KrylovCache, Mode, OperatorH, SparseMatrix, solve_aux_min_norm
from trisolve.report import Verdict

from conftest import lstsq_solve, row_space_residual, spd_with_spectrum, svd_pinv_solve


def psd_op(values):
    return OperatorH(SparseMatrix.diag(values), Mode.PSD)


def dense_op(M):
    return OperatorH(SparseMatrix.from_dense(M, symmetric=True), Mode.PSD)


# --------------------------------------------------------------------------- F_1


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 10), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_f1_norm_identity(n, rank, seed):
    rng = np.random.default_rng(seed)
    lam = np.zeros(n)
    k = min(rank, n)
    lam[:k] = rng.uniform(0.1, 10, k)
    M, _ = spd_with_spectrum(lam, rng)
    r = rng.standard_normal(n)
    H = dense_op(M)
    F, a = f1_apply(H, r)
    hr = M @ r
    assert a == pytest.approx((r @ hr) / (hr @ hr), rel=1e-12)
    lhs = F @ F + (r @ hr) ** 2 / (hr @ hr)
    assert lhs == pytest.approx(r @ r, rel=1e-12)


@pytest.mark.parametrize("m", [10, 100, 1000])
def test_f1_ratio_on_diag_range(m):
    H = psd_op(np.arange(1.0, m + 1))
    r = np.ones(m)
    F, _ = f1_apply(H, r)
    assert np.linalg.norm(F) / np.linalg.norm(r) == pytest.approx(
        math.sqrt((m - 1) / (2 * (2 * m + 1))), abs=1e-12)


@pytest.mark.parametrize("m", [10, 100])
def test_f1_worst_case_is_attained(m):
    H = psd_op(np.arange(1.0, m + 1))
    r = np.zeros(m)
    r[0], r[-1] = math.sqrt(m / (m + 1)), math.sqrt(1 / (m + 1))
    F, _ = f1_apply(H, r)
    assert np.linalg.norm(F) == pytest.approx((m - 1) / (m + 1), abs=1e-12)


def test_f1_eigenvector_is_annihilated():
    F, a = f1_apply(psd_op([1.0, 4.0, 9.0]), np.array([0.0, 2.0, 0.0]))
    assert a == pytest.approx(0.25) and np.allclose(F, 0.0)


def test_f1_breakdown():
    with pytest.raises(Breakdown):
        f1_apply(psd_op([0.0, 1.0]), np.array([1.0, 0.0]))


def test_fold_matches_replay():
    H = psd_op([1.0, 2.0, 3.0])
    fold = f1_fold(H, np.ones(3), 3)
    f = np.ones(3)
    for j, (fj, q, _) in enumerate(fold):
        assert np.allclose(fj, f, rtol=0, atol=1e-13)
        assert q == pytest.approx(f @ (np.array([1.0, 2.0, 3.0]) * f), abs=1e-13)
        if j < len(fold) - 1:
            f, _ = f1_apply(H, f)
    one = f1_fold(H, np.ones(3), 1)
    assert np.allclose(one[1][0], f1_apply(H, np.ones(3))[0])


def test_fold_stops_at_eigenvector():
    fold = f1_fold(psd_op([1.0, 4.0]), np.array([1.0, 0.0]), 5)
    assert len(fold) == 2 and np.allclose(fold[1][0], 0.0)


# --------------------------------------------------------------------------- F_t


def test_ft_t1_equals_f1(rng):
    M, _ = spd_with_spectrum(rng.uniform(1, 5, 6), rng)
    H = dense_op(M)
    r = rng.standard_normal(6)
    F, alpha, dx = ft_apply(KrylovCache.start(r), 1, H)
    F1, a = f1_apply(H, r)
    assert np.allclose(F, F1, atol=1e-13) and alpha[0] == pytest.approx(a)
    assert np.allclose(dx, a * r)


def test_f2_ratio_on_diag_range():
    H = psd_op(np.arange(1.0, 101))
    r = np.ones(100)
    F, _, _ = ft_apply(KrylovCache.start(r), 2, H)
    assert np.linalg.norm(F) / np.linalg.norm(r) == pytest.approx(0.327, abs=5e-3)


def test_f2_kills_two_eigencomponents():
    H = psd_op([1.0, 3.0, 7.0, 10.0])
    r = np.array([0.0, 2.0, 0.0, -1.0])
    F, _, _ = ft_apply(KrylovCache.start(r), 2, H)
    assert np.linalg.norm(F) <= 1e-10 * np.linalg.norm(r)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 15), st.integers(0, 2**31 - 1))
def test_monotone_family_and_stabilisation(n, seed):
    rng = np.random.default_rng(seed)
    lam = np.linspace(1, 3, n)
    M, _ = spd_with_spectrum(lam, rng)
    H = dense_op(M)
    s = min(n, 4)
    U = np.linalg.eigh(M)[1]
    r = U[:, rng.choice(n, s, replace=False)] @ rng.uniform(0.5, 1.5, s)
    cache = KrylovCache.start(r).extend_to_power(H, s + 2)
    norms = [np.linalg.norm(ft_apply(cache, t)[0]) for t in range(1, s + 3)]
    for t in range(1, s):
        assert norms[t] < norms[t - 1]
    assert norms[s - 1] <= 1e-8 * np.linalg.norm(r)
    Fs = ft_apply(cache, s)[0]
    for t in (s + 1, s + 2):
        assert np.linalg.norm(ft_apply(cache, t)[0] - Fs) <= 1e-8 * np.linalg.norm(r)


def test_aux_invertible_for_distinct_eigencomponents():
    lam = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    H = psd_op(lam)
    r = np.ones(5)
    cache = KrylovCache.start(r).extend(H, 4)
    for t in range(1, 5):
        aux = solve_aux_min_norm(cache, t)
        assert aux.rank == t
        assert abs(aux.alpha[-1]) > 1e-12 * np.linalg.norm(aux.alpha)


# --------------------------------------------------------------------------- spectral lemma


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1), st.booleans())
def test_centering_inequalities(n, seed, singular):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.1, 50, n)
    if singular:
        lam[: rng.integers(1, n)] = 0.0
    M, U = spd_with_spectrum(lam, rng)
    stats = spectral_oracle(M, mode="psd")
    k = stats.kappa_plus
    bound = 4 * k / (k + 1) ** 2
    pos = stats.eigenvalues > 1e-10 * stats.lambda_max
    V = stats.eigenvectors
    x = rng.standard_normal(n)
    if not singular:
        assert centering_ratio(M, x) >= bound - 1e-10
    xr = V[:, pos] @ rng.standard_normal(pos.sum())
    assert centering_ratio(M, xr) >= bound - 1e-10
    q = x @ M @ x
    if q > 0:
        assert q * q / (x @ M @ M @ x) >= stats.c * q - 1e-10 * q


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_centering_equality_case(n, seed):
    rng = np.random.default_rng(seed)
    M, _ = spd_with_spectrum(rng.uniform(0.5, 20, n), rng)
    stats = spectral_oracle(M, mode="psd")
    k = stats.kappa_plus
    U = stats.eigenvectors
    x = math.sqrt(k / (k + 1)) * U[:, 0] + math.sqrt(1 / (k + 1)) * U[:, -1]
    assert centering_ratio(M, x) == pytest.approx(4 * k / (k + 1) ** 2, abs=1e-10)
    assert rate_factor(k) ** 2 == pytest.approx(1 - 4 * k / (k + 1) ** 2, abs=1e-12)


# --------------------------------------------------------------------------- iterations


def test_identity_one_iteration():
    rep = ft_iterate(SparseMatrix.identity(5), np.ones(5), CtaOptions(eps=1e-12))
    assert rep.verdict is Verdict.SYSTEM and rep.iterations == 1


@pytest.mark.parametrize("t", [1, 3])
def test_rate_on_diag_range(t):
    A = SparseMatrix.diag(np.arange(1.0, 101))
    b = np.ones(100)
    rep = ft_iterate(A, b, CtaOptions(t=t, eps=1e-10, eps_grad=0.0))
    q = rate_factor(100.0)
    r0 = rep.history[0][1]
    for k, rn in rep.history:
        assert rn <= q ** (t * k) * r0 * (1 + 1e-8)
    assert rep.verdict is Verdict.SYSTEM


def test_f1_iterate_agrees_with_ft_t1(rng):
    A = SparseMatrix.diag(np.arange(1.0, 31))
    b = rng.standard_normal(30)
    opts = CtaOptions(t=1, eps=1e-9, eps_grad=0.0)
    r1, r2 = f1_iterate(A, b, opts), ft_iterate(A, b, opts)
    assert r1.iterations == r2.iterations
    assert np.allclose(r1.x, r2.x, rtol=1e-9)


def test_gram_mode_min_norm(rng):
    D = rng.standard_normal((10, 20))
    A = SparseMatrix.from_dense(D)
    b = D @ rng.standard_normal(20)
    rep = f1_iterate(A, b, CtaOptions(eps=1e-10, eps_grad=0.0, mode="gram"))
    x_star = svd_pinv_solve(D, b)
    assert np.linalg.norm(rep.x - x_star) <= 1e-6
    assert row_space_residual(D, rep.x) <= 1e-8 * np.linalg.norm(rep.x)


def test_gram_start_from_row_space(rng):
    D = rng.standard_normal((8, 15))
    A = SparseMatrix.from_dense(D)
    b = D @ rng.standard_normal(15)
    rep = ft_iterate(A, b, CtaOptions(t=3, eps=1e-11, eps_grad=0.0, mode="gram"),
                     w0=rng.standard_normal(8))
    assert np.linalg.norm(rep.x - svd_pinv_solve(D, b)) <= 1e-8 * np.linalg.norm(rep.x)


def test_inconsistent_gram_exits_on_quadratic_clause(rng):
    D = rng.standard_normal((5, 3))
    A = SparseMatrix.from_dense(D)
    b = rng.standard_normal(5)
    eps = 1e-10
    rep = ft_iterate(A, b, CtaOptions(t=2, eps=eps, tol_mode="absolute", mode="gram"))
    assert rep.verdict is Verdict.NORMAL
    exit_ev = rep.events_of("exit")[-1]
    assert exit_ev["clause"] in ("quadratic", "fold", "breakdown")
    assert exit_ev["bound_class"] == "sqrt(eps)"
    assert np.linalg.norm(D.T @ (D @ rep.x) - D.T @ b) <= math.sqrt(eps)


def test_cycle_schedule_order():
    opts = CtaOptions(schedule="cycle", t_max=3)
    assert [opts.order(k) for k in range(7)] == [1, 2, 3, 1, 2, 3, 1]


def test_residual_solution_coupling(rng):
    A = SparseMatrix.diag(np.arange(1.0, 51))
    b = rng.standard_normal(50)
    rep = ft_iterate(A, b, CtaOptions(t=2, eps=1e-12, eps_grad=0.0, recompute_every=5))
    assert rep.residual <= 1e-12 * np.linalg.norm(b) * (1 + 1e-6) + 1e-8 * (np.linalg.norm(b) + 50 * np.linalg.norm(rep.x))


def test_jacobi_preconditioned_cta(rng):
    d = np.logspace(0, 4, 40)
    M, _ = spd_with_spectrum(np.linspace(1, 2, 40), rng)
    S = np.sqrt(d)[:, None] * M * np.sqrt(d)[None, :]
    S = 0.5 * (S + S.T)
    A = SparseMatrix.from_dense(S, symmetric=True)
    b = rng.standard_normal(40)
    rep = ft_iterate(A, b, CtaOptions(t=3, eps=1e-10, eps_grad=0.0, precond="jacobi"))
    assert rep.verdict is Verdict.SYSTEM
    assert np.allclose(rep.x, np.linalg.solve(S, b), rtol=1e-6)


def test_overflow_triggers_rescale():
    A = SparseMatrix.diag([1e160, 2e160, 3e160])
    rep = ft_iterate(A, np.ones(3), CtaOptions(t=3, eps=1e-10, eps_grad=0.0))
    assert rep.events_of("rescale")
    assert rep.verdict is Verdict.SYSTEM
    assert np.allclose(rep.x, 1 / np.array([1e160, 2e160, 3e160]), rtol=1e-8)


def test_options_validation():
    with pytest.raises(ValueError):
        CtaOptions(t=0)
    with pytest.raises(ValueError):
        CtaOptions(t=31)
    with pytest.raises(ValueError):
        CtaOptions(eta=1.0)
    with pytest.raises(ValueError):
        CtaOptions(window=0)


# --------------------------------------------------------------------------- orbit


def test_orbit_three_eigenvalues(rng):
    M, U = spd_with_spectrum(np.array([1.0, 1.0, 2.0, 2.0, 5.0, 5.0]), rng)
    A = SparseMatrix.from_dense(M, symmetric=True)
    b = rng.standard_normal(6)
    orbit = pointwise_orbit(A, b, eps=1e-10)
    assert orbit.verdict == "SystemSolved" and orbit.degree == 3
    assert orbit.residual_norms[-1] <= 1e-10 * np.linalg.norm(b)
    assert np.all(np.diff(orbit.residual_norms) < 0)
    assert np.allclose(orbit.x, np.linalg.solve(M, b), rtol=1e-8)


def test_orbit_inconsistent_normal_verdict(rng):
    A = SparseMatrix.diag([1.0, 2.0, 0.0])
    b = np.array([1.0, 1.0, 1.0])
    orbit = pointwise_orbit(A, b, eps=1e-10)
    assert orbit.verdict == "NormalSolved" and orbit.degree == 2
    assert orbit.residual_norms[-1] > 1e-10
    assert orbit.normal_norms[-1] <= 1e-10 * 2 * np.linalg.norm(b)


def test_orbit_scaling_invariance(rng):
    M, _ = spd_with_spectrum(np.array([1.0, 3.0, 3.0, 6.0]), rng)
    A = SparseMatrix.from_dense(M, symmetric=True)
    b = rng.standard_normal(4)
    o1, o7 = pointwise_orbit(A, b), pointwise_orbit(A, 7 * b)
    assert (o1.degree, o1.verdict) == (o7.degree, o7.verdict)
    H = operator_for(A)
    c1 = KrylovCache.start(b).extend_to_power(H, 3)
    c7 = KrylovCache.start(7 * b).extend_to_power(H, 3)
    for t in (1, 2):
        F1, F7 = ft_apply(c1, t)[0], ft_apply(c7, t)[0]
        assert np.allclose(F7, 7 * F1, rtol=1e-12, atol=1e-12 * np.linalg.norm(7 * F1))


def test_orbit_solvability_characterisation():
    rng = np.random.default_rng(7)
    hits = 0
    for trial in range(200):
        n = int(rng.integers(3, 8))
        lam = np.zeros(n)
        k = int(rng.integers(1, n))
        lam[:k] = rng.permutation(np.linspace(1, 4, k))
        M, U = spd_with_spectrum(lam, rng)
        A = SparseMatrix.from_dense(M, symmetric=True)
        consistent = trial % 2 == 0
        b = U[:, :k] @ rng.uniform(0.5, 1.5, k)
        if not consistent:
            b = b + U[:, k:] @ rng.uniform(0.5, 1.5, n - k)
        orbit = pointwise_orbit(A, b, eps=1e-9)
        expected = "SystemSolved" if consistent else "NormalSolved"
        hits += orbit.verdict == expected
    assert hits == 200


def test_orbit_rejects_zero_residual():
    with pytest.raises(ValueError):
        pointwise_orbit(SparseMatrix.identity(2), np.zeros(2))


# --------------------------------------------------------------------------- minimal polynomial


def test_min_poly_scalar():
    coeffs, orbit = minimal_poly_factor(SparseMatrix.diag([2.0, 2.0, 2.0]))
    assert orbit.degree == 1
    assert np.allclose(coeffs, [-2.0, 1.0], rtol=1e-8)


def test_min_poly_distinct():
    coeffs, _ = minimal_poly_factor(SparseMatrix.diag([1.0, 2.0, 3.0]), r0=np.ones(3))
    expected = np.array([-6.0, 11.0, -6.0, 1.0])
    assert np.allclose(coeffs, expected, rtol=1e-8, atol=0)


def test_min_poly_repeated_eigenvalue():
    coeffs, orbit = minimal_poly_factor(SparseMatrix.diag([1.0, 1.0, 5.0]), r0=np.ones(3))
    assert orbit.degree == 2
    assert np.allclose(coeffs, [5.0, -6.0, 1.0], rtol=1e-8)


def test_min_poly_singular_uses_range():
    coeffs, orbit = minimal_poly_factor(SparseMatrix.diag([0.0, 2.0, 4.0]), seed=3)
    assert orbit.verdict == "SystemSolved"
    assert np.allclose(coeffs, [8.0, -6.0, 1.0], rtol=1e-8)


# --------------------------------------------------------------------------- normal equation and hybrid


def test_normal_t1_matches_direct_formula(rng):
    D = rng.standard_normal((6, 3))
    A = SparseMatrix.from_dense(D)
    b = rng.standard_normal(6)
    rep = normal_equation_iterate(A, b, CtaOptions(t=1, eps=1e-14, max_iter=1))
    H = D @ D.T
    r = b
    a = (r @ H @ H @ r) / (r @ H @ H @ H @ r)
    x_direct = a * D.T @ r
    assert np.allclose(rep.x, x_direct, rtol=1e-12)
    r_hat = D.T @ (b - D @ rep.x)
    assert np.allclose(r_hat, D.T @ r - a * D.T @ H @ r, atol=1e-12)


@pytest.mark.parametrize("t", [1, 2, 3])
def test_normal_iterate_least_squares(rng, t):
    D = rng.standard_normal((6, 3))
    A = SparseMatrix.from_dense(D)
    b = rng.standard_normal(6)
    rep = normal_equation_iterate(A, b, CtaOptions(t=t, eps=1e-10))
    assert rep.verdict is Verdict.NORMAL
    g = np.linalg.norm(D.T @ (D @ rep.x - b)) / np.linalg.norm(D.T @ b)
    assert g <= 1e-8
    x_ls = lstsq_solve(D, b)
    assert np.linalg.norm(rep.x - x_ls) <= 1e-5 * np.linalg.norm(x_ls)


def test_normal_iterate_consistent_matches_gram(rng):
    D = rng.standard_normal((6, 10))
    A = SparseMatrix.from_dense(D)
    b = D @ rng.standard_normal(10)
    r1 = normal_equation_iterate(A, b, CtaOptions(t=2, eps=1e-11))
    r2 = f1_iterate(A, b, CtaOptions(eps=1e-11, eps_grad=0.0, mode="gram"))
    assert np.linalg.norm(r1.x - r2.x) <= 1e-6 * np.linalg.norm(r2.x)


def test_hybrid_no_switch_when_consistent(rng):
    M, _ = spd_with_spectrum(np.linspace(1, 10, 30), rng)
    A = SparseMatrix.from_dense(M, symmetric=True)
    rep = hybrid_solve(A, rng.standard_normal(30), CtaOptions(t=2, eps=1e-10, hybrid=True))
    assert rep.verdict is Verdict.SYSTEM and not rep.events_of("switch")


def test_hybrid_switches_on_inconsistent(rng):
    D = rng.standard_normal((12, 5))
    A = SparseMatrix.from_dense(D)
    b = rng.standard_normal(12)
    rep = hybrid_solve(A, b, CtaOptions(t=2, eps=1e-10, hybrid=True))
    sw = rep.events_of("switch")
    assert len(sw) == 1 and sw[0]["iteration"] <= 4 * 25
    assert rep.verdict is Verdict.NORMAL
    x_ls = lstsq_solve(D, b)
    assert np.linalg.norm(rep.x - x_ls) <= 1e-5 * np.linalg.norm(x_ls)


def test_hybrid_window_rule_exact(rng):
    D = rng.standard_normal((12, 5))
    A = SparseMatrix.from_dense(D)
    b = rng.standard_normal(12)
    opts = CtaOptions(t=1, eps=1e-10, hybrid=True, window=10, eta=0.9, recompute_every=0)
    rep = hybrid_solve(A, b, opts)
    k = rep.events_of("switch")[0]["iteration"]
    norms = dict(rep.history)
    assert norms[k] / norms[k - 10] > 0.9
    for j in range(10, k):
        assert norms[j] / norms[j - 10] <= 0.9
