"""Point-wise orbit demo: finite termination and minimal-polynomial factors.

Builds symmetric matrices with a chosen set of eigenvalues, runs the orbit
``F_1(r0), F_2(r0), ...`` and prints the detected degree and polynomial.
"""

import numpy as np

from trisolve.cta import minimal_poly_factor, pointwise_orbit
from trisolve.linalg import SparseMatrix


def with_spectrum(lam, seed=0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((len(lam), len(lam))))
    M = (q * lam) @ q.T
    return SparseMatrix.from_dense(0.5 * (M + M.T), symmetric=True)


def show(title, A, b):
    orbit = pointwise_orbit(A, b, eps=1e-10)
    print(title)
    for t, (f, g) in enumerate(zip(orbit.residual_norms, orbit.normal_norms), start=1):
        print(f"  t={t:2d}  ||F_t(r0)|| = {f:.3e}   ||H F_t(r0)|| = {g:.3e}")
    print(f"  verdict {orbit.verdict}, degree {orbit.degree}")
    if orbit.coefficients is not None:
        print("  polynomial (ascending):", np.array2string(orbit.coefficients, precision=6))


def main():
    lam = np.array([1.0, 1.0, 2.0, 4.0, 4.0, 4.0, 7.0, 7.0])
    show("eigenvalues {1, 2, 4, 7} with repeats (consistent):", with_spectrum(lam), np.ones(8))
    lam0 = np.array([0.0, 0.0, 3.0, 3.0, 5.0, 5.0])
    show("singular H with a null-space component in b:", with_spectrum(lam0, 1), np.ones(6))
    coeffs, _ = minimal_poly_factor(SparseMatrix.diag([1.0, 2.0, 3.0]), r0=np.ones(3))
    print("minimal polynomial of diag(1,2,3):", np.array2string(coeffs, precision=12))
    print("expected (l-1)(l-2)(l-3):          [-6. 11. -6.  1.]")


if __name__ == "__main__":
    main()
