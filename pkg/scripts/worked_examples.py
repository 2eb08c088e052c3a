"""Closed-form reduction factors of F_1 and F_2 on H = diag(1, ..., m)."""

import math

import numpy as np

from trisolve.cta import f1_apply, ft_apply
from trisolve.linalg import KrylovCache, Mode, OperatorH, SparseMatrix


def main():
    for m in (10, 100, 1000):
        H = OperatorH(SparseMatrix.diag(np.arange(1.0, m + 1)), Mode.PSD)
        r = np.ones(m)
        f1 = np.linalg.norm(f1_apply(H, r)[0]) / math.sqrt(m)
        f2 = np.linalg.norm(ft_apply(KrylovCache.start(r), 2, H)[0]) / math.sqrt(m)
        closed = math.sqrt((m - 1) / (2 * (2 * m + 1)))
        w = np.zeros(m)
        w[0], w[-1] = math.sqrt(m / (m + 1)), math.sqrt(1 / (m + 1))
        worst = np.linalg.norm(f1_apply(H, w)[0])
        print(f"m={m:5d}  F1 ratio {f1:.15f} (closed form {closed:.15f})  "
              f"F2 ratio {f2:.6f}  worst case {worst:.15f} vs {(m - 1) / (m + 1):.15f}")


if __name__ == "__main__":
    main()
