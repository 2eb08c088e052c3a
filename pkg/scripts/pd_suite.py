"""Run a benchmark config and print iteration counts side by side.

Usage: python3 scripts/pd_suite.py [--config configs/pd-suite.cfg] [--out results/pd] [--eps 1e-12]
"""

import argparse
import os
from collections import defaultdict

from trisolve.bench import BenchConfig, run_experiment

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=os.path.join(ROOT, "configs", "pd-suite.cfg"))
    p.add_argument("--out", default=None)
    p.add_argument("--eps", type=float, default=None, help="tolerance shown in the table")
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args()

    config = BenchConfig.from_file(args.config, out=args.out or os.path.join(ROOT, "results", "pd"))
    records = run_experiment(config, threads=args.threads)
    eps = args.eps or min(config.tolerances)
    table = defaultdict(dict)
    for rec in records:
        if rec.eps == eps:
            table[rec.recipe][rec.solver] = rec
    solvers = config.solvers
    print(f"iterations (matvecs) at relative tolerance {eps:g}; results in {config.out}")
    print(f"{'instance':44s}" + "".join(f"{s:>20s}" for s in solvers))
    for recipe in sorted(table):
        cells = []
        for s in solvers:
            r = table[recipe].get(s)
            if r is None:
                cells.append("-")
            elif r.verdict == "SystemSolved":
                cells.append(f"{r.iters} ({r.matvecs})")
            else:
                cells.append(r.verdict)
        print(f"{recipe:44s}" + "".join(f"{c:>20s}" for c in cells))


if __name__ == "__main__":
    main()
