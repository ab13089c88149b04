"""Truncation study: how the solution near the leaves approaches the boundary data.

For each depth K, prints the largest |u - avg f| over level K-1 and the root
value, for a source and for zero source. Usage:

    python3 scripts/depth_convergence.py --m 2 --beta 0.25 --f s --h "0.5^k" --depths 6 8 10 12 14
"""

import argparse

import numpy as np

from treemem.funcspec import level_boundary_averages, parse
from treemem.operators import OperatorParams
from treemem.single import DirichletProblem, solve_direct
from treemem.tree import ROOT, TruncatedTree


def level_gap(prob: DirichletProblem, k: int) -> float:
    u, _ = solve_direct(prob)
    return float(np.max(np.abs(u.levels[k] - level_boundary_averages(prob.f, k, prob.tree.m))))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=2)
    ap.add_argument("--beta", type=float, default=0.25)
    ap.add_argument("--f", default="s")
    ap.add_argument("--h", default="0.5^k")
    ap.add_argument("--depths", type=int, nargs="+", default=[6, 8, 10, 12, 14, 16])
    args = ap.parse_args()

    f = parse(args.f, "boundary")
    print(f"{'K':>3} {'gap(K-1), h':>14} {'gap(K-1), h=0':>14} {'u(root)':>20}")
    for K in args.depths:
        tree = TruncatedTree(args.m, K)
        params = OperatorParams(args.beta, args.m)
        with_h = DirichletProblem(tree, params, parse(args.h, "source"), f)
        no_h = DirichletProblem(tree, params, parse("0", "source"), f)
        u, _ = solve_direct(with_h)
        print(f"{K:>3} {level_gap(with_h, K - 1):>14.4e} {level_gap(no_h, K - 1):>14.4e} {u[ROOT]:>20.15f}")


if __name__ == "__main__":
    main()
