"""Monte Carlo check of the game values against the coupled solution.

Plays the greedy strategies read off the solved pair from several starts,
with independent seeds, and counts how often the mean lands within three
standard errors of the solved value.

    TREEMEM_THREADS=4 python3 scripts/game_check.py --case push-together --paths 100000 --seeds 20
"""

import argparse
import time

from treemem.game import GameConfig, estimate_value, greedy_strategies
from treemem.membranes import solve_coupled
from treemem.regression import TMP_CASES
from treemem.tree import NodeId

STARTS = [(0, 0, 1), (0, 0, 2), (1, 0, 1), (2, 3, 2), (3, 5, 1), (5, 20, 2)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default=TMP_CASES[0].name, choices=[c.name for c in TMP_CASES])
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()

    case = next(c for c in TMP_CASES if c.name == args.case)
    s = case.build()
    sol = solve_coupled(s, check_solvability=False)
    strat = greedy_strategies(sol.u, sol.v, s)
    t0 = time.perf_counter()
    for j, (level, index, board) in enumerate(STARTS):
        node = NodeId(level, index % s.tree.m**level)
        ref = (sol.u if board == 1 else sol.v)[node]
        hits, zs, steps = 0, [], 0.0
        for r in range(args.seeds):
            est = estimate_value(GameConfig(s, (node, board), args.paths, seed=1000 * j + r), strat)
            z = (est.mean - ref) / est.std_error if est.std_error > 0 else 0.0
            zs.append(z)
            hits += abs(z) <= 3
            steps = est.mean_steps
        print(f"start ({level},{node.index}) board {board}: solved {ref:+.6f}, within 3se {hits}/{args.seeds}, "
              f"max |z| {max(abs(z) for z in zs):.2f}, mean steps {steps:.1f}")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
