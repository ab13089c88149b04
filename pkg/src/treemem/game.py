"""Monte Carlo play of the two-board game under stationary strategies.

A state is (node, board). The player owning the board either jumps (board
flips, token stays, nothing is paid) or lets the token move: from the root
to a uniform child, elsewhere up with probability beta_board and to each
child with probability (1 - beta_board)/m, collecting h_board at the node
it leaves. Play ends on reaching the leaf level, paying f on board 1 and g
on board 2.

Two jumps in a row are not allowed: the second is turned into a stay, so
the token moves at least every other decision and play ends almost surely.

Randomness is counter based. Path p draws its n-th uniform from a
SplitMix64 stream keyed on ``seed ^ p``, so every path is reproducible on
its own and results do not depend on chunking or thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .membranes import TmpSpec
from .operators import equation_branch
from .tree import NodeField, NodeId

#: paths per work unit; fixed so chunk boundaries never depend on threads
CHUNK = 8192

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, paths: np.ndarray) -> np.ndarray:
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    return _mix64(np.asarray(paths, dtype=np.uint64) ^ base)


def uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """The counter-th draw of each stream, in [0, 1) with 53 random bits."""
    with np.errstate(over="ignore"):
        z = _mix64(keys + (counters.astype(np.uint64) + np.uint64(1)) * _GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass
class GameConfig:
    spec: TmpSpec
    start: tuple
    paths: int = 100_000
    seed: int = 0
    max_steps: int = 100_000

    def __post_init__(self):
        node, board = self.start
        if not self.spec.tree.contains(node):
            raise ValueError(f"start node {node} outside the truncated tree")
        if board not in (1, 2):
            raise ValueError(f"board must be 1 or 2, got {board}")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class StrategyPair:
    """Jump flags per interior level: ``jump1`` for Player I, ``jump2`` for Player II."""

    jump1: tuple
    jump2: tuple

    def decision(self, node: NodeId, board: int) -> str:
        flags = self.jump1 if board == 1 else self.jump2
        return "jump" if flags[node.level][node.index] else "stay"

    @classmethod
    def stay_everywhere(cls, spec: TmpSpec) -> "StrategyPair":
        m, K = spec.tree.m, spec.tree.depth
        none = tuple(np.zeros(m**k, dtype=bool) for k in range(K))
        return cls(none, none)


@dataclass(frozen=True)
class PathOutcome:
    payoff: float
    steps: int
    exit_node: NodeId
    exit_board: int
    truncated_by_cap: bool


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    paths_used: int
    capped_fraction: float
    mean_steps: float
    forced_stays: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "paths_used": self.paths_used,
                "capped_fraction": self.capped_fraction, "mean_steps": self.mean_steps,
                "forced_stays": self.forced_stays}


def greedy_strategies(u: NodeField, v: NodeField, spec: TmpSpec, tie_tol: float = 1e-9) -> StrategyPair:
    """Read the optimal action off the solved pair; ties go to staying.

    Player I stays at x when eq1(u)(x) >= v(x) - tol, Player II stays when
    eq2(v)(x) <= u(x) + tol, with tol = tie_tol * (1 + |u(x)|).
    """
    K = spec.tree.depth
    e1 = equation_branch(u, spec.params1.beta, spec.base1.h_field())
    e2 = equation_branch(v, spec.params2.beta, spec.base2.h_field())
    j1, j2 = [], []
    for k in range(K):
        tol = tie_tol * (1.0 + np.abs(u.levels[k]))
        j1.append(e1[k] < v.levels[k] - tol)
        j2.append(e2[k] > u.levels[k] + tol)
    return StrategyPair(tuple(j1), tuple(j2))


class _Tables:
    """Flat per-node lookups shared by every simulated path."""

    def __init__(self, spec: TmpSpec, strat: StrategyPair):
        m, K = spec.tree.m, spec.tree.depth
        self.m, self.K = m, K
        self.offset = np.array([(m**k - 1) // (m - 1) for k in range(K + 1)], dtype=np.int64)
        self.beta = (spec.params1.beta, spec.params2.beta)
        h1, h2 = spec.base1.h_field(), spec.base2.h_field()
        self.h = (np.concatenate(h1.levels[:K]), np.concatenate(h2.levels[:K]))
        self.jump = (np.concatenate(strat.jump1), np.concatenate(strat.jump2))
        self.final = (spec.base1.leaf_values(), spec.base2.leaf_values())


def _simulate(tab: _Tables, seed: int, first: int, count: int, start: tuple, max_steps: int):
    node, board0 = start
    m, K = tab.m, tab.K
    pid = np.arange(first, first + count, dtype=np.uint64)
    keys = stream_keys(seed, pid)
    level = np.full(count, node.level, dtype=np.int64)
    index = np.full(count, node.index, dtype=np.int64)
    board = np.full(count, board0, dtype=np.int64)
    just_jumped = np.zeros(count, dtype=bool)
    payoff = np.zeros(count)
    moves = np.zeros(count, dtype=np.int64)
    decisions = np.zeros(count, dtype=np.int64)
    forced = 0
    alive = np.flatnonzero(level < K)
    while alive.size:
        lv, ix, bd = level[alive], index[alive], board[alive]
        flat = tab.offset[lv] + ix
        on1 = bd == 1
        want = np.where(on1, tab.jump[0][flat], tab.jump[1][flat])
        blocked = want & just_jumped[alive]
        forced += int(blocked.sum())
        jump = want & ~blocked
        decisions[alive] += 1

        jp = alive[jump]
        board[jp] = 3 - board[jp]
        just_jumped[jp] = True

        stay = ~jump
        st = alive[stay]
        lv, ix, on1, flat = lv[stay], ix[stay], on1[stay], flat[stay]
        payoff[st] += np.where(on1, tab.h[0][flat], tab.h[1][flat])
        beta = np.where(on1, tab.beta[0], tab.beta[1])
        r = uniforms(keys[st], moves[st])
        moves[st] += 1
        just_jumped[st] = False
        up = (lv > 0) & (r < beta)
        frac = np.where(lv == 0, r, (r - beta) / (1.0 - beta))
        child = np.minimum((frac * m).astype(np.int64), m - 1)
        level[st] = np.where(up, lv - 1, lv + 1)
        index[st] = np.where(up, ix // m, ix * m + child)

        done = st[level[st] == K]
        if done.size:
            leaf = index[done]
            payoff[done] += np.where(board[done] == 1, tab.final[0][leaf], tab.final[1][leaf])
        alive = alive[(level[alive] < K) & (decisions[alive] < max_steps)]
    capped = level < K
    return payoff, moves, level, index, board, capped, forced


def _threads() -> int:
    n = int(os.environ.get("TREEMEM_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def simulate_paths(cfg: GameConfig, strat: StrategyPair, first: int = 0, count: int | None = None):
    """Raw per-path arrays for paths ``first .. first+count-1``, in path order."""
    count = cfg.paths - first if count is None else count
    tab = _Tables(cfg.spec, strat)
    chunks = [(s, min(CHUNK, first + count - s)) for s in range(first, first + count, CHUNK)]

    def work(c):
        return _simulate(tab, cfg.seed, c[0], c[1], cfg.start, cfg.max_steps)

    workers = min(_threads(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    cols = [np.concatenate([p[i] for p in parts]) for i in range(6)]
    return (*cols, sum(p[6] for p in parts))


def play_path(cfg: GameConfig, strat: StrategyPair, path_index: int = 0) -> PathOutcome:
    payoff, moves, level, index, board, capped, _ = simulate_paths(cfg, strat, path_index, 1)
    return PathOutcome(float(payoff[0]), int(moves[0]), NodeId(int(level[0]), int(index[0])),
                       int(board[0]), bool(capped[0]))


def estimate_value(cfg: GameConfig, strat: StrategyPair) -> ValueEstimate:
    """Mean payoff over ``cfg.paths`` plays; capped paths are left out and counted."""
    payoff, moves, _, _, _, capped, forced = simulate_paths(cfg, strat)
    used = payoff[~capped]
    n = used.size
    mean = float(np.sum(used) / n) if n else float("nan")
    se = float(np.sqrt(np.sum((used - mean) ** 2) / (n - 1) / n)) if n > 1 else 0.0
    return ValueEstimate(mean, se, int(n), float(capped.mean()), float(moves.mean()), int(forced))
