"""Solvers for L(u) = h on the truncated tree with u = f(psi) on the leaves."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BetaZeroSeries, MaxIterExceeded, SingularPivot, TreememError
from .funcspec import BOUNDARY, FuncSpec, QuadratureParams, SourceTable, level_boundary_averages
from .operators import (
    OperatorParams,
    c_beta,
    equation_branch,
    sh_levels,
    sh_weight,
    source_field,
    sup_residual,
)
from .tree import NodeField, TruncatedTree, child_mean, psi_level, subtree_mean

PIVOT_FLOOR = 1e-14


class ResidualCheckFailed(TreememError):
    code = "ResidualCheckFailed"


@dataclass
class DirichletProblem:
    tree: TruncatedTree
    params: OperatorParams
    h: object  # FuncSpec (source kind) or SourceTable
    f: FuncSpec
    quadrature: QuadratureParams = field(default_factory=QuadratureParams)

    def __post_init__(self):
        if self.params.m != self.tree.m:
            raise ValueError(f"params.m={self.params.m} but tree.m={self.tree.m}")
        if self.f.kind != BOUNDARY:
            raise ValueError("f must be a boundary function")
        if not isinstance(self.h, SourceTable) and self.h.kind != "source":
            raise ValueError("h must be a source function")
        self._h_field: Optional[NodeField] = None

    @property
    def beta(self) -> float:
        return self.params.beta

    def h_field(self) -> NodeField:
        if self._h_field is None:
            self._h_field = source_field(self.h, self.tree)
        return self._h_field

    def leaf_values(self) -> np.ndarray:
        s = psi_level(self.tree.depth, self.tree.m)
        return np.broadcast_to(self.f.evaluate(s=s), s.shape).copy()


@dataclass
class SolveReport:
    method: str
    iterations: int
    final_residual: float
    elapsed: float
    tail_bound: Optional[float] = None
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "elapsed": self.elapsed,
        }
        if self.tail_bound is not None:
            out["tail_bound"] = self.tail_bound
        out.update(self.extra)
        return out


# --- tree elimination --------------------------------------------------------

def eliminate(tree: TruncatedTree, beta: float, h: NodeField, leaf: np.ndarray,
              pinned: Optional[list] = None, pin_values: Optional[NodeField] = None) -> NodeField:
    """Exact solve of u = beta*u(parent) + (1-beta)*mean(children) + h.

    Upward sweep writes u(x) = alpha(x) * u(parent) + b(x) level by level,
    downward sweep substitutes. Nodes flagged in ``pinned`` are held at
    ``pin_values`` (alpha = 0), which is how active obstacle nodes enter.
    Without pins alpha depends only on the level.
    """
    m, K = tree.m, tree.depth
    alpha = [None] * (K + 1)
    b = [None] * (K + 1)
    alpha[K] = np.zeros(m**K)
    b[K] = np.asarray(leaf, dtype=np.float64)
    for k in range(K - 1, 0, -1):
        denom = 1.0 - (1.0 - beta) * child_mean(alpha[k + 1], m)
        if np.any(denom <= PIVOT_FLOOR):
            raise SingularPivot(f"pivot {denom.min():.3g} at level {k}")
        a_k = beta / denom
        b_k = ((1.0 - beta) * child_mean(b[k + 1], m) + h.levels[k]) / denom
        if pinned is not None and pinned[k].any():
            a_k = np.where(pinned[k], 0.0, a_k)
            b_k = np.where(pinned[k], pin_values.levels[k], b_k)
        alpha[k], b[k] = a_k, b_k
    denom0 = 1.0 - float(child_mean(alpha[1], m)[0])
    if denom0 <= PIVOT_FLOOR:
        raise SingularPivot(f"root pivot {denom0:.3g}")
    root = (float(child_mean(b[1], m)[0]) + float(h.levels[0][0])) / denom0
    if pinned is not None and pinned[0][0]:
        root = float(pin_values.levels[0][0])
    levels = [np.array([root])]
    for k in range(1, K + 1):
        levels.append(alpha[k] * np.repeat(levels[k - 1], m) + b[k])
    return NodeField(tree, levels)


def _check_residual(u: NodeField, beta: float, h: NodeField, what: str) -> float:
    res = sup_residual(u, beta, h)
    scale = 1.0 + max(abs(u.min()), abs(u.max()))
    if not res <= 1e-10 * scale:
        raise ResidualCheckFailed(f"{what}: residual {res:.3g} exceeds 1e-10*(1+max|u|)")
    return res


def solve_direct(prob: DirichletProblem) -> tuple[NodeField, SolveReport]:
    t0 = time.perf_counter()
    h = prob.h_field()
    u = eliminate(prob.tree, prob.beta, h, prob.leaf_values())
    res = _check_residual(u, prob.beta, h, "solve_direct")
    return u, SolveReport("direct", 1, res, time.perf_counter() - t0)


def _with_root_source(prob: DirichletProblem, lift: float) -> NodeField:
    h = prob.h_field().copy()
    h.levels[0][0] += lift
    return h


def build_supersolution(prob: DirichletProblem, lift: float) -> NodeField:
    """Exact solution with h(root) raised by ``lift`` >= 0.

    L(w) = h + lift at the root and L(w) = h elsewhere, with w = f(psi) on
    the leaves, so w is a supersolution lying above the true solution.
    """
    if lift < 0:
        raise ValueError("supersolution lift must be >= 0")
    h = _with_root_source(prob, lift)
    return eliminate(prob.tree, prob.beta, h, prob.leaf_values())


def build_subsolution(prob: DirichletProblem, lift: float) -> NodeField:
    if lift > 0:
        raise ValueError("subsolution lift must be <= 0")
    h = _with_root_source(prob, lift)
    return eliminate(prob.tree, prob.beta, h, prob.leaf_values())


# --- representation formula ----------------------------------------------------

def solve_representation(prob: DirichletProblem, sh_depth: int = 12,
                         boundary: str = "continuum") -> tuple[NodeField, SolveReport]:
    """Evaluate the closed-form solution by its parent-to-child recurrence.

    ``boundary="continuum"``: the infinite-tree solution, built from interval
    averages of f, c_beta and S_h summed ``sh_depth`` levels deep. Restricted
    to levels 0..K it differs from the truncated problem; ``tail_bound`` is a
    sup-norm bound on that difference (leaf mismatch plus S_h and
    quadrature tails, propagated by the maximum principle).

    ``boundary="discrete"``: the same derivation carried out on the finite
    tree, where the boundary is the leaf level. Then c_beta becomes the
    partial sum c_N = sum_{i<=N} rho^i with N = K - |x|, interval averages
    become leaf averages, and S_h keeps only levels above the leaves. The
    result is the truncated solution exactly (tail_bound = 0).
    """
    if prob.beta == 0.0:
        raise BetaZeroSeries("the representation recurrence degenerates at beta = 0; use solve_direct")
    t0 = time.perf_counter()
    if boundary == "continuum":
        u, extra = _representation_continuum(prob, sh_depth)
    elif boundary == "discrete":
        u, extra = _representation_discrete(prob)
    else:
        raise ValueError(f"boundary must be 'continuum' or 'discrete', got {boundary!r}")
    res = sup_residual(u, prob.beta, prob.h_field())
    report = SolveReport(f"representation/{boundary}", 1, res, time.perf_counter() - t0,
                         tail_bound=extra.pop("tail_bound"), extra=extra)
    return u, report


def _representation_continuum(prob: DirichletProblem, sh_depth: int):
    tree, p = prob.tree, prob.params
    m, K = tree.m, tree.depth
    c = c_beta(p)
    q = prob.quadrature
    q2 = QuadratureParams(2 * q.panels)
    sh = sh_levels(prob.h, p.beta, m, K, sh_depth)
    h_root = float(prob.h.level_values(0, m)[0])

    avg0 = level_boundary_averages(prob.f, 0, m, q)
    quad_err0 = float(np.max(np.abs(avg0 - level_boundary_averages(prob.f, 0, m, q2))))
    levels = [np.array([avg0[0] + float(sh.values[1].sum() / m) + c * h_root])]
    err = sh.tails[1] + quad_err0
    err_max = err
    for k in range(1, K + 1):
        avg = level_boundary_averages(prob.f, k, m, q)
        quad_err = float(np.max(np.abs(avg - level_boundary_averages(prob.f, k, m, q2))))
        levels.append(((c - 1.0) / c) * np.repeat(levels[k - 1], m) + (avg + sh.values[k]) / c)
        err = ((c - 1.0) / c) * err + (sh.tails[k] + quad_err) / c
        err_max = max(err_max, err)
    u = NodeField(tree, levels)
    leaf_gap = float(np.max(np.abs(levels[K] - prob.leaf_values())))
    extra = {
        "tail_bound": leaf_gap + 2.0 * err_max,
        "boundary_gap": leaf_gap,
        "sh_tail_max": max(sh.tails),
        "series_error_bound": err_max,
        "sh_depth": sh_depth,
        "sh_approximate_levels": sh.approximate_levels,
        "sh_tail_is_estimate": sh.tail_is_estimate,
    }
    return u, extra


def _representation_discrete(prob: DirichletProblem):
    tree, p = prob.tree, prob.params
    m, K = tree.m, tree.depth
    rho = p.rho
    w = sh_weight(p.beta)
    h = prob.h_field()
    leaf = prob.leaf_values()

    def c_partial(n):
        return sum(rho**i for i in range(n + 1))

    def s_partial(k):
        n = K - k
        acc = np.zeros(m**k)
        for j in range(n):
            acc += subtree_mean(h.levels[k + j], m, j) * (1.0 - rho ** (n - j))
        return w * acc

    c1 = c_partial(K - 1)
    mean_leaf = float(subtree_mean(leaf, m, K)[0])
    s1 = s_partial(1)
    levels = [np.array([mean_leaf + float(s1.sum() / m) + c1 * float(h.levels[0][0])])]
    for k in range(1, K + 1):
        cn = c_partial(K - k)
        leafavg = subtree_mean(leaf, m, K - k)
        sk = s1 if k == 1 else s_partial(k)
        levels.append(((cn - 1.0) / cn) * np.repeat(levels[k - 1], m) + (leafavg + sk) / cn)
    return NodeField(tree, levels), {"tail_bound": 0.0}


# --- value iteration -----------------------------------------------------------

def converged(history: list, tol: float, scale: float = 1.0) -> bool:
    """Stop when the update and the a-posteriori error estimate are both < tol.

    Jacobi updates contract geometrically; with q the last update ratio the
    distance to the fixed point is about delta * q / (1 - q). Updates at
    rounding level for fields of size ``scale`` also count as converged,
    since the ratio estimate is noise there.
    """
    delta = history[-1]
    if delta <= 16 * np.finfo(float).eps * scale:
        return True
    if delta >= tol or len(history) < 2:
        return False
    q = delta / history[-2] if history[-2] > 0 else 0.0
    if q >= 1.0:
        return False
    return delta * q / (1.0 - q) < tol


def boundary_extension(prob: DirichletProblem) -> NodeField:
    """Interior nodes at the interval average of f, leaves at f(psi)."""
    tree = prob.tree
    levels = [level_boundary_averages(prob.f, k, tree.m, prob.quadrature) for k in range(tree.depth)]
    levels.append(prob.leaf_values())
    return NodeField(tree, levels)


def solve_value_iteration(prob: DirichletProblem, tol: float = 1e-12,
                          max_iter: int = 200_000) -> tuple[NodeField, SolveReport]:
    """Jacobi iteration of u <- beta*u(parent) + (1-beta)*mean(children) + h."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    t0 = time.perf_counter()
    h = prob.h_field()
    u = boundary_extension(prob)
    K = prob.tree.depth
    history = []
    for it in range(1, max_iter + 1):
        eq = equation_branch(u, prob.beta, h)
        delta = max(float(np.max(np.abs(eq[k] - u.levels[k]))) for k in range(K))
        u = NodeField(prob.tree, eq + [u.levels[K]])
        history.append(delta)
        if converged(history, tol, 1.0 + u.max_abs()):
            break
    else:
        raise MaxIterExceeded(f"value iteration did not reach {tol:g} in {max_iter} sweeps",
                              last=u, residual=history[-1])
    res = sup_residual(u, prob.beta, h)
    if res > tol * c_beta(prob.params) * 10:
        raise ResidualCheckFailed(f"value iteration residual {res:.3g} above {10 * tol:g}*c_beta")
    return u, SolveReport("value_iteration", it, res, time.perf_counter() - t0, history=history)
