"""The two membranes system on a truncated tree.

Find (u, v) with u = f, v = g on the leaves and, at every interior node,

    0 = max{ -(L1 u - h1), v - u },    0 = min{ -(L2 v - h2), u - v }.

``solve_alternating`` iterates obstacle problems: u_n is the obstacle
solution from below with obstacle v_{n-1}, v_n the one from above with
obstacle u_n. ``solve_coupled`` runs the joint fixed point map
(u, v) -> (max{eq1(u), v}, min{eq2(v), u}) directly. That map is monotone
in (u, v), so started below a fixed point it climbs to the least one.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import MaxIterExceeded, MonotonicityViolated, SeparationViolated
from .funcspec import FuncSpec, QuadratureParams
from .obstacle import ABOVE, BELOW, CONTACT_TOL, ObstacleProblem, complementarity_residual, solve_above, solve_below
from .operators import OperatorParams, SolvabilityReport, equation_branch, solvability_check
from .single import DirichletProblem, build_subsolution, converged, eliminate, solve_direct
from .tree import NodeField, NodeId, TruncatedTree

#: slack for the per-node monotonicity and boundedness checks
MONOTONE_TOL = 1e-12
BOUND_TOL = 1e-10

DEGENERATE_NOTE = "separation=0, finiteness claim not applicable"


@dataclass
class TmpSpec:
    tree: TruncatedTree
    params1: OperatorParams
    params2: OperatorParams
    h1: object
    h2: object
    f: FuncSpec
    g: FuncSpec
    quadrature: QuadratureParams = field(default_factory=QuadratureParams)
    separation: float = field(init=False)

    def __post_init__(self):
        self.base1 = DirichletProblem(self.tree, self.params1, self.h1, self.f, self.quadrature)
        self.base2 = DirichletProblem(self.tree, self.params2, self.h2, self.g, self.quadrature)
        gap = self.base1.leaf_values() - self.base2.leaf_values()
        self.separation = float(gap.min())
        if self.separation < 0:
            i = int(np.argmin(gap))
            raise SeparationViolated(f"f < g at leaf {i}: f - g = {self.separation:.17g}")
        self._solvability: Optional[tuple[SolvabilityReport, SolvabilityReport]] = None

    @property
    def degenerate(self) -> bool:
        return self.separation == 0.0

    def with_depth(self, depth: int) -> "TmpSpec":
        tree = TruncatedTree(self.tree.m, depth, self.tree.max_level_nodes)
        return replace(self, tree=tree)

    def solvability(self, probe_depth: int = 12) -> tuple[SolvabilityReport, SolvabilityReport]:
        if self._solvability is None:
            self._solvability = (solvability_check(self.h1, self.params1, probe_depth),
                                 solvability_check(self.h2, self.params2, probe_depth))
        return self._solvability

    def solvability_warnings(self) -> list[str]:
        out = []
        for name, rep in zip(("(beta1, h1)", "(beta2, h2)"), self.solvability()):
            if not rep.passes:
                out.append(f"solvability check fails for {name}: {rep.reason}")
        return out


@dataclass(frozen=True)
class Certificate:
    max_contact_level: int
    empty_beyond: bool
    per_level: tuple

    def to_dict(self) -> dict:
        return {"max_contact_level": self.max_contact_level, "empty_beyond": self.empty_beyond,
                "contacts_per_level": list(self.per_level)}


@dataclass(frozen=True)
class TmpSolution:
    u: NodeField
    v: NodeField
    coincidence: tuple
    certificate: Certificate
    iteration_history: tuple
    residuals: tuple
    method: str
    iterations: int
    elapsed: float
    notes: tuple = ()
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "iterations": self.iterations,
            "residual_u": self.residuals[0],
            "residual_v": self.residuals[1],
            "elapsed": self.elapsed,
            "contacts": len(self.coincidence),
            "certificate": self.certificate.to_dict(),
            "iteration_history": [list(d) for d in self.iteration_history],
            "notes": list(self.notes),
        }
        out.update(self.extra)
        return out


def system_residuals(spec: TmpSpec, u: NodeField, v: NodeField) -> tuple[float, float]:
    r_u = complementarity_residual(u, ObstacleProblem(spec.base1, v, BELOW))
    r_v = complementarity_residual(v, ObstacleProblem(spec.base2, u, ABOVE))
    return r_u, r_v


def coincidence_set(u: NodeField, v: NodeField, contact_tol: float = CONTACT_TOL) -> tuple[list[NodeId], Certificate]:
    """Nodes with |u - v| <= contact_tol * (1 + |u|), and a finiteness certificate.

    ``empty_beyond`` is true when no contact reaches level K-1 or the
    leaves, so the contact set stays strictly inside the truncation.
    """
    K = u.tree.depth
    nodes, per_level = [], []
    for k in range(K + 1):
        hit = np.abs(u.levels[k] - v.levels[k]) <= contact_tol * (1.0 + np.abs(u.levels[k]))
        idx = np.flatnonzero(hit)
        per_level.append(int(idx.size))
        nodes.extend(NodeId(k, int(i)) for i in idx)
    levels = [k for k, c in enumerate(per_level) if c]
    top = max(levels) if levels else -1
    return nodes, Certificate(top, top <= K - 2, tuple(per_level))


def _notes(spec: TmpSpec, check_solvability: bool) -> list[str]:
    notes = []
    if spec.degenerate:
        notes.append(DEGENERATE_NOTE)
    if check_solvability:
        for w in spec.solvability_warnings():
            warnings.warn(w, stacklevel=3)
            notes.append(w)
    return notes


def _finish(spec, u, v, history, method, iterations, t0, notes, contact_tol, extra=None) -> TmpSolution:
    nodes, cert = coincidence_set(u, v, contact_tol)
    return TmpSolution(u, v, tuple(nodes), cert, tuple(history), system_residuals(spec, u, v), method,
                       iterations, time.perf_counter() - t0, tuple(notes), extra or {})


def _check_step(new: NodeField, old: NodeField, name: str, n: int) -> float:
    """Smallest per-node increment; raises if any node decreased beyond slack."""
    low = min(float(np.min(a - b)) for a, b in zip(new.levels, old.levels))
    if low < -MONOTONE_TOL:
        raise MonotonicityViolated(f"{name}_{n} fell below {name}_{n - 1} by {-low:.3g}")
    return low


def upper_bound(spec: TmpSpec, method: str = "howard") -> NodeField:
    """The bound for the u-sequence: obstacle solution from below under the free v."""
    w, _ = solve_direct(spec.base2)
    rho_bar, _ = solve_below(ObstacleProblem(spec.base1, w, BELOW), method=method)
    return rho_bar


def initial_subsolution(spec: TmpSpec, lift: float = 0.0, shift: float = 0.0) -> NodeField:
    """Exact solution of the second equation with its source lowered.

    ``lift`` lowers the root source only, ``shift`` every interior source.
    Both must be <= 0; the result is then a subsolution below the free one.
    """
    if shift > 0:
        raise ValueError("subsolution shift must be <= 0")
    if shift == 0.0:
        return build_subsolution(spec.base2, lift)
    h = spec.base2.h_field() + shift
    h.levels[0][0] += lift
    return eliminate(spec.tree, spec.params2.beta, h, spec.base2.leaf_values())


def solve_alternating(spec: TmpSpec, tol: float = 1e-10, max_outer: int = 1000, v0_lift: float = 0.0,
                      v0_shift: float = 0.0, method: str = "howard", contact_tol: float = CONTACT_TOL,
                      check_solvability: bool = True, record: bool = False) -> TmpSolution:
    """Alternate obstacle solves starting from a subsolution of the second equation.

    The start is ``initial_subsolution(spec, v0_lift, v0_shift)``; with both
    at 0 it is the free solution of the second equation.
    Each outer step asserts that u_n and v_n did not decrease and that u_n
    stays below the explicit bound. With ``record=True`` the iterates are
    kept in ``extra["iterates"]``.
    """
    if spec.degenerate:
        raise SeparationViolated("alternating obstacle solves need f > g on every leaf")
    t0 = time.perf_counter()
    notes = _notes(spec, check_solvability)
    inner = tol / 10.0
    bound = upper_bound(spec, method)
    v = initial_subsolution(spec, v0_lift, v0_shift)
    u = None
    history = []
    increments = []
    iterates = [(None, v)] if record else None
    for n in range(1, max_outer + 1):
        u_new, _ = solve_below(ObstacleProblem(spec.base1, v, BELOW), inner, method=method)
        v_new, _ = solve_above(ObstacleProblem(spec.base2, u_new, ABOVE), inner, method=method)
        du = u_new.sup_dist(u) if u is not None else float("inf")
        inc_u = _check_step(u_new, u, "u", n) if u is not None else None
        inc_v = _check_step(v_new, v, "v", n)
        over = max(float(np.max(a - b)) for a, b in zip(u_new.levels, bound.levels))
        if over > BOUND_TOL:
            raise MonotonicityViolated(f"u_{n} exceeds the explicit bound by {over:.3g}")
        dv = v_new.sup_dist(v)
        history.append((du, dv))
        increments.append((inc_u, inc_v, over))
        u, v = u_new, v_new
        if record:
            iterates.append((u, v))
        if du < tol and dv < tol:
            break
    else:
        raise MaxIterExceeded(f"alternating iteration did not settle in {max_outer} outer steps",
                              last=(u, v), residual=history[-1])
    extra = {"bound_max_excess": max(o for _, _, o in increments), "v0_lift": v0_lift, "v0_shift": v0_shift,
             "inner_method": method}
    if record:
        extra["iterates"] = iterates
        extra["bound"] = bound
        extra["increments"] = increments
    return _finish(spec, u, v, history, "alternating", n, t0, notes, contact_tol, extra)


def solve_coupled(spec: TmpSpec, tol: float = 1e-10, max_iter: int = 200_000,
                  contact_tol: float = CONTACT_TOL, check_solvability: bool = True) -> TmpSolution:
    """Joint value iteration, started below the solution and climbing.

    Start: u = v = the free solution of the second equation on interior
    nodes, with leaves at f and g. There max{eq1(u), v} >= u and
    min{eq2(v), u} = v, so the start lies below its image and every sweep
    is non-decreasing (asserted).
    """
    t0 = time.perf_counter()
    notes = _notes(spec, check_solvability)
    tree, K = spec.tree, spec.tree.depth
    h1, h2 = spec.base1.h_field(), spec.base2.h_field()
    v_free = eliminate(tree, spec.params2.beta, h2, spec.base2.leaf_values())
    u = NodeField(tree, [a.copy() for a in v_free.levels[:K]] + [spec.base1.leaf_values()])
    v = v_free.copy()
    history = []
    for it in range(1, max_iter + 1):
        e1 = equation_branch(u, spec.params1.beta, h1)
        e2 = equation_branch(v, spec.params2.beta, h2)
        nu = [np.maximum(e1[k], v.levels[k]) for k in range(K)]
        nv = [np.minimum(e2[k], u.levels[k]) for k in range(K)]
        low = min(min(float(np.min(nu[k] - u.levels[k])), float(np.min(nv[k] - v.levels[k])))
                  for k in range(K))
        if low < -MONOTONE_TOL * (1.0 + u.max_abs()):
            raise MonotonicityViolated(f"coupled sweep {it} decreased by {-low:.3g}")
        delta = max(max(float(np.max(np.abs(nu[k] - u.levels[k]))), float(np.max(np.abs(nv[k] - v.levels[k]))))
                    for k in range(K))
        u = NodeField(tree, nu + [u.levels[K]])
        v = NodeField(tree, nv + [v.levels[K]])
        history.append(delta)
        if converged(history, tol, 1.0 + u.max_abs()):
            break
    else:
        raise MaxIterExceeded(f"coupled iteration did not reach {tol:g} in {max_iter} sweeps",
                              last=(u, v), residual=history[-1])
    return _finish(spec, u, v, [(d,) for d in history], "coupled", it, t0, notes, contact_tol)
