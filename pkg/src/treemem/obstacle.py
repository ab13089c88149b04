"""Obstacle problems from below and from above, in complementarity form.

From below:  0 = max{ -(L u - h), phi - u }  on interior nodes, u = f(psi) on leaves.
From above:  0 = min{ -(L v - h), phi - v }  on interior nodes, v = g(psi) on leaves.

Two solvers are provided. ``method="jacobi"`` is the monotone projected
value iteration started from a supersolution above phi (resp. a subsolution
below phi); its iterates move monotonically and this is asserted each sweep.
``method="howard"`` is policy iteration: pick the binding branch at every
node, solve the resulting linear system exactly by tree elimination with
active nodes pinned to phi, repeat until the active set is stable. It ends
on the exact solution up to rounding, which is what the two membranes outer
loop needs for its 1e-12 monotonicity checks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import MaxIterExceeded, MonotonicityViolated, SeparationViolated
from .operators import equation_branch
from .single import DirichletProblem, SolveReport, converged, eliminate
from .tree import NodeField, NodeId

BELOW = "below"
ABOVE = "above"

#: default contact threshold, relative: |u - phi| <= tol * (1 + |u|)
CONTACT_TOL = 1e-9

#: policy switch margin in Howard iteration, relative to 1 + max|u|
SWITCH_TOL = 1e-13


@dataclass
class ObstacleProblem:
    base: DirichletProblem
    obstacle: NodeField
    side: str = BELOW

    def __post_init__(self):
        if self.side not in (BELOW, ABOVE):
            raise ValueError(f"side must be 'below' or 'above', got {self.side!r}")
        if self.obstacle.tree != self.base.tree:
            raise ValueError("obstacle field lives on a different tree")

    def check_separation(self) -> None:
        K = self.base.tree.depth
        leaf = self.base.leaf_values()
        phi = self.obstacle.levels[K]
        bad = phi >= leaf if self.side == BELOW else phi <= leaf
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            rel = "<" if self.side == BELOW else ">"
            raise SeparationViolated(
                f"obstacle must be {rel} boundary data on every leaf; fails at leaf {i}: "
                f"phi={phi[i]:.17g}, datum={leaf[i]:.17g}"
            )


def _branches(u: NodeField, op: ObstacleProblem):
    """(eq - u, phi - u) per interior level; eq - u equals -(L u - h)."""
    eq = equation_branch(u, op.base.beta, op.base.h_field())
    K = u.tree.depth
    r_eq = [eq[k] - u.levels[k] for k in range(K)]
    r_ob = [op.obstacle.levels[k] - u.levels[k] for k in range(K)]
    return eq, r_eq, r_ob


def complementarity_levels(u: NodeField, op: ObstacleProblem) -> list[np.ndarray]:
    """Signed complementarity expression per interior level (max-form below, min-form above)."""
    _, r_eq, r_ob = _branches(u, op)
    pick = np.maximum if op.side == BELOW else np.minimum
    return [pick(a, b) for a, b in zip(r_eq, r_ob)]


def complementarity_residual(u: NodeField, op: ObstacleProblem) -> float:
    return max(float(np.max(np.abs(r))) for r in complementarity_levels(u, op))


def contact_nodes(u: NodeField, phi: NodeField, contact_tol: float = CONTACT_TOL) -> list[NodeId]:
    out = []
    for k in range(u.tree.depth):
        hit = np.abs(u.levels[k] - phi.levels[k]) <= contact_tol * (1.0 + np.abs(u.levels[k]))
        out.extend(NodeId(k, int(i)) for i in np.flatnonzero(hit))
    return out


def _start(op: ObstacleProblem) -> NodeField:
    """Free solution shifted by a constant until it clears the obstacle.

    Constants are L-harmonic, so with leaves kept at the boundary data this is
    a supersolution (from below) or subsolution (from above).
    """
    base = op.base
    free = eliminate(base.tree, base.beta, base.h_field(), base.leaf_values())
    K = base.tree.depth
    if op.side == BELOW:
        gap = max(float(np.max(op.obstacle.levels[k] - free.levels[k])) for k in range(K))
    else:
        gap = max(float(np.max(free.levels[k] - op.obstacle.levels[k])) for k in range(K))
    shift = max(0.0, gap)
    sign = 1.0 if op.side == BELOW else -1.0
    levels = [a + sign * shift for a in free.levels[:K]] + [free.levels[K]]
    return NodeField(base.tree, levels)


def _jacobi(op: ObstacleProblem, tol: float, max_iter: int, monotone_tol: float = 1e-12):
    u = _start(op)
    K = u.tree.depth
    pick = np.maximum if op.side == BELOW else np.minimum
    history = []
    for it in range(1, max_iter + 1):
        eq, _, _ = _branches(u, op)
        new = [pick(eq[k], op.obstacle.levels[k]) for k in range(K)]
        scale = 1.0 + max(float(np.max(np.abs(a))) for a in u.levels)
        for k in range(K):
            step = new[k] - u.levels[k]
            worst = step.max() if op.side == BELOW else -step.min()
            if worst > monotone_tol * scale:
                raise MonotonicityViolated(
                    f"obstacle iterate moved the wrong way by {worst:.3g} at level {k}, sweep {it}"
                )
        delta = max(float(np.max(np.abs(new[k] - u.levels[k]))) for k in range(K))
        u = NodeField(u.tree, new + [u.levels[K]])
        history.append(delta)
        if converged(history, tol, 1.0 + u.max_abs()):
            return u, it, history
    raise MaxIterExceeded(f"obstacle iteration did not reach {tol:g} in {max_iter} sweeps",
                          last=u, residual=history[-1])


def _howard(op: ObstacleProblem, max_iter: int):
    base = op.base
    tree = base.tree
    K = tree.depth
    h = base.h_field()
    leaf = base.leaf_values()
    free = eliminate(tree, base.beta, h, leaf)
    if op.side == BELOW:
        pinned = [op.obstacle.levels[k] > free.levels[k] for k in range(K)]
    else:
        pinned = [op.obstacle.levels[k] < free.levels[k] for k in range(K)]
    pinned.append(np.zeros(tree.m**K, dtype=bool))
    u = eliminate(tree, base.beta, h, leaf, pinned, op.obstacle)
    history = []
    for it in range(1, max_iter + 1):
        _, r_eq, r_ob = _branches(u, op)
        # switch a node only on a clear preference; rounding-level ties keep
        # the current policy, otherwise the loop can flip between two policies
        eps = SWITCH_TOL * (1.0 + u.max_abs())
        new = []
        for k in range(K):
            gain = r_ob[k] - r_eq[k] if op.side == BELOW else r_eq[k] - r_ob[k]
            new.append(np.where(gain > eps, True, np.where(gain < -eps, False, pinned[k])))
        new.append(pinned[K])
        changed = sum(int(np.count_nonzero(a != b)) for a, b in zip(new, pinned))
        history.append(changed)
        if changed == 0:
            return u, it, history
        pinned = new
        u = eliminate(tree, base.beta, h, leaf, pinned, op.obstacle)
    raise MaxIterExceeded(f"policy iteration did not settle in {max_iter} rounds", last=u)


def _solve(op: ObstacleProblem, side: str, tol: float, max_iter: int, method: str):
    if op.side != side:
        raise ValueError(f"expected an obstacle problem from {side}, got {op.side}")
    op.check_separation()
    t0 = time.perf_counter()
    if method == "howard":
        u, it, history = _howard(op, max_iter)
    elif method == "jacobi":
        u, it, history = _jacobi(op, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = complementarity_residual(u, op)
    report = SolveReport(f"obstacle_{side}/{method}", it, res, time.perf_counter() - t0, history=history,
                         extra={"contacts": len(contact_nodes(u, op.obstacle))})
    return u, report


def solve_below(op: ObstacleProblem, tol: float = 1e-10, max_iter: int = 200_000,
                method: str = "howard") -> tuple[NodeField, SolveReport]:
    return _solve(op, BELOW, tol, max_iter, method)


def solve_above(op: ObstacleProblem, tol: float = 1e-10, max_iter: int = 200_000,
                method: str = "howard") -> tuple[NodeField, SolveReport]:
    return _solve(op, ABOVE, tol, max_iter, method)
