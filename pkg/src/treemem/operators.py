"""The averaging operator L, its constants, and the source series S_h.

With rho = beta / (1 - beta), the source series of a node x is

    S_h(x) = (1/beta) * sum_{i>=1} sum_{j=0}^{i-1} rho^(i-j) * A_j(x)

where A_j(x) is the mean of h over the m^j descendants of x at distance j.
Swapping the two sums, each A_j collects sum_{i>j} rho^(i-j) = rho/(1-rho),
and rho / ((1-rho) * beta) = (c_beta - 1) / beta = 1 / (1 - 2 beta).  Hence

    S_h(x) = sum_{j>=0} A_j(x) / (1 - 2 beta),

which is what :func:`s_h` evaluates (levels j <= D exactly, the rest bounded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BetaZeroSeries, TailUnbounded
from .funcspec import FuncSpec, QuadratureParams, SourceTable, simpson_means
from .tree import NodeField, NodeId, TruncatedTree, ancestor, child_mean, psi_level, subtree_mean

#: per-level enumeration cap used when averaging h over deep descendants
SH_LEVEL_CAP = 2**22


@dataclass(frozen=True)
class OperatorParams:
    beta: float
    m: int

    def __post_init__(self):
        if not (0.0 <= self.beta < 0.5):
            raise ValueError(f"beta must lie in [0, 1/2), got {self.beta}")
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")

    @property
    def rho(self) -> float:
        return self.beta / (1.0 - self.beta)

    @property
    def c_beta(self) -> float:
        return c_beta(self)


def c_beta(p: OperatorParams) -> float:
    return (1.0 - p.beta) / (1.0 - 2.0 * p.beta)


def sh_weight(beta: float) -> float:
    """Weight of every level mean in S_h; finite (= 1) in the beta -> 0 limit."""
    return 1.0 / (1.0 - 2.0 * beta)


# --- L and its vectorized forms ----------------------------------------------

def apply_L(u: NodeField, p: OperatorParams, n: NodeId, h_at_n: float, tree: TruncatedTree) -> float:
    """L(u)(n) - h(n) at an interior node."""
    if n.level >= tree.depth:
        raise ValueError("L is not applied at truncation leaves")
    m = tree.m
    kids = u.levels[n.level + 1][m * n.index:m * (n.index + 1)]
    mean_kids = float(kids.sum() / m)
    if n.level == 0:
        return u[n] - mean_kids - h_at_n
    par = float(u.levels[n.level - 1][n.index // m])
    return u[n] - p.beta * par - (1.0 - p.beta) * mean_kids - h_at_n


def equation_branch(u: NodeField, beta: float, h: NodeField) -> list[np.ndarray]:
    """beta*u(parent) + (1-beta)*mean(children) + h, per interior level.

    The root entry uses the root form (children only).
    """
    m, K = u.tree.m, u.tree.depth
    out = [child_mean(u.levels[1], m) + h.levels[0]]
    for k in range(1, K):
        out.append(
            beta * np.repeat(u.levels[k - 1], m)
            + (1.0 - beta) * child_mean(u.levels[k + 1], m)
            + h.levels[k]
        )
    return out


def residual_levels(u: NodeField, beta: float, h: NodeField) -> list[np.ndarray]:
    """L(u) - h per interior level."""
    eq = equation_branch(u, beta, h)
    return [u.levels[k] - eq[k] for k in range(u.tree.depth)]


def sup_residual(u: NodeField, beta: float, h: NodeField) -> float:
    return max(float(np.max(np.abs(r))) for r in residual_levels(u, beta, h))


# --- sources -----------------------------------------------------------------

def source_field(h, tree: TruncatedTree) -> NodeField:
    return NodeField(tree, [h.level_values(k, tree.m) for k in range(tree.depth + 1)])


def _level_only(h) -> bool:
    return isinstance(h, FuncSpec) and not h.depends_on_s


class _LevelCache:
    def __init__(self, h, m: int):
        self.h, self.m = h, m
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, k: int) -> np.ndarray:
        if k not in self._cache:
            self._cache[k] = self.h.level_values(k, self.m)
        return self._cache[k]


def level_means(h, m: int, k: int, j: int, cache=None, cap: int = SH_LEVEL_CAP,
                q: QuadratureParams = QuadratureParams(16)) -> tuple[np.ndarray, bool]:
    """A_j for every level-k node: the mean of h over its level-(k+j) descendants.

    Exact by enumeration while m^(k+j) <= cap. Past the cap, expression sources
    fall back to a Simpson average of ``s -> h(k+j, s)`` over each interval
    (second flag True); tables past the cap are an error.
    """
    if _level_only(h):
        value = float(h.evaluate(k=float(k + j), s=0.0))
        return np.full(m**k, value), False
    if m ** (k + j) <= cap:
        vals = cache(k + j) if cache is not None else h.level_values(k + j, m)
        return subtree_mean(vals, m, j), False
    fn = h.level_function(k + j)
    if fn is None:
        raise ValueError(f"source table too deep to enumerate at level {k + j}")
    return simpson_means(fn, psi_level(k, m), m ** (-k), q.panels), True


def tail_envelope(h, m: int, start_level: int, probe: int = 8, grid: int = 2049) -> tuple[float, float, bool]:
    """Estimate (sup|h| at ``start_level``, decay ratio, is_estimate) for levels >= start.

    The envelope is sup_s |h(l, s)|; level-only expressions give it exactly,
    s-dependent ones on a fixed grid of s (an estimate). The ratio is the
    largest observed level-to-level ratio over ``probe`` levels.
    """
    if isinstance(h, SourceTable):
        if start_level > h.max_level:
            return 0.0, 0.0, False
        env = [float(np.max(np.abs(h.level_values(k, m)))) for k in range(start_level, h.max_level + 1)]
        # a table is zero past its last level: the tail is a finite sum
        return sum(env), 0.0, False
    s = np.linspace(0.0, 1.0, grid)
    env = []
    for lvl in range(start_level, start_level + probe):
        vals = h.evaluate(k=float(lvl), s=s)
        env.append(float(np.max(np.abs(vals))))
    if env[0] == 0.0 and all(e == 0.0 for e in env):
        return 0.0, 0.0, h.depends_on_s
    ratios = []
    for a, b in zip(env, env[1:]):
        if a == 0.0:
            ratios.append(math.inf if b > 0 else 0.0)
        else:
            ratios.append(b / a)
    return env[0], max(ratios), h.depends_on_s


@dataclass(frozen=True)
class ShTruncation:
    value: float
    tail_bound: float
    depth_used: int
    approximate_levels: int = 0


def s_h(h, n: NodeId, p: OperatorParams, max_extra_depth: int = 12, h_sup_tail: float = 0.0,
        tail_ratio: float = 1.0, cap: int = 2**16) -> ShTruncation:
    """S_h at one node, summing descendant levels j = 0..max_extra_depth.

    ``h_sup_tail`` bounds |h| on the first omitted level and ``tail_ratio`` is
    a geometric decay factor for the levels after it, so the omitted part is
    at most h_sup_tail / ((1 - 2 beta) * (1 - tail_ratio)).
    """
    if p.beta == 0.0:
        raise BetaZeroSeries("S_h has 0*inf shape at beta = 0; use the beta = 0 specialization")
    if max_extra_depth < 1:
        raise ValueError("max_extra_depth must be >= 1")
    if not math.isfinite(h_sup_tail) or h_sup_tail < 0:
        raise TailUnbounded(f"h_sup_tail must be finite and >= 0, got {h_sup_tail}")
    if h_sup_tail == 0.0:
        tail = 0.0
    elif tail_ratio >= 1.0:
        raise TailUnbounded("nonzero tail with no decay: S_h diverges")
    else:
        tail = sh_weight(p.beta) * h_sup_tail / (1.0 - tail_ratio)
    total, approx = _node_level_sum(h, n, p.m, max_extra_depth, cap)
    return ShTruncation(sh_weight(p.beta) * total, tail, max_extra_depth, approx)


def _node_level_sum(h, n: NodeId, m: int, depth: int, cap: int) -> tuple[float, int]:
    """sum_{j=0}^{depth} A_j(n) for a single node."""
    total = 0.0
    approx = 0
    for j in range(depth + 1):
        lvl = n.level + j
        if _level_only(h):
            total += float(h.evaluate(k=float(lvl), s=0.0))
            continue
        width = m**j
        if width <= cap:
            idx = np.arange(n.index * width, (n.index + 1) * width, dtype=np.float64)
            if isinstance(h, SourceTable):
                vals = h.level_values(lvl, m)[n.index * width:(n.index + 1) * width]
            else:
                vals = np.broadcast_to(h.evaluate(k=float(lvl), s=idx / float(m**lvl)), idx.shape)
            total += float(vals.sum() / width)
        else:
            fn = h.level_function(lvl)
            if fn is None:
                raise ValueError(f"source table too deep to enumerate at level {lvl}")
            lo = n.index / m**n.level
            total += float(simpson_means(fn, np.array([lo]), m ** (-n.level), 16)[0])
            approx += 1
    return total, approx


@dataclass
class ShLevels:
    """S_h for every node of levels 0..K with per-level tail bounds."""

    values: list[np.ndarray]
    tails: list[float]
    depth: int
    approximate_levels: int = 0
    tail_is_estimate: bool = False


def sh_levels(h, beta: float, m: int, K: int, depth: int = 12, cap: int = SH_LEVEL_CAP) -> ShLevels:
    """Vectorized S_h over whole levels 0..K, truncated ``depth`` levels below each node."""
    weight = sh_weight(beta)
    cache = _LevelCache(h, m)
    values, tails = [], []
    approx = 0
    estimate = False
    for k in range(K + 1):
        acc = np.zeros(m**k)
        for j in range(depth + 1):
            a, was_approx = level_means(h, m, k, j, cache, cap)
            acc += a
            approx += was_approx
        values.append(weight * acc)
        sup0, ratio, est = tail_envelope(h, m, k + depth + 1)
        estimate |= est
        if sup0 == 0.0:
            tails.append(0.0)
        elif ratio >= 1.0:
            raise TailUnbounded(
                f"source does not decay below level {k + depth + 1} (ratio {ratio:.3g}); S_h diverges"
            )
        else:
            tails.append(weight * sup0 / (1.0 - ratio))
    return ShLevels(values, tails, depth, approx, estimate)


# --- solvability ---------------------------------------------------------------

@dataclass
class SolvabilityReport:
    passes: bool
    trace: list[float]
    reason: str
    tol: float
    probed_nodes: int
    heuristic: bool = True
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passes": self.passes,
            "trace": list(self.trace),
            "reason": self.reason,
            "tol": self.tol,
            "probed_nodes": self.probed_nodes,
            "heuristic": self.heuristic,
            "notes": list(self.notes),
        }


def _probe_leaves(m: int, depth: int, full_cap: int, samples: int) -> list[int]:
    n = m**depth
    if n <= full_cap:
        return list(range(n))
    # extremal digit strings plus psi-equispaced paths
    picks = {0, n - 1}
    for t in range(samples):
        picks.add(round(t * (n - 1) / (samples - 1)))
    return sorted(picks)


def solvability_check(h, p: OperatorParams, probe_depth: int = 12, sh_depth: int = 12,
                      tol: float = 1e-3, contraction: float = 0.9, full_cap: int = 4096,
                      samples: int = 64) -> SolvabilityReport:
    """Numerical evidence for lim_{|x|=k} sum_{j=1..k} rho^(k-j) S_h(x^j) = 0.

    T(k) is the largest |Q_k(x)| over probed level-k nodes, with
    Q_k(x) = S_h(x) + rho * Q_{k-1}(parent(x)).  The check passes when T is
    non-increasing from level 3 on and either T(probe_depth) < tol or the
    last third of the trace contracts geometrically (every ratio <=
    ``contraction``).  This is a heuristic for a limit, not a proof.
    """
    if probe_depth < 3:
        raise ValueError("probe_depth must be >= 3")
    m, rho = p.m, p.rho
    weight = sh_weight(p.beta)
    notes = []
    if p.beta == 0.0:
        notes.append("beta = 0: using the limit S_h = sum_j A_j (rho^0 = 1 only)")
    leaves = _probe_leaves(m, probe_depth, full_cap, samples)
    full = len(leaves) == m**probe_depth
    trace = []
    approx = 0
    if full:
        cache = _LevelCache(h, m)
        q_prev = np.zeros(1)
        for k in range(1, probe_depth + 1):
            acc = np.zeros(m**k)
            for j in range(sh_depth + 1):
                a, was = level_means(h, m, k, j, cache)
                acc += a
                approx += was
            q = weight * acc + rho * np.repeat(q_prev, m)
            trace.append(float(np.max(np.abs(q))))
            q_prev = q
        probed = sum(m**k for k in range(1, probe_depth + 1))
    else:
        sh_cache: dict[NodeId, float] = {}
        q_by_leaf = {i: 0.0 for i in leaves}
        probed_set = set()
        for k in range(1, probe_depth + 1):
            best = 0.0
            for i in leaves:
                x = ancestor(NodeId(probe_depth, i), k, m)
                probed_set.add(x)
                if x not in sh_cache:
                    total, a = _node_level_sum(h, x, m, sh_depth, 2**14)
                    approx += a
                    sh_cache[x] = weight * total
                q_by_leaf[i] = sh_cache[x] + rho * q_by_leaf[i]
                best = max(best, abs(q_by_leaf[i]))
            trace.append(best)
        probed = len(probed_set)
    if approx:
        notes.append(f"{approx} deep level means approximated by quadrature")
    passes, reason = _judge(trace, tol, contraction)
    return SolvabilityReport(passes, trace, reason, tol, probed, True, notes)


def _judge(trace: list[float], tol: float, contraction: float) -> tuple[bool, str]:
    tail = trace[2:]
    scale = max(max(trace), 1e-300)
    for a, b in zip(tail, tail[1:]):
        if b > a + 1e-12 * scale:
            return False, "trace increases after level 3"
    if trace[-1] < tol:
        return True, f"trace non-increasing and T(end) = {trace[-1]:.3g} < tol"
    third = tail[-max(2, len(tail) // 3):]
    ratios = [b / a for a, b in zip(third, third[1:]) if a > 0]
    if ratios and max(ratios) <= contraction:
        return True, f"trace contracts geometrically (max ratio {max(ratios):.3g})"
    return False, f"T(end) = {trace[-1]:.3g} >= tol without geometric contraction"
