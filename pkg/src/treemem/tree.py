"""Addressing and geometry of the truncated m-regular tree.

A vertex is addressed by ``(level, index)`` where ``index`` is the base-m
number whose digits, most significant first, are the branch choices taken
from the root. Values on the tree live in :class:`NodeField`, one contiguous
array per level, so parent/child lookups become ``repeat``/``reshape``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import LeafHasNoChildren, RootHasNoParent

#: default cap on the number of nodes in one level (memory predictability)
MAX_LEVEL_NODES = 2**26


@dataclass(frozen=True, order=True)
class NodeId:
    level: int
    index: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"level must be >= 0, got {self.level}")
        if self.index < 0:
            raise ValueError(f"index must be >= 0, got {self.index}")
        if self.level == 0 and self.index != 0:
            raise ValueError("the root has index 0")

    @classmethod
    def checked(cls, level: int, index: int, m: int) -> "NodeId":
        if not 0 <= index < m**level:
            raise ValueError(f"index {index} out of range for level {level}, m={m}")
        return cls(level, index)

    @property
    def is_root(self) -> bool:
        return self.level == 0


ROOT = NodeId(0, 0)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi <= 1.0):
            raise ValueError(f"bad interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class TruncatedTree:
    """Levels ``0..depth`` of the m-regular tree; level ``depth`` holds the leaves."""

    m: int
    depth: int
    max_level_nodes: int = MAX_LEVEL_NODES

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"branching factor must be >= 2, got {self.m}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.m**self.depth > self.max_level_nodes:
            raise ValueError(
                f"m^K = {self.m}^{self.depth} exceeds the per-level cap "
                f"{self.max_level_nodes}"
            )

    @property
    def n_nodes(self) -> int:
        return (self.m ** (self.depth + 1) - 1) // (self.m - 1)

    def level_size(self, k: int) -> int:
        return self.m**k

    def node(self, level: int, index: int) -> NodeId:
        if not 0 <= level <= self.depth:
            raise ValueError(f"level {level} outside 0..{self.depth}")
        return NodeId.checked(level, index, self.m)

    def nodes(self, level: int | None = None) -> Iterator[NodeId]:
        levels = range(self.depth + 1) if level is None else [level]
        for k in levels:
            for i in range(self.m**k):
                yield NodeId(k, i)

    def contains(self, n: NodeId) -> bool:
        return n.level <= self.depth and n.index < self.m**n.level


def parent(n: NodeId, m: int) -> NodeId:
    if n.level == 0:
        raise RootHasNoParent("the root has no parent")
    return NodeId(n.level - 1, n.index // m)


def children(n: NodeId, tree: TruncatedTree) -> list[NodeId]:
    if n.level >= tree.depth:
        raise LeafHasNoChildren(f"{n} is a leaf of a depth-{tree.depth} tree")
    m = tree.m
    return [NodeId(n.level + 1, m * n.index + i) for i in range(m)]


def ancestor(n: NodeId, level: int, m: int) -> NodeId:
    """The predecessor of ``n`` at ``level`` (``x^j`` in tree notation)."""
    if not 0 <= level <= n.level:
        raise ValueError(f"no ancestor of {n} at level {level}")
    return NodeId(level, n.index // m ** (n.level - level))


def digits(n: NodeId, m: int) -> tuple[int, ...]:
    """Branch digits a_1..a_k, most significant first."""
    out = []
    idx = n.index
    for _ in range(n.level):
        idx, d = divmod(idx, m)
        out.append(d)
    return tuple(reversed(out))


def from_digits(ds: Sequence[int], m: int) -> NodeId:
    idx = 0
    for d in ds:
        if not 0 <= d < m:
            raise ValueError(f"digit {d} out of range for m={m}")
        idx = idx * m + d
    return NodeId(len(ds), idx)


def psi(n: NodeId, m: int) -> float:
    return n.index / m**n.level


def interval(n: NodeId, m: int) -> Interval:
    lo = psi(n, m)
    return Interval(lo, min(1.0, lo + m ** (-n.level)))


def psi_level(k: int, m: int) -> np.ndarray:
    """psi of every level-k node, in index order."""
    return np.arange(m**k, dtype=np.float64) / float(m**k)


def child_mean(a: np.ndarray, m: int) -> np.ndarray:
    """Mean over each consecutive block of m children (fixed summation order)."""
    return a.reshape(-1, m).sum(axis=1) / m


def subtree_mean(a: np.ndarray, m: int, j: int) -> np.ndarray:
    """Mean over each block of m^j descendants, by repeated child means."""
    for _ in range(j):
        a = child_mean(a, m)
    return a


class NodeField:
    """One float per node of a truncated tree, stored level by level."""

    def __init__(self, tree: TruncatedTree, levels: Sequence[np.ndarray]):
        if len(levels) != tree.depth + 1:
            raise ValueError("need one array per level")
        self.tree = tree
        self.levels = [np.asarray(a, dtype=np.float64) for a in levels]
        for k, a in enumerate(self.levels):
            if a.shape != (tree.m**k,):
                raise ValueError(f"level {k} has shape {a.shape}, expected ({tree.m**k},)")

    @classmethod
    def zeros(cls, tree: TruncatedTree) -> "NodeField":
        return cls(tree, [np.zeros(tree.m**k) for k in range(tree.depth + 1)])

    @classmethod
    def full(cls, tree: TruncatedTree, value: float) -> "NodeField":
        return cls(tree, [np.full(tree.m**k, float(value)) for k in range(tree.depth + 1)])

    @classmethod
    def from_function(cls, tree: TruncatedTree, fn: Callable[[int, np.ndarray], np.ndarray]) -> "NodeField":
        """Build a field from ``fn(level, psi_array)``."""
        levels = []
        for k in range(tree.depth + 1):
            s = psi_level(k, tree.m)
            levels.append(np.broadcast_to(np.asarray(fn(k, s), dtype=np.float64), s.shape).copy())
        return cls(tree, levels)

    def __getitem__(self, n: NodeId) -> float:
        return float(self.levels[n.level][n.index])

    def __setitem__(self, n: NodeId, value: float) -> None:
        self.levels[n.level][n.index] = value

    def copy(self) -> "NodeField":
        return NodeField(self.tree, [a.copy() for a in self.levels])

    def flat(self) -> np.ndarray:
        return np.concatenate(self.levels)

    @classmethod
    def from_flat(cls, tree: TruncatedTree, flat: np.ndarray) -> "NodeField":
        out, start = [], 0
        for k in range(tree.depth + 1):
            n = tree.m**k
            out.append(np.array(flat[start:start + n], dtype=np.float64))
            start += n
        return cls(tree, out)

    def map(self, fn) -> "NodeField":
        return NodeField(self.tree, [fn(a) for a in self.levels])

    def __add__(self, other):
        if isinstance(other, NodeField):
            return NodeField(self.tree, [a + b for a, b in zip(self.levels, other.levels)])
        return NodeField(self.tree, [a + other for a in self.levels])

    def __sub__(self, other):
        if isinstance(other, NodeField):
            return NodeField(self.tree, [a - b for a, b in zip(self.levels, other.levels)])
        return NodeField(self.tree, [a - other for a in self.levels])

    def __neg__(self):
        return NodeField(self.tree, [-a for a in self.levels])

    def __mul__(self, c: float):
        return NodeField(self.tree, [c * a for a in self.levels])

    __rmul__ = __mul__

    def max_abs(self, interior_only: bool = False) -> float:
        levels = self.levels[:-1] if interior_only else self.levels
        return max(float(np.max(np.abs(a))) for a in levels)

    def min(self) -> float:
        return min(float(a.min()) for a in self.levels)

    def max(self) -> float:
        return max(float(a.max()) for a in self.levels)

    def sup_dist(self, other: "NodeField") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.levels, other.levels))

    def __repr__(self):
        return f"NodeField(m={self.tree.m}, depth={self.tree.depth})"
