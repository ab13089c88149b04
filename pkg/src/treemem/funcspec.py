"""Boundary and source functions given as text expressions.

Boundary functions are expressions in ``s`` (a point of [0, 1]); source
functions are expressions in ``k`` (node level) and ``s`` (psi of the node).
The grammar is documented in ``docs/grammar.md``; parsing is a standard
precedence-climbing parser over a small token stream.

Evaluation is vectorized: every variable may be bound to a numpy array.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import NonFiniteValue, ParseError
from .tree import Interval, NodeId, psi, psi_level

log = logging.getLogger(__name__)

BOUNDARY = "boundary"
SOURCE = "source"
KIND_VARS = {BOUNDARY: frozenset({"s"}), SOURCE: frozenset({"k", "s"})}

UNARY_FUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "abs": np.abs}
NARY_FUNCS = {"min": np.minimum, "max": np.maximum}

# binary operators: precedence, right-associative?
BINOPS = {
    "+": (1, False),
    "-": (1, False),
    "*": (2, False),
    "/": (2, False),
    "^": (4, True),
}
UNARY_PREC = 3

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
)


# --- syntax tree -----------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Num, Var, Unary, BinOp, Call]


# --- tokenizer / parser ----------------------------------------------------

def tokenize(text: str) -> list[tuple[str, str, int]]:
    """Split ``text`` into (kind, value, byte_offset) tokens."""
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            break
        mt = _TOKEN_RE.match(text, pos)
        if mt is None:
            raise ParseError(f"unexpected character {text[pos]!r}", len(text[:pos].encode()))
        value = "^" if mt.group() == "**" else mt.group()
        tokens.append((mt.lastgroup, value, len(text[:pos].encode())))
        pos = mt.end()
    tokens.append(("end", "", len(text.encode())))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: frozenset):
        self.tokens = tokenize(text)
        self.pos = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, v, off = self.advance()
        if v != value or kind == "end":
            raise ParseError(f"expected {value!r}, found {v or 'end of input'!r}", off)

    def parse(self) -> Node:
        node = self.expression(0)
        kind, v, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {v!r}", off)
        return node

    def expression(self, min_prec: int) -> Node:
        left = self.unary()
        while True:
            kind, v, _ = self.peek()
            if kind != "op" or v not in BINOPS:
                return left
            prec, right_assoc = BINOPS[v]
            if prec < min_prec:
                return left
            self.advance()
            right = self.expression(prec if right_assoc else prec + 1)
            left = BinOp(v, left, right)

    def unary(self) -> Node:
        kind, v, _ = self.peek()
        if kind == "op" and v in "+-":
            self.advance()
            operand = self.expression(UNARY_PREC)
            return operand if v == "+" else Unary("-", operand)
        return self.primary()

    def primary(self) -> Node:
        kind, v, off = self.advance()
        if kind == "num":
            value = float(v)
            if not math.isfinite(value):
                raise ParseError(f"literal {v!r} overflows", off)
            return Num(value)
        if kind == "name":
            if self.peek()[1] == "(":
                return self.call(v, off)
            if v in UNARY_FUNCS or v in NARY_FUNCS:
                raise ParseError(f"function {v!r} used without arguments", off)
            if v not in self.allowed:
                raise ParseError(f"undeclared variable {v!r}", off)
            return Var(v)
        if kind == "op" and v == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        raise ParseError(f"unexpected {v or 'end of input'!r}", off)

    def call(self, name: str, off: int) -> Node:
        if name not in UNARY_FUNCS and name not in NARY_FUNCS:
            raise ParseError(f"unknown function {name!r}", off)
        self.expect("(")
        args = [self.expression(0)]
        while self.peek()[1] == ",":
            self.advance()
            args.append(self.expression(0))
        self.expect(")")
        if name in UNARY_FUNCS and len(args) != 1:
            raise ParseError(f"{name} takes 1 argument, got {len(args)}", off)
        if name in NARY_FUNCS and len(args) < 2:
            raise ParseError(f"{name} takes at least 2 arguments, got {len(args)}", off)
        return Call(name, tuple(args))


# --- evaluation / printing -------------------------------------------------

def _eval(node: Node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Unary):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return np.add(a, b)
        if node.op == "-":
            return np.subtract(a, b)
        if node.op == "*":
            return np.multiply(a, b)
        if node.op == "/":
            return np.divide(a, b)
        return np.power(np.asarray(a, dtype=np.float64), b)
    fn_args = [_eval(a, env) for a in node.args]
    if node.name in UNARY_FUNCS:
        return UNARY_FUNCS[node.name](fn_args[0])
    out = fn_args[0]
    for a in fn_args[1:]:
        out = NARY_FUNCS[node.name](out, a)
    return out


def to_text(node: Node) -> str:
    """Print an expression so that parsing it back gives the same values."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    return f"{node.name}({', '.join(to_text(a) for a in node.args)})"


def _variables(node: Node) -> frozenset:
    if isinstance(node, Var):
        return frozenset({node.name})
    if isinstance(node, Unary):
        return _variables(node.operand)
    if isinstance(node, BinOp):
        return _variables(node.left) | _variables(node.right)
    if isinstance(node, Call):
        return frozenset().union(*(_variables(a) for a in node.args))
    return frozenset()


@dataclass(frozen=True)
class FuncSpec:
    kind: str
    text: str
    expr: Node = field(repr=False)

    @property
    def variables(self) -> frozenset:
        return _variables(self.expr)

    @property
    def depends_on_s(self) -> bool:
        return "s" in self.variables

    def evaluate(self, **env) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = np.asarray(_eval(self.expr, env), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NonFiniteValue(f"{self.text!r} is not finite at {_first_bad(out, env)}")
        return out

    # source interface shared with SourceTable
    def level_values(self, k: int, m: int) -> np.ndarray:
        s = psi_level(k, m)
        return np.broadcast_to(self.evaluate(k=float(k), s=s), s.shape).copy()

    def level_function(self, k: int):
        """s -> h(k, s) as a vectorized callable, or None when not available."""
        return lambda s: self.evaluate(k=float(k), s=s)

    def __str__(self):
        return self.text


def _first_bad(out, env):
    out = np.asarray(out)
    bad = np.flatnonzero(~np.isfinite(out))
    i = int(bad[0]) if bad.size else 0
    at = {}
    for k, v in env.items():
        v = np.broadcast_to(np.asarray(v, dtype=np.float64), out.shape) if out.ndim else np.asarray(v)
        at[k] = float(v.reshape(-1)[i]) if v.size > 1 else float(v.reshape(-1)[0])
    return at


def parse(text: str, kind: str) -> FuncSpec:
    if kind not in KIND_VARS:
        raise ValueError(f"kind must be 'boundary' or 'source', got {kind!r}")
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    expr = _Parser(text, KIND_VARS[kind]).parse()
    return FuncSpec(kind, text, expr)


def eval_boundary(fs: FuncSpec, s) -> float | np.ndarray:
    if fs.kind != BOUNDARY:
        raise ValueError("eval_boundary needs a boundary function")
    out = np.broadcast_to(fs.evaluate(s=np.asarray(s, dtype=np.float64)), np.shape(s))
    return float(out) if out.ndim == 0 else out.copy()


def eval_source(fs, node: NodeId, m: int) -> float:
    if isinstance(fs, SourceTable):
        return fs.value(node)
    if fs.kind != SOURCE:
        raise ValueError("eval_source needs a source function")
    return float(fs.evaluate(k=float(node.level), s=psi(node, m)))


class SourceTable:
    """A source given node by node, e.g. loaded from ``level,index,value`` CSV.

    Nodes missing from the table are 0; so is everything below the deepest
    tabulated level (a warning is logged the first time that happens).
    """

    kind = SOURCE
    depends_on_s = True

    def __init__(self, entries: dict[tuple[int, int], float], text: str = "<table>"):
        self.entries = {(int(k), int(i)): float(v) for (k, i), v in entries.items()}
        self.text = text
        self.max_level = max((k for k, _ in self.entries), default=-1)
        self._warned = False
        for (k, i), v in self.entries.items():
            if not math.isfinite(v):
                raise NonFiniteValue(f"table value at ({k},{i}) is not finite")

    @classmethod
    def from_csv(cls, path) -> "SourceTable":
        entries = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for row in reader:
                if not row or row[0].strip().startswith("#"):
                    continue
                if row[0].strip() == "level":
                    continue
                k, i, v = row[:3]
                entries[(int(k), int(i))] = float(v)
        return cls(entries, text=str(path))

    def value(self, node: NodeId) -> float:
        return self.entries.get((node.level, node.index), 0.0)

    def level_values(self, k: int, m: int) -> np.ndarray:
        if k > self.max_level and not self._warned:
            log.warning("source table %s has no data beyond level %d; using 0", self.text, self.max_level)
            self._warned = True
        out = np.zeros(m**k)
        for (lk, i), v in self.entries.items():
            if lk == k:
                if i >= m**k:
                    raise ValueError(f"table index {i} out of range at level {k}")
                out[i] = v
        return out

    def level_function(self, k: int):
        return None

    def __str__(self):
        return self.text


# --- quadrature ------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureParams:
    subdivisions: int = 8

    def __post_init__(self):
        if self.subdivisions < 1:
            raise ValueError("subdivisions must be >= 1")

    @property
    def panels(self) -> int:
        # Simpson needs an even number of panels
        return self.subdivisions + (self.subdivisions % 2)


def _simpson_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w


def simpson_means(fn, lo: np.ndarray, width: float, panels: int) -> np.ndarray:
    """Mean of ``fn`` over each ``[lo_i, lo_i + width]`` by composite Simpson.

    Written as ``f(lo) + sum w_j (f_j - f(lo)) / (3n)`` so that constant
    integrands come out bit-exact.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    nodes = lo[:, None] + width * (np.arange(panels + 1) / panels)[None, :]
    vals = np.broadcast_to(fn(nodes), nodes.shape)
    w = _simpson_weights(panels)
    base = vals[:, :1]
    return base[:, 0] + ((vals - base) * w).sum(axis=1) / (3.0 * panels)


def boundary_average(fs: FuncSpec, iv: Interval, q: QuadratureParams = QuadratureParams()) -> float:
    if fs.kind != BOUNDARY:
        raise ValueError("boundary_average needs a boundary function")
    if iv.width == 0.0:
        return float(fs.evaluate(s=iv.lo))
    return float(simpson_means(lambda s: fs.evaluate(s=s), np.array([iv.lo]), iv.width, q.panels)[0])


def level_boundary_averages(fs: FuncSpec, k: int, m: int, q: QuadratureParams = QuadratureParams()) -> np.ndarray:
    """Boundary averages over the intervals of all level-k nodes."""
    return simpson_means(lambda s: fs.evaluate(s=s), psi_level(k, m), m ** (-k), q.panels)
