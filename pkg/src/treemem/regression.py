"""Named regression cases shared by tests, scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

from .funcspec import BOUNDARY, SOURCE, parse
from .membranes import TmpSpec
from .obstacle import ObstacleProblem
from .operators import OperatorParams, source_field
from .single import DirichletProblem
from .tree import TruncatedTree


@dataclass(frozen=True)
class ObstacleCase:
    name: str
    m: int
    depth: int
    beta: float
    f: str
    h: str
    obstacle: str
    side: str = "below"

    def build(self) -> ObstacleProblem:
        tree = TruncatedTree(self.m, self.depth)
        prob = DirichletProblem(tree, OperatorParams(self.beta, self.m), parse(self.h, SOURCE),
                                parse(self.f, BOUNDARY))
        return ObstacleProblem(prob, source_field(parse(self.obstacle, SOURCE), tree), self.side)


@dataclass(frozen=True)
class TmpCase:
    name: str
    m: int
    depth: int
    beta1: float
    beta2: float
    f: str
    g: str
    h1: str
    h2: str

    def build(self, depth: int | None = None) -> TmpSpec:
        tree = TruncatedTree(self.m, self.depth if depth is None else depth)
        return TmpSpec(tree, OperatorParams(self.beta1, self.m), OperatorParams(self.beta2, self.m),
                       parse(self.h1, SOURCE), parse(self.h2, SOURCE), parse(self.f, BOUNDARY),
                       parse(self.g, BOUNDARY))


OBSTACLE_CASES = (
    ObstacleCase("ramp-below-k2", 2, 2, 0.25, "1+s", "0", "1.6+s-0.5*k"),
    ObstacleCase("ramp-below-k3", 2, 3, 0.1, "1+s", "-0.2*0.5^k", "1.6+s-0.5*k"),
    ObstacleCase("ramp-below-k4", 2, 4, 0.4, "1+s", "-0.5^k", "1.6+s-0.5*k"),
    ObstacleCase("wave-below-k4", 2, 4, 0.25, "0.5", "-0.5^k", "0.8*0.6^k-0.2*s+0.1*sin(9*s)"),
    ObstacleCase("ramp-above-k3", 2, 3, 0.3, "s", "0.5^k", "s-0.3+0.2*k", "above"),
    ObstacleCase("ramp-above-k4", 2, 4, 0.2, "s*s", "0.5^k", "s-0.3+0.2*k", "above"),
    ObstacleCase("wave-below-m3", 3, 6, 0.3, "1+0.5*s*s", "-0.4^k", "1.4-0.2*k+0.1*cos(6*s)"),
    ObstacleCase("ramp-above-k10", 2, 10, 0.25, "cos(3*s)", "0.5^k", "cos(3*s)-0.4+0.05*k", "above"),
)

#: the first case is the worked example: h1 pushes u down, h2 pushes v up
TMP_CASES = (
    TmpCase("push-together", 2, 8, 0.25, 0.25, "1", "0.5", "-2*0.5^k", "2*0.5^k"),
    TmpCase("sloped-data", 2, 8, 0.1, 0.3, "1+s", "0.5*s", "-1.5*0.5^k", "1.5*0.5^k"),
    TmpCase("constant-gap", 3, 6, 0.2, 0.2, "2", "1", "0", "0"),
    TmpCase("ternary-mixed", 3, 6, 0.3, 0.15, "1+0.5*s*s", "0.2+0.3*s", "-2*0.4^k", "sin(3*s)*0.4^k"),
    TmpCase("oscillating-f", 2, 8, 0.4, 0.2, "1+0.2*cos(6*s)", "0.4", "-3*0.6^k", "abs(s-0.5)*0.6^k"),
)
