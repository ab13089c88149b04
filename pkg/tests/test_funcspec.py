import logging
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import poly_average
from treemem.errors import NonFiniteValue, ParseError
from treemem.funcspec import (
    QuadratureParams,
    SourceTable,
    boundary_average,
    eval_boundary,
    eval_source,
    level_boundary_averages,
    parse,
    to_text,
)
from treemem.tree import ROOT, Interval, NodeId, interval


def test_parse_examples():
    assert eval_boundary(parse("2", "boundary"), 0.3) == 2.0
    assert eval_boundary(parse("s*s + 1", "boundary"), 0.5) == 1.25
    h = parse("0.5^k", "source")
    assert eval_source(h, ROOT, 2) == 1.0
    assert eval_source(h, NodeId(3, 5), 2) == 0.125
    assert eval_source(parse("0", "source"), NodeId(4, 9), 3) == 0.0


def test_eval_boundary_examples():
    assert eval_boundary(parse("s", "boundary"), 0.75) == 0.75
    with pytest.raises(NonFiniteValue):
        eval_boundary(parse("1/(s-0.5)", "boundary"), 0.5)


@pytest.mark.parametrize("text,value", [
    ("-2^2", -4.0), ("2^3^2", 512.0), ("2**3", 8.0), ("1-2-3", -4.0), ("8/4/2", 1.0),
    ("2*-3", -6.0), ("min(3, 1, 2)", 1.0), ("max(1, 2)", 2.0), ("abs(-1.5)", 1.5),
    ("exp(0)+cos(0)+sin(0)", 2.0), ("1e-3*1000", 1.0), (".5+.5", 1.0), ("(1+2)*3", 9.0),
])
def test_precedence_and_functions(text, value):
    assert parse(text, "boundary").evaluate(s=0.0) == pytest.approx(value, abs=1e-15)


@pytest.mark.parametrize("text,kind,offset", [
    ("s +* 2", "boundary", 3),
    ("k", "boundary", 0),
    ("s + q", "boundary", 4),
    ("sin(s, s)", "boundary", 0),
    ("min(s)", "boundary", 0),
    ("(s", "boundary", 2),
    ("s $ 2", "boundary", 2),
    ("1e999", "boundary", 0),
])
def test_parse_errors_carry_offsets(text, kind, offset):
    with pytest.raises(ParseError) as exc:
        parse(text, kind)
    assert exc.value.offset == offset
    assert f"(at byte {offset})" in str(exc.value)


def test_empty_expression_rejected():
    with pytest.raises(ParseError):
        parse("   ", "source")


def test_source_variables():
    h = parse("k*s", "source")
    assert h.variables == {"k", "s"} and h.depends_on_s
    assert not parse("0.5^k", "source").depends_on_s


exprs = st.recursive(
    st.one_of(st.sampled_from(["s", "k"]), st.floats(0.01, 9.0).map(lambda x: f"{x:.6g}")),
    lambda inner: st.one_of(
        st.tuples(inner, st.sampled_from(["+", "-", "*"]), inner).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        inner.map(lambda e: f"-{e}"),
        inner.map(lambda e: f"sin({e})"),
        st.tuples(inner, inner).map(lambda t: f"max({t[0]}, {t[1]})"),
    ),
    max_leaves=8,
)


@given(exprs, st.lists(st.floats(0, 1), min_size=1, max_size=100))
def test_print_round_trip(text, svals):
    fs = parse(text, "source")
    again = parse(to_text(fs.expr), "source")
    s = np.array(svals)
    for k in (0.0, 3.0):
        try:
            a = fs.evaluate(k=k, s=s)
        except NonFiniteValue:
            continue
        b = again.evaluate(k=k, s=s)
        assert np.allclose(a, b, rtol=1e-14, atol=1e-14)


def test_boundary_average_examples():
    q = QuadratureParams()
    assert boundary_average(parse("s", "boundary"), Interval(0.0, 1.0), q) == pytest.approx(0.5, abs=1e-15)
    assert boundary_average(parse("7", "boundary"), Interval(0.25, 0.5), q) == 7.0
    assert boundary_average(parse("s*s", "boundary"), Interval(0.0, 1.0), q) == pytest.approx(1 / 3, abs=1e-12)


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=4), st.integers(0, 6), st.integers(2, 3))
def test_simpson_exact_on_cubics(coeffs, k, m):
    text = " + ".join(f"({c})*s^{i}" for i, c in enumerate(coeffs))
    f = parse(text, "boundary")
    idx = (m**k) // 2
    n = NodeId(k, idx)
    iv = interval(n, m)
    exact = poly_average([Fraction(c) for c in coeffs], Fraction(idx, m**k), Fraction(idx + 1, m**k))
    assert boundary_average(f, iv) == pytest.approx(float(exact), abs=1e-12)


@pytest.mark.parametrize("m", [2, 3])
def test_child_averages_recombine(m):
    f = parse("1 - 2*s + 3*s^3", "boundary")
    for k in range(5):
        parent = level_boundary_averages(f, k, m)
        kids = level_boundary_averages(f, k + 1, m)
        assert np.allclose(kids.reshape(-1, m).mean(axis=1), parent, atol=1e-12)


@given(st.floats(-10, 10), st.floats(-3, 3))
def test_average_linear_and_shift(a, c):
    f = parse("sin(4*s)", "boundary")
    g = parse(f"({a!r})*sin(4*s) + ({c!r})", "boundary")
    iv = Interval(0.125, 0.375)
    assert boundary_average(g, iv) == pytest.approx(a * boundary_average(f, iv) + c, abs=1e-12)


def test_average_rejects_nonfinite():
    with pytest.raises(NonFiniteValue):
        boundary_average(parse("1/(s-0.25)", "boundary"), Interval(0.0, 0.5))


def test_source_table(tmp_path, caplog):
    path = tmp_path / "h.csv"
    path.write_text("level,index,value\n0,0,1.5\n1,1,-2\n")
    table = SourceTable.from_csv(path)
    assert eval_source(table, ROOT, 2) == 1.5
    assert list(table.level_values(1, 2)) == [0.0, -2.0]
    with caplog.at_level(logging.WARNING):
        assert not table.level_values(3, 2).any()
    assert "beyond level 1" in caplog.text
    with pytest.raises(NonFiniteValue):
        SourceTable({(0, 0): math.inf})


def test_quadrature_panels_even():
    assert QuadratureParams(3).panels == 4
    with pytest.raises(ValueError):
        QuadratureParams(0)
