import numpy as np
import pytest

from treemem.errors import SeparationViolated
from treemem.funcspec import parse
from treemem.membranes import (
    DEGENERATE_NOTE,
    TmpSpec,
    coincidence_set,
    initial_subsolution,
    solve_alternating,
    solve_coupled,
    system_residuals,
    upper_bound,
)
from treemem.operators import OperatorParams
from treemem.regression import TMP_CASES
from treemem.single import solve_direct
from treemem.tree import NodeField, TruncatedTree

TOL = 1e-10


def spec(f, g, h1="0", h2="0", m=2, K=6, b1=0.25, b2=0.25):
    return TmpSpec(TruncatedTree(m, K), OperatorParams(b1, m), OperatorParams(b2, m), parse(h1, "source"),
                   parse(h2, "source"), parse(f, "boundary"), parse(g, "boundary"))


def ordered(u, v, slack=1e-10):
    return all(np.all(a >= b - slack) for a, b in zip(u.levels, v.levels))


@pytest.mark.parametrize("solver", [solve_alternating, solve_coupled])
def test_constant_pair(solver):
    sol = solver(spec("2", "1"))
    # the coupled sweep climbs to u = 2 geometrically, so it stops within 10*tol
    assert sol.u.sup_dist(NodeField.full(sol.u.tree, 2.0)) <= 10 * TOL
    assert sol.v.sup_dist(NodeField.full(sol.v.tree, 1.0)) <= 1e-12
    assert sol.coincidence == ()
    assert sol.certificate.empty_beyond and sol.certificate.max_contact_level == -1


def test_ordered_free_pair_is_returned():
    s = spec("2+s", "s", "0.5^k", "-0.5^k", b1=0.1, b2=0.4)
    uf, _ = solve_direct(s.base1)
    vf, _ = solve_direct(s.base2)
    assert ordered(uf, vf, 0.0)
    for solver in (solve_alternating, solve_coupled):
        sol = solver(s)
        assert sol.u.sup_dist(uf) <= 10 * TOL and sol.v.sup_dist(vf) <= 10 * TOL
        assert max(sol.residuals) <= 10 * TOL


def test_push_together_contacts_near_root():
    s = TMP_CASES[0].build()
    sol = solve_coupled(s)
    alt = solve_alternating(s)
    cert = sol.certificate
    assert len(sol.coincidence) > 0
    assert 0 <= cert.max_contact_level < s.tree.depth and cert.empty_beyond
    assert cert.per_level[0] == 1
    assert sol.u.sup_dist(alt.u) <= 20 * TOL and sol.v.sup_dist(alt.v) <= 20 * TOL


@pytest.mark.parametrize("case", TMP_CASES, ids=lambda c: c.name)
def test_regression_cross_method(case):
    s = case.build()
    co = solve_coupled(s)
    alt = solve_alternating(s, record=True)
    for sol in (co, alt):
        assert max(sol.residuals) <= 10 * TOL
        assert ordered(sol.u, sol.v)
    assert co.u.sup_dist(alt.u) <= 20 * TOL and co.v.sup_dist(alt.v) <= 20 * TOL
    # monotone outer sequences and the explicit bound
    its = alt.extra["iterates"]
    bound = alt.extra["bound"]
    for (u0, v0), (u1, v1) in zip(its, its[1:]):
        assert all(np.all(b >= a - 1e-12) for a, b in zip(v0.levels, v1.levels))
        if u0 is not None:
            assert all(np.all(b >= a - 1e-12) for a, b in zip(u0.levels, u1.levels))
        assert all(np.all(a <= b + 1e-10) for a, b in zip(u1.levels, bound.levels))
    # separated leaf data keeps the last interior level contact-free
    assert co.certificate.per_level[s.tree.depth - 1] == 0


@pytest.mark.parametrize("case", TMP_CASES, ids=lambda c: c.name)
def test_solutions_bracket_free_solutions(case):
    s = case.build()
    sol = solve_coupled(s)
    uf, _ = solve_direct(s.base1)
    vf, _ = solve_direct(s.base2)
    assert ordered(sol.u, uf, 10 * TOL)
    assert ordered(vf, sol.v, 10 * TOL)
    # the bottom-start sweep never lifts v off its free solution
    assert sol.v.sup_dist(vf) <= 1e-10


def test_lowered_start_reaches_another_solution():
    s = TMP_CASES[0].build()
    low = solve_alternating(s, v0_shift=-0.5)
    top = solve_alternating(s)
    # both are genuine solutions of the system ...
    assert max(low.residuals) <= 10 * TOL and max(top.residuals) <= 10 * TOL
    assert ordered(low.u, low.v)
    # ... but not the same one: the pair is not unique
    assert low.u.sup_dist(top.u) > 0.1
    with pytest.raises(ValueError):
        initial_subsolution(s, shift=0.5)


def test_degenerate_pair():
    s = spec("1", "1")
    assert s.degenerate
    sol = solve_coupled(s)
    assert sol.u.sup_dist(NodeField.full(s.tree, 1.0)) <= 1e-12
    assert sol.v.sup_dist(NodeField.full(s.tree, 1.0)) <= 1e-12
    assert len(sol.coincidence) == s.tree.n_nodes
    assert DEGENERATE_NOTE in sol.notes
    with pytest.raises(SeparationViolated):
        solve_alternating(s)


def test_crossing_data_rejected():
    with pytest.raises(SeparationViolated):
        spec("s", "0.5")


def test_coincidence_examples():
    t = TruncatedTree(2, 3)
    u = NodeField.full(t, 1.0)
    nodes, cert = coincidence_set(u, u.copy())
    assert len(nodes) == t.n_nodes and not cert.empty_beyond and cert.max_contact_level == 3
    nodes, cert = coincidence_set(NodeField.full(t, 2.0), u)
    assert nodes == [] and cert.empty_beyond


def test_solvability_warning_recorded():
    s = spec("2", "1", "1", "0")
    with pytest.warns(UserWarning, match="solvability"):
        sol = solve_coupled(s)
    assert any("solvability" in n for n in sol.notes)
    quiet = solve_coupled(s, check_solvability=False)
    assert quiet.notes == ()


def test_system_residuals_and_bound():
    s = TMP_CASES[1].build()
    sol = solve_coupled(s)
    assert system_residuals(s, sol.u, sol.v) == sol.residuals
    rho = upper_bound(s)
    assert ordered(rho, sol.u, 1e-10)
    d = sol.to_dict()
    assert d["method"] == "coupled" and d["certificate"]["max_contact_level"] == sol.certificate.max_contact_level


def test_with_depth():
    s = TMP_CASES[2].build()
    deeper = s.with_depth(s.tree.depth + 1)
    assert deeper.tree.depth == s.tree.depth + 1 and deeper.separation == s.separation
