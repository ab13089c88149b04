import numpy as np
import pytest
from hypothesis import given, strategies as st

from treemem.errors import LeafHasNoChildren, RootHasNoParent
from treemem.tree import (
    ROOT,
    NodeField,
    NodeId,
    TruncatedTree,
    ancestor,
    child_mean,
    children,
    digits,
    from_digits,
    interval,
    parent,
    psi,
    subtree_mean,
)


def test_parent_examples():
    assert parent(NodeId(2, 3), 2) == NodeId(1, 1)
    assert parent(NodeId(1, 2), 3) == ROOT
    with pytest.raises(RootHasNoParent):
        parent(ROOT, 2)


def test_children_examples():
    t2, t3 = TruncatedTree(2, 4), TruncatedTree(3, 2)
    assert children(NodeId(1, 1), t2) == [NodeId(2, 2), NodeId(2, 3)]
    assert children(ROOT, t3) == [NodeId(1, 0), NodeId(1, 1), NodeId(1, 2)]
    with pytest.raises(LeafHasNoChildren):
        children(NodeId(4, 0), t2)


def test_psi_and_interval_examples():
    assert psi(NodeId(2, 3), 2) == 0.75
    assert psi(NodeId(1, 2), 3) == pytest.approx(2 / 3, abs=1e-15)
    assert psi(ROOT, 5) == 0.0
    iv = interval(NodeId(2, 3), 2)
    assert (iv.lo, iv.hi) == (0.75, 1.0)
    root = interval(ROOT, 3)
    assert (root.lo, root.hi) == (0.0, 1.0)


def test_index_bounds_checked():
    with pytest.raises(ValueError):
        NodeId.checked(2, 4, 2)
    with pytest.raises(ValueError):
        NodeId(0, 1)
    with pytest.raises(ValueError):
        TruncatedTree(1, 3)
    with pytest.raises(ValueError):
        TruncatedTree(2, 30)


@pytest.mark.parametrize("m,K", [(2, 1), (2, 6), (3, 4), (5, 3)])
def test_node_count(m, K):
    t = TruncatedTree(m, K)
    assert t.n_nodes == (m ** (K + 1) - 1) // (m - 1)
    assert sum(1 for _ in t.nodes()) == t.n_nodes


nodes_m = st.integers(2, 5).flatmap(
    lambda m: st.integers(0, 8).flatmap(
        lambda k: st.tuples(st.just(m), st.builds(NodeId, st.just(k), st.integers(0, m**k - 1)))
    )
)


@given(nodes_m)
def test_children_invert_parent(mn):
    m, n = mn
    tree = TruncatedTree(m, n.level + 1)
    kids = children(n, tree)
    assert len(kids) == m
    assert all(parent(c, m) == n for c in kids)


@given(nodes_m)
def test_psi_brackets_under_parent(mn):
    m, n = mn
    if n.level == 0:
        return
    p = parent(n, m)
    assert psi(p, m) <= psi(n, m) < psi(p, m) + m ** (-(n.level - 1))


@given(nodes_m)
def test_psi_is_digit_sum(mn):
    m, n = mn
    ds = digits(n, m)
    assert len(ds) == n.level
    assert psi(n, m) == pytest.approx(sum(a * m ** (-(i + 1)) for i, a in enumerate(ds)), abs=1e-15)


@pytest.mark.parametrize("m", [2, 3, 5])
def test_digit_round_trip(m):
    kmax = 12 if m == 2 else (9 if m == 3 else 6)
    for k in range(kmax + 1):
        idx = np.unique(np.linspace(0, m**k - 1, 200).astype(int))
        for i in idx:
            n = NodeId(k, int(i))
            assert from_digits(digits(n, m), m) == n


@given(nodes_m)
def test_child_intervals_partition_parent(mn):
    m, n = mn
    kids = children(n, TruncatedTree(m, n.level + 1))
    ivs = [interval(c, m) for c in kids]
    whole = interval(n, m)
    assert ivs[0].lo == whole.lo
    assert ivs[-1].hi == pytest.approx(whole.hi, abs=1e-15)
    for a, b in zip(ivs, ivs[1:]):
        assert a.hi == pytest.approx(b.lo, abs=1e-15)
    assert sum(iv.width for iv in ivs) == pytest.approx(whole.width, abs=1e-15)


def test_ancestor():
    assert ancestor(NodeId(3, 5), 1, 2) == NodeId(1, 1)
    assert ancestor(NodeId(3, 5), 3, 2) == NodeId(3, 5)
    with pytest.raises(ValueError):
        ancestor(NodeId(1, 0), 2, 2)


def test_level_means_match_loops():
    rng = np.random.default_rng(3)
    a = rng.normal(size=27)
    assert np.allclose(child_mean(a, 3), [a[3 * i:3 * i + 3].mean() for i in range(9)], atol=1e-15)
    assert subtree_mean(a, 3, 3)[0] == pytest.approx(a.mean(), abs=1e-15)


def test_nodefield_access_and_arithmetic():
    t = TruncatedTree(2, 3)
    u = NodeField.from_function(t, lambda k, s: k + s)
    assert u[NodeId(2, 3)] == 2.75
    w = u - u * 0.5
    assert w.sup_dist(0.5 * u) == 0.0
    assert NodeField.from_flat(t, u.flat()).sup_dist(u) == 0.0
    assert u.max_abs(interior_only=True) == 2.75
    u[ROOT] = -1.0
    assert u.min() == -1.0
    with pytest.raises(ValueError):
        NodeField(t, [np.zeros(1)])
