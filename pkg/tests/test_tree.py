import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treegibbs.model import make_colorings, make_hardcore, make_ising
from treegibbs.tree import BoundaryCondition, Region, TreeTopology

trees = st.builds(TreeTopology, st.integers(2, 4), st.integers(0, 4))


@given(trees)
def test_counts_and_parent_child(t):
    assert t.n == sum(t.b ** k for k in range(t.depth + 1))
    assert t.n_boundary == t.b ** (t.depth + 1)
    for x in range(t.n):
        for c in t.children[x]:
            assert t.parent[c] == x
            assert t.level[c] == t.level[x] + 1
    assert np.all(t.level[t.n:] == t.depth + 1)


@given(trees, st.data())
def test_block_and_subtree(t, data):
    x = data.draw(st.integers(0, t.n - 1))
    ell = data.draw(st.integers(0, t.depth + 2))
    blk = t.block(x, ell)
    span = min(ell, t.height(x) + 1)
    assert len(blk) == sum(t.b ** k for k in range(span))
    assert set(blk.vertices) <= set(t.subtree(x).vertices)
    assert len(t.subtree_tilde(x)) == len(t.subtree(x)) - 1


def test_level_forest_and_descendants():
    t = TreeTopology(2, 3)
    np.testing.assert_array_equal(t.level_forest(1).vertices, np.arange(7, 15))
    assert len(t.level_forest(0)) == 0
    np.testing.assert_array_equal(t.descendants_at(1, 2), [7, 8, 9, 10])
    np.testing.assert_array_equal(t.descendants_at(0, 4), t.boundary_vertices)
    with pytest.raises(ValueError):
        t.descendants_at(0, 5)


def test_neighbors():
    t = TreeTopology(3, 1)
    assert t.neighbors(0) == [1, 2, 3]
    assert t.neighbors(1) == [0, 4, 5, 6]
    assert t.neighbors(1, include_boundary=False) == [0]
    with pytest.raises(KeyError):
        t.check_vertex(t.n)


def test_invalid_tree():
    with pytest.raises(ValueError):
        TreeTopology(1, 3)
    with pytest.raises(ValueError):
        TreeTopology(2, -1)


def test_region_set_operations():
    t = TreeTopology(2, 2)
    a, b = Region(t, [0, 1, 2]), Region(t, [2, 3])
    assert a.union(b) == Region(t, [0, 1, 2, 3])
    assert a.intersection(b) == Region(t, [2])
    assert 3 in a.complement()
    assert set(Region(t, [1]).outer_boundary()) == {0, 3, 4}


def test_boundary_parse(tmp_path):
    t = TreeTopology(2, 1)
    ising, hc, col = make_ising(1.0), make_hardcore(1.0), make_colorings(3)
    assert BoundaryCondition.parse("free", ising, t).is_free
    assert np.all(BoundaryCondition.parse("plus", ising, t).spins == 1)
    assert np.all(BoundaryCondition.parse("minus", ising, t).spins == 0)
    assert np.all(BoundaryCondition.parse("color:2", col, t).spins == 1)
    # depth 1: boundary is level 2, occupied under "even"
    assert np.all(BoundaryCondition.parse("even", hc, t).spins == 1)
    assert np.all(BoundaryCondition.parse("odd", hc, t).spins == 0)
    path = tmp_path / "bc.txt"
    path.write_text("1 -1\n1 -1\n")
    bc = BoundaryCondition.parse(f"file:{path}", ising, t)
    np.testing.assert_array_equal(bc.spins, [1, 0, 1, 0])
    path.write_text("1 1 1")
    with pytest.raises(ValueError):
        BoundaryCondition.parse(f"file:{path}", ising, t)
    with pytest.raises(ValueError):
        BoundaryCondition.parse("sideways", ising, t)


def test_frozen_coloring_is_proper():
    t = TreeTopology(2, 3)
    bc = BoundaryCondition.frozen_coloring(t, 3, root_color=2)
    assert bc.spins.shape == (t.n_boundary,)
    with pytest.raises(ValueError):
        BoundaryCondition.frozen_coloring(t, 4)
