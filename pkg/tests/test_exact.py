import numpy as np
import pytest
from scipy.stats import chisquare
from conftest import small_instances

from treegibbs.exact import (ERASED, GibbsTable, ImpossibleBoundary, TooLargeError,
                             brute_force_marginals, conditional_var, marginal, region_marginal,
                             sample, upward_messages)
from treegibbs.model import make_colorings, make_ising
from treegibbs.tree import BoundaryCondition, Region, TreeTopology

INSTANCES = small_instances()
IDS = [label for label, *_ in INSTANCES]


@pytest.mark.parametrize("label,model,tree,bc", INSTANCES, ids=IDS)
def test_dp_matches_enumeration(label, model, tree, bc):
    msgs = upward_messages(model, tree, bc)
    log_z, marg = brute_force_marginals(model, tree, bc)
    assert msgs.log_partition == pytest.approx(log_z, rel=1e-10, abs=1e-10)
    for x in range(tree.n):
        np.testing.assert_allclose(marginal(msgs, x), marg[x], atol=1e-10)


@pytest.mark.parametrize("label,model,tree,bc", INSTANCES, ids=IDS)
def test_table_matches_dp(label, model, tree, bc):
    table = GibbsTable.build(model, tree, bc)
    msgs = upward_messages(model, tree, bc)
    assert table.log_partition == pytest.approx(msgs.log_partition, abs=1e-10)
    for x in range(tree.n):
        np.testing.assert_allclose(table.site_marginal(x), marginal(msgs, x), atol=1e-10)


def test_subtree_conditionals_match_table():
    m, t = make_ising(0.9, 0.1), TreeTopology(2, 2)
    bc = BoundaryCondition.plus(m, t)
    msgs = upward_messages(m, t, bc)
    table = GibbsTable.build(m, t, bc)
    for spin in (0, 1):
        sub = table.condition(table.states[:, 0] == spin)
        np.testing.assert_allclose(marginal(msgs, 1, spin), sub.site_marginal(1), atol=1e-12)
    # erasing the edge to the parent leaves the subtree alone with its boundary
    alone = marginal(msgs, 1, ERASED)
    sub_tree = TreeTopology(2, 1)
    np.testing.assert_allclose(
        alone, marginal(upward_messages(m, sub_tree, BoundaryCondition.plus(m, sub_tree)), 0), atol=1e-12)


def test_sample_frequencies(rng):
    m, t = make_ising(0.3, 0.2), TreeTopology(2, 2)
    bc = BoundaryCondition.plus(m, t)
    table = GibbsTable.build(m, t, bc)
    draws = sample(upward_messages(m, t, bc), rng, size=40000)
    counts = np.bincount(table.index_of(draws[:, : t.n]), minlength=table.size)
    expected = table.prob * draws.shape[0]
    rare = expected < 5
    obs = np.append(counts[~rare], counts[rare].sum())
    exp = np.append(expected[~rare], expected[rare].sum())
    assert chisquare(obs, exp).pvalue > 1e-4


def test_conditioned_sample_fixes_root(rng):
    m, t = make_ising(0.7), TreeTopology(2, 2)
    draws = sample(upward_messages(m, t, BoundaryCondition.free()), rng, size=100, root_spin=0)
    assert np.all(draws[:, 0] == 0)
    assert np.all(draws[:, t.n:] == -1)


def test_index_of_round_trip():
    table = GibbsTable.build(make_colorings(3), TreeTopology(2, 1), BoundaryCondition.free())
    np.testing.assert_array_equal(table.index_of(table.states), np.arange(table.size))


def test_variance_decomposition(rng):
    table = GibbsTable.build(make_ising(0.6, 0.2), TreeTopology(2, 2), BoundaryCondition.free())
    region = Region(table.tree, [1, 3, 4])
    for _ in range(20):
        f = table.random_function(rng)
        lhs = table.var(f)
        rhs = table.expect(conditional_var(table, f, region)) + table.var(table.expect(f, region))
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_random_function_support(rng):
    table = GibbsTable.build(make_ising(0.6), TreeTopology(2, 2), BoundaryCondition.free())
    f = table.random_function(rng, depends_on=[0, 1], positive=True)
    assert np.all(f > 0)
    # f is constant on classes with the same spins at 0 and 1
    keys = table.states[:, 0] * 2 + table.states[:, 1]
    for k in np.unique(keys):
        assert np.ptp(f[keys == k]) == 0


def test_region_marginal_matches_table():
    m, t = make_ising(0.8, -0.3), TreeTopology(2, 2)
    bc = BoundaryCondition.plus(m, t)
    table = GibbsTable.build(m, t, bc)
    region = Region(t, [1, 3, 4])
    for row in (0, 17, table.size - 1):
        cond = table.condition_outside(region, row)
        cfg = bc.full_config(t, table.states[row])
        np.testing.assert_allclose(region_marginal(m, t, cfg, region, 1), cond.site_marginal(1), atol=1e-12)


def test_impossible_boundary():
    # two colours on one vertex whose two boundary children take both colours
    model, t = make_colorings(2), TreeTopology(2, 0)
    bc = BoundaryCondition("fixed", np.array([0, 1]))
    with pytest.raises(ImpossibleBoundary):
        upward_messages(model, t, bc)
    with pytest.raises(ImpossibleBoundary):
        GibbsTable.build(model, t, bc)


def test_too_large():
    with pytest.raises(TooLargeError):
        GibbsTable.build(make_ising(1.0), TreeTopology(2, 4), BoundaryCondition.free(), cap=1 << 10)
