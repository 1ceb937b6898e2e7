import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treegibbs.analytics import (PhasePoint, beta0, beta1, coupling_constants, critical_field,
                                 critical_values, fixed_points, gamma_numeric, hardcore_cycle_onset,
                                 hardcore_fixed_point, hardcore_recursion, j_iterate, j_map, j_prime,
                                 k_beta, kappa_ising, lambda0, least_fixed_point, magnetization_ratio,
                                 potts_beta1, tv_disagreement)
from treegibbs.exact import upward_messages
from treegibbs.model import make_hardcore, make_ising, make_potts
from treegibbs.tree import BoundaryCondition, TreeTopology


@pytest.mark.parametrize("b", [2, 3, 5])
def test_thresholds_closed_forms(b):
    assert b * math.tanh(beta0(b)) == pytest.approx(1.0)
    assert b * math.tanh(beta1(b)) ** 2 == pytest.approx(1.0)
    assert beta0(b) < beta1(b)


@given(beta=st.floats(0.05, 2.0), h=st.floats(-1, 1), b=st.integers(2, 5),
       a=st.floats(1e-3, 1e3))
def test_j_prime_matches_finite_difference(beta, h, b, a):
    step = 1e-6 * a
    fd = (j_map(a + step, beta, h, b) - j_map(a - step, beta, h, b)) / (2 * step)
    assert j_prime(a, beta, h, b) == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("b", [2, 3])
def test_zero_field_fixed_point_below_beta0_is_one(b):
    pts = fixed_points(0.9 * beta0(b), 0.0, b)
    np.testing.assert_allclose(pts, [1.0], rtol=1e-9)
    assert least_fixed_point(0.9 * beta0(b), 0.0, b) == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("beta,h", [(1.2, 0.0), (0.8, 0.05), (0.3, -0.2), (1.0, 0.5)])
def test_least_fixed_point_properties(beta, h):
    b = 2
    a0 = least_fixed_point(beta, h, b)
    assert j_map(a0, beta, h, b) == pytest.approx(a0, rel=1e-10)
    assert a0 <= fixed_points(beta, h, b).min() * (1 + 1e-9)
    # the slope at a fixed point is b times the disagreement kernel
    assert k_beta(a0, beta) == pytest.approx(j_prime(a0, beta, h, b) / b, rel=1e-9)


def test_three_fixed_points_at_low_temperature():
    assert len(fixed_points(1.2, 0.0, 2)) == 3


@pytest.mark.parametrize("beta", [0.7, 1.0, 1.5])
def test_critical_field_is_tangency(beta):
    b = 2
    hc = critical_field(beta, b)
    assert hc > 0
    assert len(fixed_points(beta, -(hc * 0.98), b)) == 3
    assert len(fixed_points(beta, -(hc * 1.02), b)) == 1
    assert not PhasePoint(b, beta, 0.0).unique_phase
    assert PhasePoint(b, beta, 1.02 * hc).unique_phase


def test_critical_field_monotone():
    b = 3
    assert critical_field(beta0(b), b) == 0.0
    vals = [critical_field(beta, b) for beta in np.linspace(beta0(b) + 0.01, 2.0, 20)]
    assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("b", [2, 3, 4, 7])
def test_hardcore_onset_equals_lambda0(b):
    # b R/(1+R) = 1 gives R = 1/(b-1), and lam = R (1+R)^b = b^b/(b-1)^(b+1)
    assert hardcore_cycle_onset(b) == pytest.approx(lambda0(b), rel=1e-9)


def test_hardcore_recursion_converges_below_onset():
    lam, b = 2.0, 2
    traj = hardcore_recursion(lam, b, 200)
    r = hardcore_fixed_point(lam, b)
    assert r * (1 + r) ** b == pytest.approx(lam)
    assert traj[-1] == pytest.approx(r, rel=1e-8)


def test_hardcore_recursion_oscillates_above_onset():
    b = 2
    traj = hardcore_recursion(2 * lambda0(b), b, 400)
    assert abs(traj[-1] - traj[-2]) > 0.1


def test_potts_beta1():
    assert potts_beta1(2, 3) == pytest.approx(0.5 * math.log(7))
    for b in (2, 3, 4):
        assert potts_beta1(b, 2) == pytest.approx(beta1(b))
    cv = critical_values(2, 3)
    assert cv["lambda0"] == 4.0
    with pytest.raises(ValueError):
        critical_values(1)


@pytest.mark.parametrize("depth", [0, 1, 3])
def test_root_ratio_follows_the_recursion(depth):
    beta, h, b = 0.9, 0.1, 2
    m, t = make_ising(beta, h), TreeTopology(b, depth)
    msgs = upward_messages(m, t, BoundaryCondition.plus(m, t))
    traj = j_iterate(beta, h, b, depth + 1)
    assert magnetization_ratio(msgs, 0) == pytest.approx(traj[-1], rel=1e-10)
    assert magnetization_ratio(msgs, t.n - 1) == pytest.approx(traj[1], rel=1e-10)


@given(beta=st.floats(0.05, 2.0), h=st.floats(-0.5, 0.5), boundary=st.sampled_from(["plus", "free", "minus"]))
@settings(max_examples=30, deadline=None)
@pytest.mark.filterwarnings("ignore:h < -h_c")
def test_kappa_below_tanh(beta, h, boundary):
    m, t = make_ising(beta, h), TreeTopology(2, 3)
    cc = kappa_ising(m, t, BoundaryCondition.parse(boundary, m, t))
    assert 0 <= cc.kappa <= math.tanh(beta) + 1e-12
    assert cc.gamma == math.tanh(beta)


def test_kappa_plus_bound_dominates_finite_tree():
    m, t = make_ising(1.2), TreeTopology(2, 6)
    cc = kappa_ising(m, t, BoundaryCondition.plus(m, t))
    assert cc.kappa <= cc.kappa_bound + 1e-12
    assert not cc.bound_fallback


def test_kappa_bound_falls_back_beyond_critical_field():
    m, t = make_ising(1.0, -0.9), TreeTopology(2, 2)
    with pytest.warns(UserWarning):
        cc = kappa_ising(m, t, BoundaryCondition.plus(m, t))
    assert cc.bound_fallback and cc.kappa_bound == math.tanh(1.0)


def test_tv_disagreement_single_vertex():
    beta = 0.7
    m, t = make_ising(beta), TreeTopology(2, 2)
    config = np.zeros(t.n_total, dtype=int)
    config[3], config[4] = 1, 0  # children of 1 cancel
    # changing the parent flips the local field between +beta and -beta
    assert tv_disagreement(m, t, config, [1], 0, 1) == pytest.approx(math.tanh(beta))
    with pytest.raises(ValueError):
        tv_disagreement(m, t, config, [1], 5, 1)


def test_gamma_numeric_ising_equals_tanh():
    beta = 0.6
    assert gamma_numeric(make_ising(beta), max_region=2) == pytest.approx(math.tanh(beta), rel=1e-9)


def test_numeric_constants_for_other_models():
    t = TreeTopology(2, 2)
    for m, bc in [(make_hardcore(1.0), BoundaryCondition.even(t)),
                  (make_potts(3, 0.5), BoundaryCondition.color(t, 1))]:
        cc = coupling_constants(m, t, bc)
        assert cc.provenance == "numeric"
        assert 0 < cc.kappa <= cc.gamma <= 1
