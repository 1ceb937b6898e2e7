"""Acceptance criteria, one test each, at their stated tolerances.

Every test appends a ``PASS``/``FAIL`` line to ``ACCEPTANCE_LINES`` (printed
in the terminal summary) before asserting. Run directly with
``python tests/test_acceptance.py`` for the same report.
"""

import itertools
import math
import sys
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, small_instances

from treegibbs.analytics import (beta1, hardcore_cycle_onset, j_iterate, j_prime, k_beta, lambda0,
                                 least_fixed_point, magnetization_ratio, potts_beta1)
from treegibbs.config import ExperimentConfig
from treegibbs.exact import (GibbsTable, brute_force_marginals, marginal, upward_messages)
from treegibbs.experiments import run
from treegibbs.glauber import grand_coupling_run
from treegibbs.mixing import (decay_vcond_check, em_dobrushin_bound, parent_conditionings, pmin,
                              spatial_delta, vm_contraction_max, vm_root_contraction)
from treegibbs.model import make_colorings, make_hardcore, make_ising, make_potts
from treegibbs.spectrum import (block_dirichlet, block_gap, build_generator, log_sobolev_upper,
                                mixing_time_exact, spectral_gap_exact)
from treegibbs.tree import BoundaryCondition, Region, TreeTopology


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")


# 1 -------------------------------------------------------------------------

def test_criterion_01_dp_matches_enumeration():
    start = time.perf_counter()
    worst = 0.0
    cases = 0
    for depth in range(4):
        t = TreeTopology(2, depth)
        ising = make_ising(0.9, 0.2)
        for m, bc in [(ising, BoundaryCondition.plus(ising, t)), (ising, BoundaryCondition.free()),
                      (make_hardcore(1.5), BoundaryCondition.even(t)),
                      (make_hardcore(1.5), BoundaryCondition.odd(t)),
                      (make_colorings(4), BoundaryCondition.color(t, 2)),
                      (make_potts(3, 0.7), BoundaryCondition.color(t, 1))]:
            msgs = upward_messages(m, t, bc)
            log_z, marg = brute_force_marginals(m, t, bc)
            dp = np.stack([marginal(msgs, x) for x in range(t.n)])
            worst = max(worst, abs(msgs.log_partition - log_z), float(np.abs(dp - marg).max()))
            cases += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 5.0
    record(1, ok, f"{cases} instances, max deviation {worst:.2e}, {elapsed:.2f}s")
    assert ok


# 2, 3 ----------------------------------------------------------------------

GRID = list(itertools.product([2, 3], [0.3, 0.9, 1.5], [-0.2, 0.0, 0.5]))


def test_criterion_02_ratio_recursion():
    worst = 0.0
    for b, beta, h in GRID:
        m, t = make_ising(beta, h), TreeTopology(b, 4 if b == 2 else 3)
        msgs = upward_messages(m, t, BoundaryCondition.plus(m, t))
        traj = j_iterate(beta, h, b, t.depth + 1)
        for z in range(t.n):
            want = traj[t.height(z) + 1]
            worst = max(worst, abs(magnetization_ratio(msgs, z) / want - 1))
    ok = worst < 1e-9
    record(2, ok, f"max relative error {worst:.2e} over {len(GRID)} (b, beta, h)")
    assert ok


def test_criterion_03_kernel_slope_identity():
    start = time.perf_counter()
    worst = 0.0
    for b, beta, h in GRID:
        a0 = least_fixed_point(beta, h, b)
        worst = max(worst, abs(float(k_beta(a0, beta)) - float(j_prime(a0, beta, h, b)) / b))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 1.0
    record(3, ok, f"max |K(a0) - J'(a0)/b| = {worst:.2e}, {elapsed:.3f}s")
    assert ok


# 4 -------------------------------------------------------------------------

def test_criterion_04_critical_values():
    tanh_err = max(abs(math.tanh(beta1(b)) - 1 / math.sqrt(b)) for b in range(2, 10))
    potts_err = abs(potts_beta1(2, 3) - 0.5 * math.log(7))
    exceeds = all(1 / (math.sqrt(b) - 1) > lambda0(b) for b in range(5, 10))
    onset_err = max(abs(hardcore_cycle_onset(b) - lambda0(b)) for b in (2, 3, 4))
    ok = tanh_err <= 1e-12 and potts_err <= 1e-9 and exceeds and onset_err < 1e-3
    record(4, ok, f"tanh err {tanh_err:.1e}, Potts err {potts_err:.1e}, "
                  f"1/(sqrt b - 1) > lambda0 for b=5..9: {exceeds}, onset err {onset_err:.1e}")
    assert ok


# 5 -------------------------------------------------------------------------

def test_criterion_05_generator_exactness():
    instances = [inst[1:] for inst in small_instances()]
    for depth in range(4):
        t = TreeTopology(2, depth)
        m0 = make_ising(0.0)
        instances.append((m0, t, BoundaryCondition.plus(m0, t)))
    m = make_ising(1.2)
    t3 = TreeTopology(2, 3)
    instances += [(m, t3, BoundaryCondition.plus(m, t3)), (m, t3, BoundaryCondition.free())]
    balance = 0.0
    single_err = zero_beta_err = 0.0
    worst_sob = -math.inf
    worst_t1 = worst_t2 = math.inf
    checked = 0
    for model, tree, bc in instances:
        G = build_generator(model, tree, bc)
        balance = max(balance, G.row_sum_error(), G.detailed_balance_error())
        if G.size < 2:
            continue
        gap = spectral_gap_exact(G)
        if tree.depth == 0:
            single_err = max(single_err, abs(gap - 1))
        if model.name == "ising" and model.params["beta"] == 0.0:
            zero_beta_err = max(zero_beta_err, abs(gap - 1))
        if G.size <= 1 << 12:
            sob = log_sobolev_upper(G, rng=np.random.default_rng(0))
            worst_sob = max(worst_sob, sob - gap / 2)
            worst_t1 = min(worst_t1, gap * mixing_time_exact(G, 1))
            worst_t2 = min(worst_t2, gap * mixing_time_exact(G, 2))
            checked += 1
    ok = (balance <= 1e-12 and single_err <= 1e-12 and zero_beta_err <= 1e-8 and worst_sob <= 1e-6
          and worst_t1 >= 1 - 1e-6 and worst_t2 >= 1 - 1e-6)
    record(5, ok, f"{len(instances)} generators, balance/row-sum {balance:.1e}, single-site gap err "
                  f"{single_err:.1e}, beta=0 gap err {zero_beta_err:.1e}; on {checked} with <=4096 states: "
                  f"max csob - gap/2 = {worst_sob:.1e}, min gap*T1 = {worst_t1:.3f}, min gap*T2 = {worst_t2:.3f}")
    assert ok


# 6 -------------------------------------------------------------------------

def _slope(depths, medians):
    return float(np.polyfit(depths, np.log(medians), 1)[0])


@pytest.mark.slow
def test_criterion_06_boundary_contrast():
    start = time.perf_counter()
    m = make_ising(1.2)
    gaps = {}
    for bname in ("plus", "free"):
        for d in range(4):
            t = TreeTopology(2, d)
            gaps[bname, d] = spectral_gap_exact(build_generator(m, t, BoundaryCondition.parse(bname, m, t)))
    plus_ok = all(gaps["plus", d] >= 0.5 * gaps["plus", 0] for d in range(4))
    free_ok = gaps["free", 3] <= 0.5 * gaps["free", 1]

    depths = np.arange(4, 9)
    times = {}
    for bname in ("plus", "free"):
        for d in depths:
            t = TreeTopology(2, int(d))
            res = grand_coupling_run(m, t, BoundaryCondition.parse(bname, m, t), seed=int(100 + d),
                                     replicas=10_000)
            times[bname, d] = res
    med = {k: v.median for k, v in times.items()}
    factors = [med["plus", d + 1] / med["plus", d] for d in depths[:-1]]
    slope_plus = _slope(depths, [med["plus", d] for d in depths])
    slope_free = _slope(depths, [med["free", d] for d in depths])

    # bootstrap the fitted log-time slopes
    rng = np.random.default_rng(6)
    boot = {b: [] for b in ("plus", "free")}
    for _ in range(400):
        for bname in ("plus", "free"):
            meds = []
            for d in depths:
                x = times[bname, d].times
                meds.append(np.median(x[rng.integers(0, x.size, x.size)]))
            boot[bname].append(_slope(depths, meds))
    plus_hi = float(np.quantile(boot["plus"], 0.975))
    free_lo = float(np.quantile(boot["free"], 0.025))
    cis_apart = all(times["plus", d].median_ci(seed=1)[1] < times["free", d].median_ci(seed=1)[0]
                    for d in depths)
    elapsed = time.perf_counter() - start
    ok = (plus_ok and free_ok and max(factors) <= 1.6 and slope_free >= 1.25 * slope_plus
          and free_lo >= 1.25 * plus_hi and cis_apart and elapsed < 600)
    record(6, ok, f"gap+ {[round(gaps['plus', d], 3) for d in range(4)]}, "
                  f"gap_free(3)/gap_free(1) = {gaps['free', 3] / gaps['free', 1]:.3f}; "
                  f"medians + {[round(med['plus', d], 1) for d in depths]}, "
                  f"free {[round(med['free', d], 0) for d in depths]}; max (+) factor {max(factors):.3f}; "
                  f"slopes {slope_plus:.3f} vs {slope_free:.3f} (ratio {slope_free / slope_plus:.2f}); "
                  f"bootstrap free low {free_lo:.3f} vs 1.25 x plus high {1.25 * plus_hi:.3f}; {elapsed:.0f}s")
    assert ok


# 7 -------------------------------------------------------------------------

def test_criterion_07_vm_decay():
    beta, b = 0.6, 2
    rate = b * math.tanh(beta) ** 2
    m, t = make_ising(beta), TreeTopology(b, 4)
    msgs = upward_messages(m, t, BoundaryCondition.free())
    ells = np.arange(1, 5)
    eps = np.array([vm_root_contraction(msgs, 0, int(ell)) for ell in ells])
    slope = float(np.polyfit(ells, np.log(eps), 1)[0])
    below = bool(np.all(eps <= rate ** ells))
    ok = below and slope <= math.log(rate) + 0.05
    record(7, ok, f"eps* {np.round(eps, 5).tolist()} vs bound {np.round(rate ** ells, 5).tolist()}; "
                  f"slope {slope:.4f} vs ln(b tanh^2) + 0.05 = {math.log(rate) + 0.05:.4f}")
    assert ok


# 8 -------------------------------------------------------------------------

def test_criterion_08_coupling_tails():
    res = run(ExperimentConfig("coupling-tails", seed=8))
    row = res.records[0]
    tails = {round(r["C"] / math.e): (r["tail"], r["tail_ci_high"], r["tail_bound"]) for r in res.records}
    record(8, res.ok, f"mean {row['mean']:.2e} +- {row['stderr']:.1e} vs (kappa b)^6 = {row['mean_bound']:.2e} "
                      f"(pass if mean <= bound + 3 stderr); tails {tails}")
    assert res.ok


# 9 -------------------------------------------------------------------------

def test_criterion_09_em_concentration():
    start = time.perf_counter()
    cfg = ExperimentConfig("em-concentration", seed=9, budget={"samples": 100_000})
    res = run(cfg)
    elapsed = time.perf_counter() - start
    plus = [r for r in res.records if r["spin"] == 1]
    tails = [(r["ell"], r["tail"]) for r in plus]
    ok = res.passes["tail_strictly_decreasing_spin1"] and elapsed < 300
    record(9, ok, f"(ell, P[|g+ - 1| > 0.1]) over 1e5 samples {tails}; {elapsed:.0f}s")
    assert ok


# 10 ------------------------------------------------------------------------

def test_criterion_10_colorings_uniqueness():
    start = time.perf_counter()
    res = run(ExperimentConfig("model-thresholds", seed=10))
    elapsed = time.perf_counter() - start
    ok = res.passes["q4_tv_below_1e-6"] and res.passes["q3_frozen_tv_one"] and elapsed < 10
    record(10, ok, f"q=4 TV at depth 12 = {res.summary['tv_final']:.3e} (ratio per level "
                   f"{res.summary['tv_ratio']:.3f}); q=3 frozen TV = 1: {res.passes['q3_frozen_tv_one']}; "
                   f"{elapsed:.1f}s")
    assert ok


# 11 ------------------------------------------------------------------------

SLACK = 1e-9
N_FUNCTIONS = 100


def _violation(lhs, rhs) -> bool:
    return bool(np.any(np.asarray(lhs) > np.asarray(rhs) + SLACK * np.maximum(1.0, np.abs(rhs))))


def _tables():
    out = []
    for depth in (2, 3):
        t = TreeTopology(2, depth)
        ising = make_ising(0.6, 0.1)
        out.append(GibbsTable.build(ising, t, BoundaryCondition.plus(ising, t)))
        out.append(GibbsTable.build(make_hardcore(1.5), t, BoundaryCondition.even(t)))
    return out


def _nested_pairs(tree):
    return [(tree.subtree(1), tree.block(1, 1)), (tree.subtree(0), tree.block(2, 2)),
            (Region(tree, np.arange(tree.n)), tree.level_forest(1))]


def _forest_components(tree, i):
    top = tree.level_vertices(tree.depth + 1 - i)
    return [tree.block(int(v), i) for v in top]


def _convex_pairs(tree, rng):
    pairs = []
    while len(pairs) < 4:
        a = Region(tree, rng.choice(tree.n, rng.integers(1, tree.n), replace=False))
        b = Region(tree, rng.choice(tree.n, rng.integers(1, tree.n), replace=False))
        if not set(a.outer_boundary()) & set(b.vertices):
            pairs.append((a, b))
    return pairs


def test_criterion_11_property_suites():
    rng = np.random.default_rng(11)
    counts = dict.fromkeys(["var_dec", "ent_dec", "var_prod", "ent_prod", "convex",
                            "decay_var", "decay_ent", "claim"], 0)
    bad = dict.fromkeys(counts, 0)
    for table in _tables():
        tree = table.tree
        for _ in range(N_FUNCTIONS // 4 + 1):
            f = table.random_function(rng, positive=True)
            # decompositions for nested B in A, pointwise in the outside configuration
            for big, small in _nested_pairs(tree):
                for name, func in (("var_dec", table.var), ("ent_dec", table.ent)):
                    lhs = func(f, big)
                    rhs = table.expect(func(f, small), big) + func(table.expect(f, small), big)
                    counts[name] += 1
                    bad[name] += _violation(np.abs(lhs - rhs), 1e-10 * np.maximum(1.0, lhs))
            # tensorisation over the components of a forest
            for i in (1, 2):
                forest = tree.level_forest(i)
                comps = _forest_components(tree, i)
                for name, func in (("var_prod", table.var), ("ent_prod", table.ent)):
                    lhs = func(f, forest)
                    rhs = sum(table.expect(func(f, c), forest) for c in comps)
                    counts[name] += 1
                    bad[name] += _violation(lhs, rhs)
            for a, b in _convex_pairs(tree, rng):
                lhs = table.prob @ table.var(table.expect(f, b), a)
                inner = table.expect(f, b.intersection(a)) if len(b.intersection(a)) else f
                rhs = table.prob @ table.var(inner, a)
                counts["convex"] += 1
                bad["convex"] += _violation(lhs, rhs)

    # block-form consequences of VM and EM, with measured constants
    for beta, ell, entropy in [(0.6, 1, False), (0.6, 2, False), (0.15, 2, True), (0.1, 1, True)]:
        m, t = make_ising(beta), TreeTopology(2, 2)
        bc = BoundaryCondition.free()
        table = GibbsTable.build(m, t, bc)
        msgs = upward_messages(m, t, bc)
        p_min = pmin(msgs)
        for x in range(t.n):
            for eta in parent_conditionings(msgs, x):
                eps = (em_dobrushin_bound if entropy else vm_root_contraction)(msgs, x, ell, eta)
                for _ in range(N_FUNCTIONS // 10):
                    f = table.random_function(rng, positive=True)
                    chk = decay_vcond_check(table, f, x, ell, eta, eps, entropy=entropy, p_min=p_min)
                    name = "decay_ent" if entropy else "decay_var"
                    counts[name] += chk.applicable
                    bad[name] += not chk.holds

    # Var f <= (3/delta) E_ell(f) when the measured VM constant gives delta > 0
    deltas = []
    for beta, depth, ell in [(0.3, 2, 1), (0.3, 3, 1), (0.5, 2, 2), (0.2, 3, 2)]:
        m, t = make_ising(beta), TreeTopology(2, depth)
        bc = BoundaryCondition.plus(m, t)
        table = GibbsTable.build(m, t, bc)
        delta = spatial_delta(vm_contraction_max(upward_messages(m, t, bc), ell), ell)
        deltas.append(round(delta, 3))
        assert delta > 0, "instance chosen outside the claim's hypothesis"
        for _ in range(N_FUNCTIONS // 4):
            f = table.random_function(rng)
            counts["claim"] += 1
            bad["claim"] += _violation(table.var(f), 3 / delta * block_dirichlet(table, f, ell))
        if table.size <= 2048:
            assert block_gap(table, ell) >= delta / 3

    short = {k: v for k, v in counts.items() if v < N_FUNCTIONS}
    ok = not any(bad.values()) and not short
    record(11, ok, f"checks {counts}, violations {sum(bad.values())}, claim deltas {deltas}")
    assert ok


if __name__ == "__main__":
    code = pytest.main([__file__, "-v"])
    print("\n".join(ACCEPTANCE_LINES))
    sys.exit(code)
