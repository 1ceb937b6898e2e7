"""Closed-form tree recursions, coupling constants and phase boundaries.

Notation for the Ising model on the b-ary tree:

* ``F(a) = (a + e^{-2beta}) / (e^{-2beta} a + 1)`` propagates the
  (-)/(+) probability ratio of a child to its parent's factor;
* ``J(a) = e^{-2 beta h} F(a)^b``; with an all-(+) bottom boundary the
  ratio at a vertex ``l`` levels above the boundary is ``J^(l)(0)``;
* ``K(a) = 1/(e^{-2beta} a + 1) - 1/(e^{2beta} a + 1)`` turns a ratio with
  the parent edge removed into the total-variation influence of the parent.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .exact import MessageSet, marginal, region_marginal, upward_messages
from .model import SpinModel
from .tree import BoundaryCondition, TreeTopology

FIXED_POINT_TOL = 1e-13
FIXED_POINT_ITER = 10_000


def _check_ratio(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("ratio argument must be non-negative")
    return a


def f_beta(a, beta: float):
    a = _check_ratio(a)
    e = math.exp(-2.0 * beta)
    return (a + e) / (e * a + 1.0)


def k_beta(a, beta: float):
    a = _check_ratio(a)
    with np.errstate(over="ignore"):
        return 1.0 / (math.exp(-2.0 * beta) * a + 1.0) - 1.0 / (math.exp(2.0 * beta) * a + 1.0)


def j_map(a, beta: float, h: float, b: int):
    return math.exp(-2.0 * beta * h) * f_beta(a, beta) ** b


def j_prime(a, beta: float, h: float, b: int):
    """Closed-form derivative of ``J`` in ``a``."""
    a = _check_ratio(a)
    e = math.exp(-2.0 * beta)
    dF = (1.0 - e * e) / (e * a + 1.0) ** 2
    return math.exp(-2.0 * beta * h) * b * f_beta(a, beta) ** (b - 1) * dF


def j_iterate(beta: float, h: float, b: int, ell: int, start: float = 0.0) -> np.ndarray:
    """``[J^(0)(start), ..., J^(ell)(start)]``."""
    out = np.empty(ell + 1)
    out[0] = a = float(start)
    for i in range(1, ell + 1):
        a = float(j_map(a, beta, h, b))
        out[i] = a
    return out


def fixed_points(beta: float, h: float, b: int, grid: int = 4001) -> np.ndarray:
    """All fixed points of ``J`` found by sign changes on a log grid.

    Fixed points lie in ``[J(0), J(inf)]``. Tangential (double) roots may be
    missed; this solver is meant as an independent cross-check.
    """
    lo = float(j_map(0.0, beta, h, b))
    hi = math.exp(-2.0 * beta * (h - b))
    if hi - lo < 1e-15 * max(1.0, hi):
        return np.array([lo])
    xs = np.geomspace(lo, hi, grid)

    def g(x):
        return math.log(j_map(x, beta, h, b)) - math.log(x)

    vals = np.log(j_map(xs, beta, h, b)) - np.log(xs)
    roots = []
    for i in range(grid - 1):
        if vals[i] == 0.0:
            roots.append(xs[i])
        elif vals[i] * vals[i + 1] < 0:
            roots.append(brentq(g, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15))
    if vals[-1] == 0.0:
        roots.append(xs[-1])
    return np.array(roots)


def least_fixed_point(beta: float, h: float, b: int, tol: float = FIXED_POINT_TOL,
                      max_iter: int = FIXED_POINT_ITER) -> float:
    """Least fixed point ``a0`` of ``J``.

    Iterates from 0 (monotone increasing towards ``a0``), stopping when
    ``|J(a) - a| < tol`` or after ``max_iter`` steps, then polishes by
    bisection between the last iterate and the first point above it where
    ``J(a) < a``.
    """
    a = 0.0
    for _ in range(max_iter):
        nxt = float(j_map(a, beta, h, b))
        if abs(nxt - a) < tol * max(1.0, a):
            a = nxt
            break
        a = nxt
    lo = a
    if float(j_map(lo, beta, h, b)) - lo < 0:
        return lo
    step = 1e-14 * max(1.0, lo)
    hi = lo + step
    while float(j_map(hi, beta, h, b)) - hi >= 0:
        step *= 2.0
        hi = lo + step
        if step > 1e6 * max(1.0, lo):
            raise RuntimeError("fixed point bracketing failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if float(j_map(mid, beta, h, b)) - mid >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def magnetization_ratio(messages: MessageSet, z: int) -> float:
    """``R_z``: (-)/(+) odds at ``z`` with the edge to its parent removed."""
    if messages.model.name != "ising":
        raise ValueError("magnetization ratio is defined for the Ising model")
    z = messages.tree.check_vertex(z)
    lz = messages.log_z[z]
    return float(math.exp(lz[0] - lz[1]))


# ---------------------------------------------------------------------------
# critical values


def beta0(b: int) -> float:
    return 0.5 * math.log((b + 1) / (b - 1))


def beta1(b: int) -> float:
    r = math.sqrt(b)
    return 0.5 * math.log((r + 1) / (r - 1))


def lambda0(b: int) -> float:
    return b ** b / (b - 1) ** (b + 1)


def critical_field(beta: float, b: int) -> float:
    """``h_c(beta)``: the largest |h| with several fixed points of ``J``.

    At a fixed point ``J' = b K``, so tangency ``J' = 1`` means ``K(a) = 1/b``.
    On ``(0, 1)`` ``K`` increases from 0 to ``tanh(beta)``; the root exists
    iff ``beta > beta0``, and the field making it a fixed point is ``-h_c``.
    """
    if beta <= beta0(b):
        return 0.0
    a = brentq(lambda x: float(k_beta(x, beta)) - 1.0 / b, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
    h = (b * math.log(float(f_beta(a, beta))) - math.log(a)) / (2.0 * beta)
    return max(-h, 0.0)


def potts_beta1(b: int, q: int) -> float:
    """Solve ``(u-1)/(u+q-1) * (u-1)/(u+1) = 1/b`` for ``u = e^{2 beta}``."""
    def lhs(u):
        return (u - 1) / (u + q - 1) * (u - 1) / (u + 1) - 1.0 / b

    hi = 2.0
    while lhs(hi) < 0:
        hi *= 2.0
    lo, hi = 1.0, hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if lhs(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * math.log(0.5 * (lo + hi))


def potts_beta0_upper(b: int, q: int) -> float:
    return 0.5 * math.log((b + q - 1) / (b - 1))


def critical_values(b: int, q: int = 3) -> dict:
    if b < 2 or q < 2:
        raise ValueError("need b >= 2 and q >= 2")
    return {
        "b": b,
        "q": q,
        "beta0": beta0(b),
        "beta1": beta1(b),
        "h_c": lambda beta: critical_field(beta, b),
        "lambda0": lambda0(b),
        "hardcore_cycle_onset": hardcore_cycle_onset(b),
        "potts_beta1": potts_beta1(b, q),
        "potts_beta0_upper": potts_beta0_upper(b, q),
    }


@dataclass(frozen=True)
class PhasePoint:
    b: int
    beta: float
    h: float = 0.0
    beta0: float = field(init=False)
    beta1: float = field(init=False)
    h_c: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta0", beta0(self.b))
        object.__setattr__(self, "beta1", beta1(self.b))
        object.__setattr__(self, "h_c", critical_field(self.beta, self.b))

    @property
    def unique_phase(self) -> bool:
        """True when ``J`` has a single fixed point (``beta <= beta0`` or ``|h| > h_c``)."""
        return self.beta <= self.beta0 or abs(self.h) > self.h_c


# ---------------------------------------------------------------------------
# hard-core recursion


def hardcore_recursion(lam: float, b: int, ell: int, start: float = 0.0) -> np.ndarray:
    """Occupied/empty odds ``R' = lam / (1 + R)^b`` iterated ``ell`` times."""
    out = np.empty(ell + 1)
    out[0] = r = float(start)
    for i in range(1, ell + 1):
        r = lam / (1.0 + r) ** b
        out[i] = r
    return out


def hardcore_fixed_point(lam: float, b: int) -> float:
    """Unique positive solution of ``R (1 + R)^b = lam``."""
    return brentq(lambda r: r * (1.0 + r) ** b - lam, 0.0, lam, xtol=1e-15, rtol=1e-15)


def hardcore_cycle_onset(b: int, tol: float = 1e-12) -> float:
    """Smallest activity at which the fixed point of the recursion stops attracting.

    There ``|g'(R*)| = b R*/(1 + R*)`` reaches 1 and the two-step map splits
    into a stable 2-cycle. Found by bisection in ``lam``.
    """
    def excess(lam):
        r = hardcore_fixed_point(lam, b)
        return b * r / (1.0 + r) - 1.0

    lo, hi = 1e-6, 1.0
    while excess(hi) < 0:
        hi *= 2.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# coupling constants


@dataclass(frozen=True)
class CouplingConstants:
    kappa: float
    gamma: float
    provenance: str
    kappa_bound: float | None = None
    bound_fallback: bool = False

    def __post_init__(self) -> None:
        if self.provenance not in ("analytic", "numeric"):
            raise ValueError("provenance must be analytic or numeric")

    @property
    def product(self) -> float:
        """``gamma * kappa`` (multiply by b for the contraction rate)."""
        return self.gamma * self.kappa


def gamma_ising(beta: float) -> float:
    return math.tanh(beta)


def _is_all_plus(model: SpinModel, boundary: BoundaryCondition) -> bool:
    return not boundary.is_free and bool(np.all(boundary.spins == model.index_of(1)))


def kappa_ising(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                messages: MessageSet | None = None) -> CouplingConstants:
    """Exact finite-tree ``kappa = max_z K(R_z)`` with ``gamma = tanh(beta)``.

    For the all-(+) boundary the infinite-depth bound ``K(a0)`` is attached;
    it is only valid for ``h >= -h_c``, otherwise ``K(1)`` is used and the
    fallback flag is raised.
    """
    if model.name != "ising":
        raise ValueError("kappa_ising needs an Ising model")
    beta, h = model.params["beta"], model.params["h"]
    msgs = messages or upward_messages(model, tree, boundary)
    ratios = np.exp(msgs.log_z[:, 0] - msgs.log_z[:, 1])
    kappa = float(np.max(k_beta(ratios, beta)))
    bound, fallback = None, False
    if _is_all_plus(model, boundary):
        if h >= -critical_field(beta, tree.b) - 1e-12:
            bound = float(k_beta(least_fixed_point(beta, h, tree.b), beta))
        else:
            warnings.warn("h < -h_c: falling back to K(1) for the kappa bound")
            bound, fallback = math.tanh(beta), True
    return CouplingConstants(kappa, gamma_ising(beta), "analytic", bound, fallback)


def tv_disagreement(model: SpinModel, tree: TreeTopology, config: np.ndarray, region,
                    y: int, z: int, free_boundary: bool = False) -> float:
    """``max_{eta'} || mu_A^eta - mu_A^{eta'} ||_z`` over single-site changes at ``y``.

    ``config`` is a full configuration supplying eta outside A; ``y`` must be
    outside A and adjacent to ``z`` in A.
    """
    config = np.array(config, dtype=np.int64)
    if z not in tree.neighbors(y, include_boundary=True) and y not in tree.neighbors(z):
        raise ValueError("y and z must be adjacent")
    base = region_marginal(model, tree, config, region, z, free_boundary)
    worst = 0.0
    for s in range(model.spin_count):
        if s == config[y]:
            continue
        alt = config.copy()
        alt[y] = s
        try:
            other = region_marginal(model, tree, alt, region, z, free_boundary)
        except ValueError:
            continue
        worst = max(worst, 0.5 * float(np.abs(base - other).sum()))
    return worst


def kappa_numeric(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                  messages: MessageSet | None = None) -> float:
    """Finite-tree kappa for any model: worst parent-spin influence on ``T_z``."""
    msgs = messages or upward_messages(model, tree, boundary)
    worst = 0.0
    q = model.spin_count
    for z in range(tree.n):
        margs = []
        for s in range(q):
            try:
                margs.append(marginal(msgs, z, parent_spin=s) if z else
                             _root_with_virtual_parent(msgs, s))
            except ValueError:
                continue
        for p1, p2 in itertools.combinations(margs, 2):
            worst = max(worst, 0.5 * float(np.abs(p1 - p2).sum()))
    return worst


def _root_with_virtual_parent(msgs: MessageSet, s: int) -> np.ndarray:
    from .exact import ImpossibleBoundary, lse, normalize_log

    logp = msgs.log_z[0] + msgs.model.log_pair[:, s]
    if not np.isfinite(lse(logp)):
        raise ImpossibleBoundary("parent spin incompatible with the root")
    return normalize_log(logp)


def _connected_regions(tree: TreeTopology, z: int, size: int) -> list[frozenset]:
    """Connected vertex sets of T containing ``z`` with at most ``size`` vertices."""
    found = {frozenset([z])}
    frontier = [frozenset([z])]
    for _ in range(size - 1):
        nxt = []
        for reg in frontier:
            for v in reg:
                for w in tree.neighbors(v, include_boundary=False):
                    if w not in reg:
                        grown = reg | {w}
                        if grown not in found:
                            found.add(grown)
                            nxt.append(grown)
        frontier = nxt
    return sorted(found, key=lambda r: (len(r), sorted(r)))


def gamma_numeric(model: SpinModel, b: int = 2, max_region: int = 3,
                  max_assignments: int = 1 << 14) -> float:
    """Numeric gamma: exhaustive maximum of ``tv_disagreement`` over small regions.

    Regions are connected sets (up to ``max_region`` vertices) around an
    interior vertex of a depth-3 tree; every boundary assignment of the
    region is tried, capped at ``max_assignments`` per region.
    """
    tree = TreeTopology(b, 3)
    z0 = tree.level_start(1)
    q = model.spin_count
    worst = 0.0
    for reg in _connected_regions(tree, z0, max_region):
        verts = np.array(sorted(reg))
        outer = sorted({w for v in reg for w in tree.neighbors(int(v)) if w not in reg})
        combos = itertools.product(range(q), repeat=len(outer))
        for k, eta in enumerate(combos):
            if k >= max_assignments:
                break
            config = np.zeros(tree.n_total, dtype=np.int64)
            config[outer] = eta
            for y in outer:
                for z in tree.neighbors(y):
                    if z in reg:
                        try:
                            worst = max(worst, tv_disagreement(model, tree, config, verts, y, z))
                        except ValueError:
                            pass
    return worst


def coupling_constants(model: SpinModel, tree: TreeTopology,
                       boundary: BoundaryCondition) -> CouplingConstants:
    """Analytic constants for Ising, numeric estimates otherwise."""
    if model.name == "ising":
        return kappa_ising(model, tree, boundary)
    kappa = kappa_numeric(model, tree, boundary)
    gamma = max(gamma_numeric(model, tree.b), kappa)
    return CouplingConstants(kappa, gamma, "numeric")
