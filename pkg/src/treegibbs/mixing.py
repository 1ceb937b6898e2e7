"""Spatial mixing on trees: variance/entropy mixing, their block-form
consequences, and the concentration of the root likelihood ratio ``g^(l)``.

Conventions: ``x`` is a vertex of T, ``ell`` a block height, and ``eta`` the
spin of the parent of ``x`` (``None`` for the root). The measure
``mu^eta_{T_x}`` depends on the outside configuration only through ``eta``
and the bottom boundary.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import binomtest

from .exact import (ERASED, GibbsTable, MessageSet, block_upward, lse, marginal,
                    normalize_log, sample, upward_messages)
from .model import SpinModel
from .tree import BoundaryCondition, TreeTopology

CONTRACTION_CAP = 1 << 20
ENT_FLOOR = 1e-13


# ---------------------------------------------------------------------------
# dual root contraction


def parent_conditionings(messages: MessageSet, x: int) -> list[int | None]:
    """Parent spins of ``x`` that leave ``mu^eta_{T_x}`` well defined."""
    if x == 0:
        return [None]
    model = messages.model
    out = []
    for s in range(model.spin_count):
        if np.isfinite(lse(messages.log_z[x] + model.log_pair[:, s])):
            out.append(s)
    return out


def subtree_marginal(messages: MessageSet, x: int, parent_spin: int | None) -> np.ndarray:
    """Law of ``sigma_x`` under ``mu^eta_{T_x}`` (edge to the parent dropped if ``eta`` is None)."""
    if x == 0:
        return marginal(messages, 0)
    return marginal(messages, x, ERASED if parent_spin is None else parent_spin)


def root_level_joint(messages: MessageSet, x: int, ell: int,
                     parent_spin: int | None) -> tuple[np.ndarray, np.ndarray]:
    """Joint law of ``sigma_x`` and the spins ``ell`` levels below ``x``.

    Returns ``(posterior, weight)``: ``posterior[w, s] = P(sigma_x = s | w)``
    and ``weight[w] = P(w)`` over all assignments ``w`` of that level, under
    ``mu^eta_{T_x}``. Requires ``1 <= ell <= height(x)``.
    """
    tree, model = messages.tree, messages.model
    q, b = model.spin_count, tree.b
    level = tree.descendants_at(x, ell)
    combos = q ** level.size
    if combos > CONTRACTION_CAP:
        raise ValueError(f"{combos} level assignments exceed the cap {CONTRACTION_CAP}")
    digits = (np.arange(combos)[:, None] // q ** np.arange(level.size)[None, :]) % q
    root = block_upward(model, b, ell - 1, digits, keep_all=False)[0][:, 0, :]
    if parent_spin is not None:
        root = root + model.log_pair[:, parent_spin]
    below = messages.log_z[level][np.arange(level.size)[None, :], digits].sum(axis=1)
    logj = root + below[:, None]
    weight = normalize_log(lse(logj, axis=1), axis=0)
    posterior = np.nan_to_num(normalize_log(logj, axis=1), nan=0.0)
    return posterior, weight


def vm_root_contraction(messages: MessageSet, x: int, ell: int,
                        parent_spin: int | None = None) -> float:
    """``eps* = max_g Var[E_{B_{x,ell}} g] / Var g`` over functions ``g(sigma_x)``.

    Solved as a generalised eigenproblem on the centred functions: with
    ``P`` the marginal of ``sigma_x`` and ``M = E[pi pi^T]`` for the
    posterior ``pi``, ``eps*`` is the second largest eigenvalue of
    ``P^{-1/2} M P^{-1/2}`` (the largest, 1, belongs to constants).
    """
    tree = messages.tree
    x = tree.check_vertex(x)
    if ell < 0:
        raise ValueError("ell must be non-negative")
    if ell > tree.height(x):
        return 0.0
    if ell == 0:
        p = subtree_marginal(messages, x, parent_spin)
        return 1.0 if np.count_nonzero(p > 1e-300) > 1 else 0.0
    posterior, weight = root_level_joint(messages, x, ell, parent_spin)
    p = weight @ posterior
    support = p > 1e-300
    if support.sum() < 2:
        return 0.0
    post = posterior[:, support]
    ps = p[support]
    m = (post * weight[:, None]).T @ post
    scale = 1.0 / np.sqrt(ps)
    sym = scale[:, None] * m * scale[None, :]
    w = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    return float(np.clip(w[-2], 0.0, 1.0))


def em_dobrushin_bound(messages: MessageSet, x: int, ell: int,
                       parent_spin: int | None = None) -> float:
    """Upper bound on the EM constant: worst TV between posteriors of ``sigma_x``.

    ``E_{T~_x} g`` only sees ``g`` through the level ``ell`` below ``x``, so
    the entropy contraction is at most the KL contraction of the channel
    from that level to ``sigma_x``, which the Dobrushin coefficient bounds.
    """
    x = messages.tree.check_vertex(x)
    if ell > messages.tree.height(x):
        return 0.0
    if ell == 0:
        return 1.0
    posterior, weight = root_level_joint(messages, x, ell, parent_spin)
    post = posterior[weight > 0]
    if post.shape[1] == 2:
        return float(post[:, 0].max() - post[:, 0].min())
    if post.shape[0] > 4096:
        raise ValueError("pairwise TV over more than 4096 level assignments")
    worst = 0.0
    for row in post:
        worst = max(worst, 0.5 * float(np.abs(post - row).sum(axis=1).max()))
    return worst


def vm_contraction_max(messages: MessageSet, ell: int, sites=None) -> float:
    """Worst ``eps*`` over sites (default: all of T) and parent spins."""
    sites = range(messages.tree.n) if sites is None else sites
    worst = 0.0
    for x in sites:
        for eta in parent_conditionings(messages, x):
            worst = max(worst, vm_root_contraction(messages, x, ell, eta))
    return worst


# ---------------------------------------------------------------------------
# verification on explicit tables


def subtree_table(table: GibbsTable, x: int, parent_spin: int | None) -> GibbsTable:
    """``mu^eta_{T_x}`` as a table (rows with one fixed outside configuration)."""
    tree = table.tree
    if x == 0:
        return table
    par = int(tree.parent[x])
    rows = np.flatnonzero(table.states[:, par] == parent_spin)
    if rows.size == 0:
        raise ValueError(f"parent spin {parent_spin} impossible at site {x}")
    return table.condition_outside(tree.subtree(x), int(rows[0]))


def _check_block_free(table: GibbsTable, f: np.ndarray, x: int, ell: int) -> None:
    blk = table.tree.block(x, ell)
    proj = table.expect(f, blk)
    scale = max(1.0, float(np.abs(f).max()))
    if np.abs(proj - f).max() > 1e-9 * scale:
        raise ValueError("function depends on the block B_{x,ell}")


def _ratio(num: float, den: float, floor: float) -> float:
    return 0.0 if den < floor else num / den


def vm_verify(table: GibbsTable, f: np.ndarray, x: int, ell: int,
              parent_spin: int | None = None) -> float:
    """``Var^eta_{T_x}[E_{T~_x} f] / Var^eta_{T_x}(f)`` for ``f`` free of the block."""
    _check_block_free(table, f, x, ell)
    sub = subtree_table(table, x, parent_spin)
    fs = f[_row_map(table, sub)]
    proj = sub.expect(fs, table.tree.subtree_tilde(x))
    # a function constant on T_x has only rounding-level variance
    return _ratio(sub.var(proj), sub.var(fs), 1e-20 * sub.expect(fs * fs))


def em_verify(table: GibbsTable, f: np.ndarray, x: int, ell: int,
              parent_spin: int | None = None) -> float:
    """Entropy analogue of :func:`vm_verify`; 0 when ``Ent(f)`` is negligible."""
    _check_block_free(table, f, x, ell)
    sub = subtree_table(table, x, parent_spin)
    fs = f[_row_map(table, sub)]
    proj = sub.expect(fs, table.tree.subtree_tilde(x))
    return _ratio(sub.ent(proj), sub.ent(fs), ENT_FLOOR * sub.expect(fs))


def _row_map(table: GibbsTable, sub: GibbsTable) -> np.ndarray:
    if sub is table:
        return np.arange(table.size)
    return table.index_of(sub.states)


@dataclass
class DecayCheck:
    lhs: float
    rhs: float
    eps: float
    eps_prime: float
    applicable: bool

    @property
    def holds(self) -> bool:
        return (not self.applicable) or self.lhs <= self.rhs + 1e-9 * max(1.0, self.rhs)


def decay_vcond_check(table: GibbsTable, f: np.ndarray, x: int, ell: int,
                      parent_spin: int | None, eps: float, entropy: bool = False,
                      p_min: float | None = None) -> DecayCheck:
    """Block-form consequence of VM (or EM) for an arbitrary function ``f``.

    Variance: ``Var[E_{T~} f] <= (2-e')/(1-e') E[Var_B f] + e'/(1-e') E[Var_{T~} f]``
    with ``e' = 2 eps``, valid for ``eps < 1/2``. Entropy: coefficients
    ``1/(1-e')`` and ``e'/(1-e')`` with ``e' = sqrt(eps)/p_min``, valid for
    ``eps < p_min^2``. Out-of-hypothesis instances are marked inapplicable.
    """
    tree = table.tree
    sub = subtree_table(table, x, parent_spin)
    fs = f[_row_map(table, sub)]
    tilde, blk = tree.subtree_tilde(x), tree.block(x, ell)
    if entropy:
        if p_min is None:
            raise ValueError("entropy check needs p_min")
        applicable = eps < p_min ** 2
        ep = math.sqrt(eps) / p_min if p_min > 0 else math.inf
        functional = sub.ent
        c_block = 1.0 / (1.0 - ep) if applicable else math.nan
    else:
        applicable = eps < 0.5
        ep = 2.0 * eps
        functional = sub.var
        c_block = (2.0 - ep) / (1.0 - ep) if applicable else math.nan
    lhs = functional(sub.expect(fs, tilde))
    if not applicable:
        return DecayCheck(lhs, math.nan, eps, ep, False)
    e_block = float(sub.prob @ functional(fs, blk))
    e_tilde = float(sub.prob @ functional(fs, tilde))
    rhs = c_block * e_block + ep / (1.0 - ep) * e_tilde
    return DecayCheck(lhs, rhs, eps, ep, True)


def spatial_delta(eps: float, ell: int) -> float:
    """``delta`` with ``eps = (1 - delta) / (2 (ell + 1 - delta))``; <= 0 if none."""
    return (1.0 - 2.0 * eps * (ell + 1)) / (1.0 - 2.0 * eps)


# ---------------------------------------------------------------------------
# p_min


def pmin(messages: MessageSet) -> float:
    """Least single-site probability over sites, spins and parent spins."""
    worst = 1.0
    for x in range(messages.tree.n):
        for eta in parent_conditionings(messages, x):
            p = subtree_marginal(messages, x, eta)
            worst = min(worst, float(p.min()))
    return worst


def pmin_bound_ising(beta: float, h: float, b: int) -> float:
    """``1/2 exp(-2 beta (b + 1 + |h|))``.

    A non-root site conditioned on its parent sees ``b + 1`` neighbours, and
    every conditional law is a mixture of single-site laws given all of them.
    """
    return 0.5 * math.exp(-2.0 * beta * (b + 1 + abs(h)))


# ---------------------------------------------------------------------------
# g^(l) statistic


def g_ell(messages: MessageSet, s: int, ell: int, configs: np.ndarray,
          batch: int = 8192) -> np.ndarray:
    """``g_s^(ell)(sigma) = P(sigma_root = s | sigma_L) / P(sigma_root = s)``.

    ``L`` is the set of vertices ``ell`` levels below the root and ``configs``
    holds full configurations (rows). Probabilities are under ``mu``.
    """
    tree, model = messages.tree, messages.model
    if not 1 <= ell <= tree.depth:
        raise ValueError(f"ell must lie in 1..{tree.depth}")
    configs = np.atleast_2d(configs)
    level = tree.level_vertices(ell)
    prior = marginal(messages, 0)[s]
    if prior <= 0:
        raise ValueError(f"spin {s} has zero probability at the root")
    out = np.empty(configs.shape[0])
    for start in range(0, configs.shape[0], batch):
        chunk = configs[start:start + batch, level].astype(np.int64)
        root = block_upward(model, tree.b, ell - 1, chunk, keep_all=False)[0][:, 0, :]
        out[start:start + batch] = normalize_log(root, axis=1)[:, s] / prior
    return out


@dataclass
class TailEstimate:
    ell: int
    delta: float
    samples: int
    exceed: int
    mean_g: float
    stderr_g: float

    @property
    def probability(self) -> float:
        return self.exceed / self.samples

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        ci = binomtest(self.exceed, self.samples).proportion_ci(level, method="wilson")
        return float(ci.low), float(ci.high)


def g_ell_tail(messages: MessageSet, s: int, ell: int, delta: float, samples: int,
               rng: np.random.Generator, configs: np.ndarray | None = None) -> TailEstimate:
    """Estimate ``mu[|g_s^(ell) - 1| > delta]`` from perfect samples."""
    if configs is None:
        configs = sample(messages, rng, samples)
    g = g_ell(messages, s, ell, configs)
    return TailEstimate(ell, delta, g.size, int(np.count_nonzero(np.abs(g - 1.0) > delta)),
                        float(g.mean()), float(g.std(ddof=1) / math.sqrt(g.size)))


# ---------------------------------------------------------------------------
# reports


@dataclass
class MixingReport:
    x: int
    ell: int
    eta: int | None
    epsilon_vm: float
    epsilon_vm_sampled: float = math.nan
    epsilon_em: float = math.nan
    bound_predicted: float = math.nan
    passes: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        flags = d.pop("passes")
        d["eta"] = "" if self.eta is None else self.eta
        d.update({f"pass_{k}": bool(v) for k, v in flags.items()})
        return d


def mixing_report(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                  ells, rng: np.random.Generator, n_functions: int = 50,
                  sites=None, bound_rate: float | None = None,
                  table: GibbsTable | None = None) -> list[MixingReport]:
    """One report per ``(x, ell, eta)``.

    ``epsilon_vm`` is the exact dual contraction. When the tree is small
    enough for an explicit table the sampled VM/EM ratios over random
    block-free functions are added; EM is only ever sampled evidence.
    ``bound_rate`` (e.g. ``gamma kappa b``) gives ``bound_predicted = rate**ell``.
    """
    msgs = upward_messages(model, tree, boundary)
    if table is None and model.spin_count ** tree.n <= 1 << 15:
        table = GibbsTable.build(model, tree, boundary)
    sites = range(tree.n) if sites is None else sites
    reports = []
    for x in sites:
        for eta in parent_conditionings(msgs, x):
            for ell in ells:
                eps = vm_root_contraction(msgs, x, ell, eta)
                rep = MixingReport(x, ell, eta, eps)
                if bound_rate is not None:
                    rep.bound_predicted = bound_rate ** ell
                    rep.passes["vm_bound"] = eps <= rep.bound_predicted + 1e-10
                if table is not None:
                    outside = np.setdiff1d(np.arange(tree.n), tree.block(x, ell).vertices)
                    vm_s, em_s = 0.0, 0.0
                    for _ in range(n_functions):
                        f = table.random_function(rng, depends_on=outside, positive=True)
                        vm_s = max(vm_s, vm_verify(table, f, x, ell, eta))
                        em_s = max(em_s, em_verify(table, f, x, ell, eta))
                    rep.epsilon_vm_sampled, rep.epsilon_em = vm_s, em_s
                    rep.passes["duality"] = vm_s <= eps + 1e-10
                reports.append(rep)
    return reports
