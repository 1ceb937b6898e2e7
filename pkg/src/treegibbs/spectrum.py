"""Generator-level analysis of heat-bath Glauber dynamics on tiny trees.

The generator acts on functions of the valid configurations; each site
carries a rate-1 clock and resamples its spin from the exact conditional
distribution. Everything here is exact up to floating point, apart from
``log_sobolev_upper`` which is an optimisation and only yields an upper
bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, eigsh

from .exact import GibbsTable
from .model import SpinModel
from .tree import BoundaryCondition, TreeTopology

GENERATOR_CAP = 1 << 15
DENSE_EIGEN_CAP = 1 << 11
MIXING_TIME_CAP = 1 << 12
LOG_SOBOLEV_CAP = 1 << 12


class ReducibleChain(RuntimeError):
    """The zero eigenvalue of the generator is not simple."""


@dataclass(eq=False)
class GeneratorMatrix:
    """Sparse heat-bath generator ``L`` over the valid configurations."""

    table: GibbsTable
    L: sp.csr_matrix

    @property
    def mu(self) -> np.ndarray:
        return self.table.prob

    @property
    def size(self) -> int:
        return self.table.size

    @cached_property
    def symmetric(self) -> sp.csr_matrix:
        """``D^{1/2} L D^{-1/2}`` with ``D = diag(mu)``; symmetric by reversibility."""
        r = np.sqrt(self.mu)
        s = sp.diags(r) @ self.L @ sp.diags(1.0 / r)
        return ((s + s.T) * 0.5).tocsr()

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenpairs of ``-symmetric`` in ascending order (dense solver)."""
        if self.size > MIXING_TIME_CAP:
            raise ValueError(f"dense eigendecomposition capped at {MIXING_TIME_CAP} states")
        w, v = sla.eigh(-self.symmetric.toarray())
        return w, v

    def row_sum_error(self) -> float:
        return float(np.abs(np.asarray(self.L.sum(axis=1)).ravel()).max())

    def detailed_balance_error(self) -> float:
        flow = sp.diags(self.mu) @ self.L
        return float(abs(flow - flow.T).max()) if flow.nnz else 0.0

    def min_off_diagonal(self) -> float:
        off = self.L - sp.diags(self.L.diagonal())
        return float(off.data.min()) if off.nnz else 0.0


def build_generator(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                    cap: int = GENERATOR_CAP, table: GibbsTable | None = None) -> GeneratorMatrix:
    """Heat-bath generator: rate ``p_x(s | neighbours)`` for each move ``sigma_x -> s``."""
    table = table or GibbsTable.build(model, tree, boundary, cap=cap)
    if table.size > cap:
        raise ValueError(f"{table.size} states exceed the generator cap {cap}")
    q = model.spin_count
    full = table.full_states().astype(np.int64)
    codes = table.codes
    rows, cols, vals = [], [], []
    idx = np.arange(table.size)
    for x in range(tree.n):
        logp = np.broadcast_to(model.log_single, (table.size, q)).copy()
        for y in tree.neighbors(x, include_boundary=not boundary.is_free):
            logp += model.log_pair[:, full[:, y]].T
        top = logp.max(axis=1, keepdims=True)
        p = np.exp(logp - top)
        p /= p.sum(axis=1, keepdims=True)
        cur = full[:, x]
        for s in range(q):
            move = (cur != s) & (p[:, s] > 0)
            if not move.any():
                continue
            target = codes[move] + (s - cur[move]) * q ** x
            tgt = table.index_of_codes(target)
            if np.any(tgt < 0):
                raise RuntimeError("heat-bath move left the valid state space")
            rows.append(idx[move])
            cols.append(tgt)
            vals.append(p[move, s])
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(table.size, table.size))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return GeneratorMatrix(table, (off + sp.diags(diag)).tocsr())


def _deflated_lanczos(G: GeneratorMatrix, vectors: bool):
    """Two lowest eigenpairs of ``-S + 2 v0 v0^T`` with ``v0 = sqrt(mu)``.

    Moving the stationary direction to eigenvalue 2 leaves the gap (always
    at most 1 for heat-bath) as the lowest eigenvalue.
    """
    minus_s = -G.symmetric
    v0 = np.sqrt(G.mu)
    op = LinearOperator(minus_s.shape, matvec=lambda x: minus_s @ x + 2.0 * v0 * (v0 @ x),
                        dtype=float)
    out = eigsh(op, k=2, which="SA", tol=1e-13, ncv=min(G.size, 40),
                return_eigenvectors=vectors)
    if vectors:
        w, v = out
        order = np.argsort(w)
        return w[order], v[:, order]
    return np.sort(out)


def spectral_gap_exact(G: GeneratorMatrix) -> float:
    """Smallest positive eigenvalue of ``-L``.

    Dense symmetric solve up to ``DENSE_EIGEN_CAP`` states; above that,
    Lanczos on the sparse symmetrised matrix with the stationary direction
    deflated.
    """
    if G.size == 1:
        raise ReducibleChain("a single state has no spectral gap")
    if G.size <= DENSE_EIGEN_CAP:
        w = sla.eigh(-G.symmetric.toarray(), eigvals_only=True, subset_by_index=[0, 1])
    else:
        w = np.concatenate([[0.0], _deflated_lanczos(G, vectors=False)])
    if abs(w[0]) > 1e-8:
        raise RuntimeError(f"lowest eigenvalue {w[0]} is not zero")
    if w[1] < 1e-10:
        raise ReducibleChain("zero eigenvalue is degenerate")
    return float(w[1])


def gap_eigenvector(G: GeneratorMatrix) -> np.ndarray:
    """Eigenfunction of ``-L`` for the gap, normalised to ``Var = 1``."""
    if G.size <= DENSE_EIGEN_CAP:
        _, v = sla.eigh(-G.symmetric.toarray(), subset_by_index=[0, 1])
        psi = v[:, 1]
    else:
        _, v = _deflated_lanczos(G, vectors=True)
        psi = v[:, 0]
    f = psi / np.sqrt(G.mu)
    f -= G.mu @ f
    return f / math.sqrt(G.mu @ f ** 2)


def dirichlet_form(G: GeneratorMatrix, f: np.ndarray) -> float:
    """``1/2 sum mu(sigma) L(sigma, sigma') (f(sigma') - f(sigma))^2``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (G.size,):
        raise ValueError(f"function has shape {f.shape}, generator has {G.size} states")
    coo = G.L.tocoo()
    off = coo.row != coo.col
    r, c, v = coo.row[off], coo.col[off], coo.data[off]
    return float(0.5 * np.sum(G.mu[r] * v * (f[c] - f[r]) ** 2))


def site_variance_sum(table: GibbsTable, f: np.ndarray) -> float:
    """``sum_x mu(Var_x f)``; equals the heat-bath Dirichlet form."""
    return block_dirichlet(table, f, 1)


def block_dirichlet(table: GibbsTable, f: np.ndarray, ell: int) -> float:
    """``E_ell(f) = sum_x mu(Var_{B_{x,ell}} f)``."""
    tree = table.tree
    total = 0.0
    for x in range(tree.n):
        total += float(table.prob @ table.var(f, tree.block(x, ell)))
    return total


def rayleigh_quotient(G: GeneratorMatrix, f: np.ndarray) -> float:
    var = G.table.var(f)
    if var <= 0:
        raise ValueError("constant function")
    return dirichlet_form(G, f) / var


def block_gap(table: GibbsTable, ell: int) -> float:
    """Gap of the block dynamics that resamples each ``B_{x,ell}`` at rate 1.

    Its Dirichlet form is ``E_ell``, so this is ``inf E_ell(f) / Var(f)``.
    """
    if table.size > DENSE_EIGEN_CAP:
        raise ValueError(f"block gap is capped at {DENSE_EIGEN_CAP} states")
    tree = table.tree
    mu = table.prob
    r = np.sqrt(mu)
    gen = np.zeros((table.size, table.size))
    for x in range(tree.n):
        gid = table.group_ids(tree.block(x, ell))
        mass = np.bincount(gid, weights=mu)
        same = gid[:, None] == gid[None, :]
        gen += np.where(same, mu[None, :] / mass[gid][:, None], 0.0)
        gen -= np.eye(table.size)
    sym = r[:, None] * gen / r[None, :]
    sym = 0.5 * (sym + sym.T)
    w = sla.eigh(-sym, eigvals_only=True, subset_by_index=[0, 1])
    return float(w[1])


# ---------------------------------------------------------------------------
# log-Sobolev


def _entropy_of_square(mu: np.ndarray, g: np.ndarray) -> tuple[float, np.ndarray]:
    """``Ent(g^2)`` and its gradient in ``g``, computed without cancellation."""
    f = g * g
    m = float(mu @ f)
    d = (f - m) / m
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(d > -1.0, (1.0 + d) * np.log1p(d) - d, 1.0)
        logratio = np.where(f > 0, np.log1p(d), 0.0)
    ent = m * float(mu @ terms)
    grad = 2.0 * mu * g * logratio
    return ent, grad


def _sobolev_ratio(quad: sp.csr_matrix, mu: np.ndarray, g: np.ndarray):
    e = float(g @ (quad @ g))
    ent, dent = _entropy_of_square(mu, g)
    if ent <= 1e-14 * float(mu @ (g * g)):
        return math.inf, np.zeros_like(g)
    de = 2.0 * (quad @ g)
    return e / ent, (de * ent - e * dent) / ent ** 2


def log_sobolev_upper(G: GeneratorMatrix, restarts: int = 8, iterations: int = 300,
                      rng: np.random.Generator | None = None) -> float:
    """Best value of ``E(sqrt f) / Ent(f)`` found over ``f >= 0``.

    Minimises over ``g = sqrt f`` with L-BFGS from several starts: small
    perturbations ``1 + eps * v`` of the gap eigenfunction (whose ratio tends
    to ``gap / 2``), single-site tilts and random log-normal functions. The
    result is an upper bound on the log-Sobolev constant.
    """
    if G.size > LOG_SOBOLEV_CAP:
        raise ValueError(f"log-Sobolev search capped at {LOG_SOBOLEV_CAP} states")
    rng = rng or np.random.default_rng(0)
    mu = G.mu
    quad = (-(sp.diags(mu) @ G.L)).tocsr()
    quad = ((quad + quad.T) * 0.5).tocsr()

    def value(g):
        return _sobolev_ratio(quad, mu, np.abs(g))[0]

    starts = []
    v = gap_eigenvector(G)
    for eps in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        for sign in (1.0, -1.0):
            starts.append(1.0 + sign * eps * v)
    tree = G.table.tree
    for x in range(min(tree.n, 4)):
        for s in range(G.table.model.spin_count):
            for t in (0.1, 4.0):
                starts.append(np.where(G.table.states[:, x] == s, math.sqrt(t), 1.0))
    for _ in range(restarts):
        starts.append(np.exp(0.5 * rng.standard_normal(G.size) * rng.uniform(0.2, 2.0)))

    best = math.inf
    for g0 in starts:
        best = min(best, value(g0))
    # polish the most promising starts
    ranked = sorted(starts, key=value)[: max(2, restarts // 2)]
    ranked += starts[-restarts:] if restarts else []
    for g0 in ranked:
        res = minimize(lambda g: _sobolev_ratio(quad, mu, g), g0, jac=True,
                       method="L-BFGS-B", options={"maxiter": iterations})
        if np.all(np.isfinite(res.x)):
            best = min(best, value(res.x))
    if not math.isfinite(best):
        raise RuntimeError("every log-Sobolev start was degenerate")
    return best


def bernoulli_alpha(p: float) -> float:
    """Constant ``alpha(p)`` with ``Ent(g) <= alpha Var(sqrt g)`` on a Bernoulli(p) space.

    ``alpha(p) = log(p/(1-p)) / (2p - 1)``, extended continuously by 2 at
    ``p = 1/2``.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    x = p - 0.5
    if abs(x) < 1e-6:
        return 2.0 + 8.0 * x * x / 3.0
    return math.log(p / (1.0 - p)) / (2.0 * p - 1.0)


# ---------------------------------------------------------------------------
# mixing times


def _distance_curve(G: GeneratorMatrix, p: int):
    if G.size > MIXING_TIME_CAP:
        raise ValueError(f"exact mixing times capped at {MIXING_TIME_CAP} states")
    lam, vec = G.eigh
    mu = G.mu
    if p == 2:
        weights = vec[:, 1:] ** 2 / mu[:, None]
        rates = lam[1:]

        def dist(t):
            return math.sqrt(max(float(np.max(weights @ np.exp(-2.0 * t * rates))), 0.0))
    elif p == 1:
        r = np.sqrt(mu)

        def dist(t):
            kern = (vec * np.exp(-t * lam)) @ vec.T
            pt = kern * (r[None, :] / r[:, None])
            return float(np.max(np.abs(pt - mu[None, :]).sum(axis=1)))
    else:
        raise ValueError("p must be 1 or 2")
    return dist


def mixing_time_exact(G: GeneratorMatrix, p: int = 1, threshold: float = math.exp(-1),
                      tol: float = 1e-6) -> float:
    """``T_p = min{t : max_sigma || h_t^sigma - 1 ||_{L^p(mu)} <= threshold}``.

    ``h_t^sigma`` is the density of the law at time t started from sigma.
    Uses the spectral decomposition of the symmetrised generator; for
    ``p = 2`` the identity ``||h_t - 1||_2^2 = P_{2t}(sigma, sigma)/mu(sigma) - 1``
    avoids forming full rows. Bisection returns the upper end of the final
    bracket, so the result never undershoots by more than rounding.
    """
    dist = _distance_curve(G, p)
    if dist(0.0) <= threshold:
        return 0.0
    hi = 1.0
    while dist(hi) > threshold:
        hi *= 2.0
        if hi > 1e9:
            raise RuntimeError("distance does not fall below the threshold")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dist(mid) > threshold:
            lo = mid
        else:
            hi = mid
    return hi


def distance_to_stationarity(G: GeneratorMatrix, t: float, p: int = 1) -> float:
    return _distance_curve(G, p)(t)


def autocorrelation_exact(G: GeneratorMatrix, f: np.ndarray, times) -> np.ndarray:
    """Stationary autocorrelation ``Cov(f(X_0), f(X_t)) / Var f`` by eigen-expansion."""
    w, v = G.eigh
    mu = G.mu
    f = np.asarray(f, dtype=float)
    c = v.T @ (np.sqrt(mu) * (f - mu @ f))
    weights = c ** 2
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return np.exp(-np.outer(times, np.clip(w, 0, None))) @ weights / weights.sum()
