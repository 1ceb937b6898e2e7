"""Exact inference on trees.

Two independent routes are provided:

* dynamic programming over subtree partition weights (``upward_messages``,
  ``marginal``, ``sample``), all in log space;
* explicit enumeration of the valid configurations (``GibbsTable``), used as
  the oracle for the DP and as the substrate for exact Var/Ent functionals.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import xlogy

from .model import SpinModel
from .tree import BoundaryCondition, Region, TreeTopology

ENUMERATION_CAP = 1 << 20

# marginal() conditioning keyword for "edge to the parent erased"
ERASED = "erased"


class TooLargeError(ValueError):
    """Requested exact table exceeds the enumeration cap."""


class ImpossibleBoundary(ValueError):
    """No valid configuration is compatible with the boundary."""


def lse(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """``log(sum(exp(a)))`` along ``axis``; all ``-inf`` input gives ``-inf``."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def normalize_log(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Turn log weights into probabilities along ``axis``."""
    with np.errstate(invalid="ignore"):
        return np.exp(a - np.expand_dims(lse(a, axis), axis))


def block_upward(model: SpinModel, b: int, depth: int, bottom: np.ndarray | None,
                 keep_all: bool = True) -> list[np.ndarray]:
    """Upward pass over a complete b-ary tree of the given depth.

    ``bottom`` holds the spins of the ``b**(depth+1)`` vertices below the
    leaves (leading batch axes allowed) or is ``None`` for a free bottom.
    Returns per-level arrays ``(..., b**k, q)`` of log subtree weights
    (level 0 first); only the root level when ``keep_all`` is false.
    """
    q = model.spin_count
    lp, ls = model.log_pair, model.log_single
    width = b ** depth
    if bottom is None:
        cur = np.broadcast_to(ls, (width, q)).copy()
    else:
        bottom = np.asarray(bottom, dtype=np.int64)
        batch = bottom.shape[:-1]
        contrib = np.moveaxis(lp[:, bottom], 0, -1)
        cur = contrib.reshape(batch + (width, b, q)).sum(axis=-2) + ls
    levels = [cur]
    for k in range(depth - 1, -1, -1):
        msg = lse(cur[..., None, :] + lp, axis=-1)
        cur = msg.reshape(msg.shape[:-2] + (b ** k, b, q)).sum(axis=-2) + ls
        if keep_all:
            levels.append(cur)
        else:
            levels = [cur]
    return levels[::-1]


@dataclass(frozen=True, eq=False)
class MessageSet:
    """Log subtree weights ``log Z_x(s)`` for every vertex of T.

    ``Z_x(s)`` is the total weight of the configurations of the subtree of
    ``x`` (bottom boundary included, edge to the parent excluded) with
    ``sigma_x = s``.
    """

    model: SpinModel
    tree: TreeTopology
    boundary: BoundaryCondition
    log_z: np.ndarray

    @property
    def log_partition(self) -> float:
        return float(lse(self.log_z[0]))

    def child_messages(self, x: np.ndarray) -> np.ndarray:
        """``(len(x), b, q)`` log messages from each child into its parent."""
        kids = self.tree.children[x]
        if kids[0, 0] >= self.tree.n:
            if self.boundary.is_free:
                return np.zeros(kids.shape + (self.model.spin_count,))
            tau = self.boundary.spins[kids - self.tree.n]
            return np.moveaxis(self.model.log_pair[:, tau], 0, -1)
        return lse(self.log_z[kids][..., None, :] + self.model.log_pair, axis=-1)

    @cached_property
    def log_outside(self) -> np.ndarray:
        """Log weight of everything outside the subtree of ``x`` given ``sigma_x``."""
        tree, lp, ls = self.tree, self.model.log_pair, self.model.log_single
        out = np.zeros_like(self.log_z)
        b = tree.b
        for k in range(tree.depth):
            xs = tree.level_vertices(k)
            msgs = self.child_messages(xs)
            for j in range(b):
                others = [i for i in range(b) if i != j]
                rest = out[xs] + ls + msgs[:, others, :].sum(axis=1)
                kids = tree.children[xs, j]
                out[kids] = lse(rest[:, None, :] + lp, axis=-1)
        out.setflags(write=False)
        return out

    @cached_property
    def conditional_tables(self) -> np.ndarray:
        """``(n, q, q)``: child spin distribution given the parent spin."""
        lp = self.model.log_pair
        t = normalize_log(self.log_z[:, None, :] + lp[None, :, :], axis=-1)
        return np.nan_to_num(t, nan=0.0)


def upward_messages(model: SpinModel, tree: TreeTopology,
                    boundary: BoundaryCondition) -> MessageSet:
    boundary.check(tree, model.spin_count)
    bottom = None if boundary.is_free else boundary.spins
    levels = block_upward(model, tree.b, tree.depth, bottom)
    log_z = np.concatenate(levels, axis=0)
    if not np.isfinite(lse(log_z[0])):
        raise ImpossibleBoundary("no valid configuration for this boundary")
    log_z.setflags(write=False)
    return MessageSet(model, tree, boundary, log_z)


def marginal(messages: MessageSet, site: int, parent_spin: int | str | None = None) -> np.ndarray:
    """Exact single-site distribution at ``site``.

    ``parent_spin=None`` gives the marginal of the full Gibbs measure; an
    integer gives the subtree measure with the parent's spin fixed; ``ERASED``
    gives the subtree measure with the edge to the parent removed.
    """
    site = messages.tree.check_vertex(site)
    logz = messages.log_z[site]
    if parent_spin is None:
        logp = logz + messages.log_outside[site]
    elif parent_spin == ERASED:
        logp = logz
    else:
        if site == 0:
            raise ValueError("the root has no parent to condition on")
        logp = logz + messages.model.log_pair[:, int(parent_spin)]
    if not np.isfinite(lse(logp)):
        raise ImpossibleBoundary(f"conditioning at site {site} has zero probability")
    return normalize_log(logp)


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw; ``cum`` has the spin axis last."""
    return np.minimum((u[..., None] >= cum).sum(axis=-1), cum.shape[-1] - 1)


def sample(messages: MessageSet, rng: np.random.Generator, size: int | None = None,
           root_spin: int | None = None, batch: int = 16384) -> np.ndarray:
    """Perfect samples from the Gibbs measure (boundary spins inline).

    Returns an int8 array ``(size, n_total)`` (or ``(n_total,)`` when
    ``size`` is None); free boundary vertices hold -1. ``root_spin`` samples
    from the measure conditioned on the root's spin instead.
    """
    tree = messages.tree
    count = 1 if size is None else int(size)
    root_p = marginal(messages, 0)
    cond = np.cumsum(messages.conditional_tables, axis=-1)
    root_cum = np.cumsum(root_p)
    out = np.empty((count, tree.n_total), dtype=np.int8)
    for start in range(0, count, batch):
        stop = min(count, start + batch)
        m = stop - start
        block = out[start:stop]
        if root_spin is None:
            block[:, 0] = _draw(root_cum, rng.random(m))
        else:
            block[:, 0] = root_spin
        for k in range(1, tree.depth + 1):
            kids = tree.level_vertices(k)
            par_spin = block[:, tree.parent[kids]].astype(np.int64)
            cum = cond[kids[None, :], par_spin]
            block[:, kids] = _draw(cum, rng.random((m, kids.size)))
    out[:, tree.n:] = -1 if messages.boundary.is_free else messages.boundary.spins
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# enumeration oracle


def enumerate_valid(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                    cap: int = ENUMERATION_CAP, prefix: Sequence[int] = ()
                    ) -> tuple[np.ndarray, np.ndarray]:
    """All valid interior configurations and their log Gibbs weights.

    Vertices are added one at a time in breadth-first order and forbidden
    partial assignments are pruned immediately. ``prefix`` pins the first
    vertices. Raises ``TooLargeError`` when more than ``cap`` states survive.
    """
    boundary.check(tree, model.spin_count)
    q = model.spin_count
    lp, ls = model.log_pair, model.log_single

    def leaf_term(v, spins):
        # boundary edges are scored as soon as the leaf is set, so pruning is early
        if boundary.is_free or tree.level[v] != tree.depth:
            return 0.0
        return sum(lp[spins, boundary.spins[c - tree.n]] for c in tree.children[v])

    if prefix:
        states = np.array([list(prefix)], dtype=np.int8)
        logw = np.array([ls[prefix[0]] + leaf_term(0, prefix[0])])
        for v in range(1, len(prefix)):
            logw = logw + ls[prefix[v]] + lp[prefix[tree.parent[v]], prefix[v]] + leaf_term(v, prefix[v])
    else:
        states = np.arange(q, dtype=np.int8)[:, None]
        logw = ls + leaf_term(0, np.arange(q))
    keep = np.isfinite(logw)
    states, logw = states[keep], logw[keep]
    for v in range(states.shape[1], tree.n):
        p = int(tree.parent[v])
        spins = np.tile(np.arange(q, dtype=np.int8), states.shape[0])
        states = np.repeat(states, q, axis=0)
        logw = np.repeat(logw, q) + ls[spins] + lp[states[:, p], spins] + leaf_term(v, spins)
        keep = np.isfinite(logw)
        states = np.column_stack([states[keep], spins[keep]])
        logw = logw[keep]
        if states.shape[0] > cap:
            raise TooLargeError(f"more than {cap} valid states")
    return states, logw


DENSE_CAP = 1 << 24


def dense_log_weights(model: SpinModel, tree: TreeTopology,
                      boundary: BoundaryCondition) -> np.ndarray:
    """Log Gibbs weight of every configuration as a tensor with one axis per vertex."""
    boundary.check(tree, model.spin_count)
    q, n = model.spin_count, tree.n
    if q ** n > DENSE_CAP:
        raise TooLargeError(f"{q}^{n} configurations exceed the dense cap")

    def along(*axes):
        shape = [1] * n
        for a in axes:
            shape[a] = q
        return shape

    # fold each vertex's single-site and boundary terms into the edge to its parent
    site = np.tile(model.log_single, (n, 1))
    if not boundary.is_free:
        for c in tree.boundary_vertices:
            site[tree.parent[c]] += model.log_pair[:, boundary.spins[c - n]]
    logw = np.zeros((q,) * n)
    logw += site[0].reshape(along(0))
    for p, c in tree.edges(include_boundary=False):
        logw += (model.log_pair + site[c][None, :]).reshape(along(p, c))
    return logw


def brute_force_marginals(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                          prefix_vertices: int = 0) -> tuple[float, np.ndarray]:
    """Log partition function and all single-site marginals by enumeration.

    Soft models small enough for a dense weight tensor are summed directly.
    Otherwise valid configurations are enumerated, streaming over the
    assignments of the first ``prefix_vertices`` vertices so that state
    spaces larger than the table cap can still be summed.
    """
    q = model.spin_count
    if not model.has_hard_constraints and q ** tree.n <= DENSE_CAP:
        logw = dense_log_weights(model, tree, boundary)
        log_z = float(lse(logw.ravel()))
        prob = np.exp(logw - log_z)
        axes = range(tree.n)
        marg = np.stack([prob.sum(axis=tuple(a for a in axes if a != v)) for v in axes])
        return log_z, marg
    chunks = itertools.product(range(q), repeat=prefix_vertices) if prefix_vertices else [()]
    log_parts, marg_parts = [], []
    for pre in chunks:
        states, logw = enumerate_valid(model, tree, boundary, cap=1 << 25, prefix=pre)
        if logw.size == 0:
            continue
        m = logw.max()
        w = np.exp(logw - m)
        per_site = np.stack([np.bincount(states[:, v], weights=w, minlength=q)
                             for v in range(tree.n)])
        log_parts.append(m + np.log(w.sum()))
        marg_parts.append((m, per_site))
    if not log_parts:
        raise ImpossibleBoundary("no valid configuration for this boundary")
    log_z = float(lse(np.array(log_parts)))
    marg = sum(np.exp(m - log_z) * ps for m, ps in marg_parts)
    return log_z, marg


class GibbsTable:
    """Explicit Gibbs distribution over the valid configurations of T.

    ``states`` is ``(N, n)`` (interior spins only); functions on the state
    space are plain arrays of length N aligned with ``states``.
    """

    def __init__(self, model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                 states: np.ndarray, logw: np.ndarray):
        self.model = model
        self.tree = tree
        self.boundary = boundary
        self.states = np.ascontiguousarray(states, dtype=np.int8)
        self.log_partition = float(lse(logw))
        self.prob = np.exp(logw - self.log_partition)
        self._groups: dict[bytes, np.ndarray] = {}

    @classmethod
    def build(cls, model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
              cap: int = ENUMERATION_CAP) -> "GibbsTable":
        if model.spin_count ** tree.n > cap and not model.has_hard_constraints:
            raise TooLargeError(f"{model.spin_count}^{tree.n} states exceed the cap {cap}")
        states, logw = enumerate_valid(model, tree, boundary, cap)
        if logw.size == 0:
            raise ImpossibleBoundary("no valid configuration for this boundary")
        return cls(model, tree, boundary, states, logw)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def _codes(self, cols: np.ndarray) -> np.ndarray:
        weights = self.model.spin_count ** np.arange(cols.size, dtype=np.int64)
        return self.states[:, cols].astype(np.int64) @ weights

    @cached_property
    def codes(self) -> np.ndarray:
        return self._codes(np.arange(self.tree.n))

    @cached_property
    def _sorted(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.codes)
        return order, self.codes[order]

    def index_of(self, states: np.ndarray) -> np.ndarray:
        """Row indices of the given interior configurations (-1 if invalid)."""
        states = np.atleast_2d(states)
        weights = self.model.spin_count ** np.arange(self.tree.n, dtype=np.int64)
        return self.index_of_codes(states.astype(np.int64) @ weights)

    def index_of_codes(self, codes: np.ndarray) -> np.ndarray:
        """Row indices for packed configuration codes (-1 if absent)."""
        codes = np.asarray(codes, dtype=np.int64)
        order, sorted_codes = self._sorted
        pos = np.clip(np.searchsorted(sorted_codes, codes), 0, sorted_codes.size - 1)
        found = sorted_codes[pos] == codes
        return np.where(found, order[pos], -1)

    def full_states(self) -> np.ndarray:
        return self.boundary.full_config(self.tree, self.states)

    def group_ids(self, region) -> np.ndarray:
        """Label of each state's configuration outside ``region``."""
        verts = _vertices(region)
        key = verts.tobytes()
        if key not in self._groups:
            outside = np.setdiff1d(np.arange(self.tree.n), verts)
            if outside.size == 0:
                gid = np.zeros(self.size, dtype=np.int64)
            else:
                gid = np.unique(self._codes(outside), return_inverse=True)[1].ravel()
            self._groups[key] = gid
        return self._groups[key]

    def expect(self, f, region=None):
        """``mu(f)`` or, with a region A, the projection ``eta -> mu_A^eta(f)``."""
        f = self._as_array(f)
        if region is None:
            return float(self.prob @ f)
        gid = self.group_ids(region)
        num = np.bincount(gid, weights=self.prob * f)
        den = np.bincount(gid, weights=self.prob)
        return (num / den)[gid]

    def var(self, f, region=None):
        f = self._as_array(f)
        if region is None:
            m = self.prob @ f
            return float(max(self.prob @ (f - m) ** 2, 0.0))
        m = self.expect(f, region)
        return np.maximum(self.expect((f - m) ** 2, region), 0.0)

    def ent(self, f, region=None):
        f = self._as_array(f)
        if np.any(f < 0):
            raise ValueError("entropy needs a non-negative function")
        flogf = xlogy(f, f)
        if region is None:
            m = float(self.prob @ f)
            return float(max(self.prob @ flogf - xlogy(m, m), 0.0))
        m = self.expect(f, region)
        return np.maximum(self.expect(flogf, region) - xlogy(m, m), 0.0)

    def condition(self, mask: np.ndarray) -> "GibbsTable":
        """Restriction to the states selected by ``mask``, renormalised."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("conditioning on an empty event")
        logw = np.log(self.prob[mask])
        return GibbsTable(self.model, self.tree, self.boundary, self.states[mask], logw)

    def condition_outside(self, region, state_index: int) -> "GibbsTable":
        """``mu_A^eta`` for eta the configuration of row ``state_index``."""
        gid = self.group_ids(region)
        return self.condition(gid == gid[state_index])

    def site_marginal(self, site: int) -> np.ndarray:
        return np.bincount(self.states[:, site], weights=self.prob,
                           minlength=self.model.spin_count)

    def site_function(self, site: int, values: Sequence[float]) -> np.ndarray:
        """The function ``sigma -> values[sigma_site]``."""
        return np.asarray(values, dtype=float)[self.states[:, site]]

    def random_function(self, rng: np.random.Generator, depends_on=None,
                        positive: bool = False) -> np.ndarray:
        """Exponentiated-Gaussian (positive) or Gaussian random function.

        With ``depends_on`` (a region or vertex list) the function only reads
        those spins.
        """
        if depends_on is None:
            gid = np.arange(self.size)
        else:
            verts = _vertices(depends_on)
            gid = self.group_ids(np.setdiff1d(np.arange(self.tree.n), verts))
        z = rng.standard_normal(gid.max() + 1)
        return np.exp(z)[gid] if positive else z[gid]

    def to_csv(self, path: str | Path) -> None:
        """Dump ``(config bitstring, probability)`` rows for debugging."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config", "probability"])
            for s, p in zip(self.states, self.prob):
                w.writerow(["".join(str(int(v)) for v in s), repr(float(p))])

    def _as_array(self, f) -> np.ndarray:
        if callable(f):
            f = np.array([f(s) for s in self.states], dtype=float)
        f = np.asarray(f, dtype=float)
        if f.shape != (self.size,):
            raise ValueError(f"function table has shape {f.shape}, expected ({self.size},)")
        return f


def _vertices(region) -> np.ndarray:
    if isinstance(region, Region):
        return region.vertices
    return np.unique(np.asarray(list(region) if not isinstance(region, np.ndarray) else region,
                                dtype=np.int64))


# functional wrappers

def var_of(table: GibbsTable, f) -> float:
    return table.var(f)


def ent_of(table: GibbsTable, f) -> float:
    return table.ent(f)


def conditional_var(table: GibbsTable, f, region) -> np.ndarray:
    return table.var(f, region)


def conditional_ent(table: GibbsTable, f, region) -> np.ndarray:
    return table.ent(f, region)


def projection(table: GibbsTable, f, region) -> np.ndarray:
    return table.expect(f, region)


def exact_table(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                cap: int = ENUMERATION_CAP) -> GibbsTable:
    return GibbsTable.build(model, tree, boundary, cap)


def region_marginal(model: SpinModel, tree: TreeTopology, config: np.ndarray,
                    region, site: int, free_boundary: bool = False,
                    erased: int | None = None) -> np.ndarray:
    """Marginal at ``site`` of ``mu_A^eta`` for a region A of T.

    ``config`` is a full configuration (interior then boundary) supplying
    eta outside A. The region may be any vertex set; the computation runs
    a DP over the component of A containing ``site``. ``erased`` names a
    neighbour of ``site`` whose edge is dropped.
    """
    inside = np.zeros(tree.n_total, dtype=bool)
    inside[_vertices(region)] = True
    if not inside[site]:
        raise ValueError("site must lie in the region")
    lp, ls = model.log_pair, model.log_single

    def nbrs(v):
        return tree.neighbors(v, include_boundary=not free_boundary)

    def upward(v, came_from):
        acc = ls.copy()
        for w in nbrs(v):
            if w == came_from or (v == site and w == erased):
                continue
            if inside[w]:
                acc = acc + lse(upward(w, v)[None, :] + lp, axis=-1)
            else:
                acc = acc + lp[:, int(config[w])]
        return acc

    logp = upward(site, -1)
    if not np.isfinite(lse(logp)):
        raise ImpossibleBoundary("conditioning has zero probability")
    return normalize_log(logp)
