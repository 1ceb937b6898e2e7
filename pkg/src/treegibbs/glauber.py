"""Seeded continuous-time heat-bath Glauber dynamics and couplings.

The chain is simulated in uniformised form: at each event a uniformly chosen
site of T resamples its spin from the exact conditional law, and time
advances by an exponential variate of mean ``1/n``. This has the law of the
rate-1-per-site continuous-time dynamics.

Every update draws its spin by inverse CDF from a single uniform, scanning
the spins in a per-site order. For the Ising model (order: -, +) and the
hard-core model (checkerboard: even levels list empty first, odd levels
occupied first) this makes the update monotone, so chains driven by the same
``(site, uniform)`` sequence stay ordered: the grand coupling.

Each replica owns a PCG64 generator spawned from the run seed, so results
do not depend on how replicas are split across worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import binomtest

from .exact import MessageSet, marginal, region_marginal, sample, upward_messages
from .model import FrozenContradiction, SpinModel, site_conditional
from .tree import BoundaryCondition, TreeTopology


class NotMonotone(ValueError):
    """Grand coupling requested for a model without a monotone update order."""


class InsufficientSignal(RuntimeError):
    """Autocorrelation hits the noise floor before the fit window is covered."""


class ReplicaBudgetError(ValueError):
    """Too few replicas to resolve the requested distance."""


def worker_count() -> int:
    env = os.environ.get("TREEGIBBS_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def replica_rng(seed: int, r: int) -> np.random.Generator:
    """Generator of replica ``r``: child ``r`` of ``SeedSequence(seed)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,))))


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True, nogil=True)
def _draw_spin(x, config, nbr, n, free, lp, ls, order, u, logp, p):
    q = ls.shape[0]
    for s in range(q):
        logp[s] = ls[s]
    for j in range(nbr.shape[1]):
        y = nbr[x, j]
        if y < 0 or (free and y >= n):
            continue
        t = config[y]
        for s in range(q):
            logp[s] += lp[s, t]
    top = -np.inf
    for s in range(q):
        if logp[s] > top:
            top = logp[s]
    total = 0.0
    for s in range(q):
        p[s] = math.exp(logp[s] - top) if logp[s] > -np.inf else 0.0
        total += p[s]
    target = u * total
    acc = 0.0
    last = order[x, 0]
    for k in range(q):
        s = order[x, k]
        if p[s] > 0.0:
            acc += p[s]
            last = s
            if target < acc:
                return s
    return last


@numba.njit(cache=True, nogil=True)
def _run_observed(g, nbr, n, free, lp, ls, order, start, grid, site, out):
    """Record ``config[site]`` at each grid time; returns the event count."""
    config = start.copy()
    logp = np.empty(ls.shape[0])
    p = np.empty(ls.shape[0])
    t = 0.0
    k = 0
    count = 0
    kmax = grid.shape[0]
    while k < kmax:
        t_next = t + g.exponential(1.0 / n)
        while k < kmax and grid[k] < t_next:
            out[k] = config[site]
            k += 1
        v = g.random() * n
        x = int(v)
        config[x] = _draw_spin(x, config, nbr, n, free, lp, ls, order, v - x, logp, p)
        count += 1
        t = t_next
    return count


@numba.njit(cache=True, nogil=True)
def _run_final(g, nbr, n, free, lp, ls, order, start, horizon, out):
    config = start.copy()
    logp = np.empty(ls.shape[0])
    p = np.empty(ls.shape[0])
    t = g.exponential(1.0 / n)
    while t < horizon:
        v = g.random() * n
        x = int(v)
        config[x] = _draw_spin(x, config, nbr, n, free, lp, ls, order, v - x, logp, p)
        t += g.exponential(1.0 / n)
    out[:] = config


@numba.njit(cache=True, nogil=True)
def _coalesce(g, nbr, thr, first, rank, top0, bot0, max_steps, check):
    """Two-state grand coupling with threshold tables; returns (time, order violations).

    ``nbr[x]`` lists interior neighbours padded with the dummy site ``n``
    (always 0), ``thr[x, k]`` is the probability of spin ``first[x]`` when
    ``k`` of them hold spin 1. Both chains live in one byte per site
    (top + 16 * bottom), so one neighbour sum gives both counts. One uniform
    per event picks the site (integer part of ``n u``) and the inverse-CDF
    value (fractional part). Event times are independent of that sequence,
    so the time of the N-th event is drawn afterwards as Gamma(N, 1/n).
    """
    n = top0.shape[0]
    deg = nbr.shape[1]
    code = np.zeros(n + 1, np.uint8)
    diff = 0
    for i in range(n):
        code[i] = top0[i] + 16 * bot0[i]
        diff += top0[i] != bot0[i]
    block = 4096
    steps = 0
    bad = 0
    while diff > 0 and steps < max_steps:
        buf = g.random(block)
        for i in range(block):
            v = buf[i] * n
            x = int(v)
            u = v - x
            s = 0
            for j in range(deg):
                s += code[nbr[x, j]]
            f = first[x]
            st = f ^ np.uint8(u >= thr[x, s & 15])
            sb = f ^ np.uint8(u >= thr[x, s >> 4])
            old = code[x]
            diff += np.int64(st != sb) - np.int64((old & 15) != (old >> 4))
            code[x] = st + 16 * sb
            if check and rank[x, st] < rank[x, sb]:
                bad += 1
            steps += 1
            if diff == 0 or steps == max_steps:
                break
    if diff > 0:
        return np.inf, bad
    if steps == 0:
        return 0.0, bad
    return g.gamma(steps, 1.0 / n), bad


# ---------------------------------------------------------------------------
# Python-level chain


@dataclass
class Dynamics:
    """Model, tree and boundary packed into the arrays the kernels need."""

    model: SpinModel
    tree: TreeTopology
    boundary: BoundaryCondition
    order: np.ndarray = field(init=False)
    rank: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.boundary.check(self.tree, self.model.spin_count)
        self.order = spin_order(self.model, self.tree)
        self.rank = np.argsort(self.order, axis=1)

    @property
    def free(self) -> bool:
        return self.boundary.is_free

    def kernel_args(self):
        return (np.ascontiguousarray(self.tree.neighbor_table), self.tree.n, self.free,
                np.ascontiguousarray(self.model.log_pair), np.ascontiguousarray(self.model.log_single),
                self.order)

    def threshold_tables(self):
        """Interior neighbour lists and two-state inverse-CDF thresholds."""
        if self.model.spin_count != 2:
            raise ValueError("threshold tables need a two-state model")
        tree, n = self.tree, self.tree.n
        nbr = self.tree.neighbor_table
        inner = np.full((n, nbr.shape[1]), -1, dtype=np.int64)
        thr = np.zeros((n, nbr.shape[1] + 1))
        first = self.order[:, 0].copy()
        for x in range(n):
            ins = [y for y in tree.neighbors(x, include_boundary=False)]
            outs = [] if self.free else [int(self.boundary.spins[y - n])
                                         for y in tree.neighbors(x) if y >= n]
            inner[x, :len(ins)] = ins
            for k in range(len(ins) + 1):
                try:
                    p = site_conditional(self.model, outs + [1] * k + [0] * (len(ins) - k))
                except FrozenContradiction:
                    p = np.full(2, np.nan)
                thr[x, k] = p[first[x]]
        return inner, thr, first

    def full(self, interior: np.ndarray) -> np.ndarray:
        cfg = self.boundary.full_config(self.tree, np.asarray(interior, dtype=np.int8))
        return np.ascontiguousarray(cfg, dtype=np.int8)

    def is_valid(self, config: np.ndarray) -> bool:
        lp = self.model.log_pair
        for p, c in self.tree.edges(include_boundary=not self.free):
            if not np.isfinite(lp[config[p], config[c]]):
                return False
        return True


def spin_order(model: SpinModel, tree: TreeTopology) -> np.ndarray:
    """Per-site inverse-CDF scan order, lowest spin first in the monotone order."""
    q = model.spin_count
    order = np.tile(np.arange(q, dtype=np.int64), (tree.n, 1))
    if model.monotone_order == "checkerboard":
        odd = tree.level[: tree.n] % 2 == 1
        order[odd] = order[odd, ::-1]
    return order


@dataclass
class ChainState:
    """A single Glauber chain with its own RNG stream."""

    dynamics: Dynamics
    config: np.ndarray
    time: float = 0.0
    seed: int = 0
    stream: int = 0
    counter: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.config = self.dynamics.full(self.config[: self.dynamics.tree.n])
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.rng = np.random.default_rng(ss)


def update_site(chain: ChainState, x: int, u: float) -> None:
    """Heat-bath resample of site ``x`` by inverse CDF at ``u`` (time unchanged)."""
    dyn = chain.dynamics
    nbrs = [chain.config[y] for y in dyn.tree.neighbors(x, include_boundary=not dyn.free)]
    p = site_conditional(dyn.model, nbrs)
    acc = 0.0
    new = None
    for s in dyn.order[x]:
        if p[s] > 0:
            acc += p[s]
            new = s
            if u < acc:
                break
    chain.config[x] = new
    chain.counter += 1


def step(chain: ChainState) -> ChainState:
    """One uniformised heat-bath event (in place; returns the chain)."""
    n = chain.dynamics.tree.n
    chain.time += chain.rng.exponential(1.0 / n)
    update_site(chain, int(chain.rng.integers(n)), float(chain.rng.random()))
    return chain


@dataclass
class CouplingState:
    """Chains sharing site choices and uniforms."""

    chains: list
    ordered: bool = False

    def step(self, rng: np.random.Generator) -> None:
        n = self.chains[0].dynamics.tree.n
        dt = rng.exponential(1.0 / n)
        x = int(rng.integers(n))
        u = float(rng.random())
        for ch in self.chains:
            update_site(ch, x, u)
            ch.time += dt

    def in_order(self) -> bool:
        """Coordinatewise order of consecutive chains (top first)."""
        rank = self.chains[0].dynamics.rank
        n = self.chains[0].dynamics.tree.n
        idx = np.arange(n)
        for hi, lo in zip(self.chains, self.chains[1:]):
            if np.any(rank[idx, hi.config[:n]] < rank[idx, lo.config[:n]]):
                return False
        return True


# ---------------------------------------------------------------------------
# extremal and adversarial starts


def _repair(dyn: Dynamics, config: np.ndarray, prefer_high: bool) -> np.ndarray:
    """Make ``config`` valid by moving forbidden sites to their extreme allowed spin."""
    tree, model = dyn.tree, dyn.model
    cfg = config.copy()
    for _ in range(tree.depth + 2):
        changed = False
        for x in range(tree.n - 1, -1, -1):
            nbrs = [cfg[y] for y in tree.neighbors(x, include_boundary=not dyn.free)]
            logp = model.log_single + sum((model.log_pair[:, t] for t in nbrs), np.zeros(model.spin_count))
            if np.isfinite(logp[cfg[x]]):
                continue
            allowed = [s for s in dyn.order[x] if np.isfinite(logp[s])]
            cfg[x] = allowed[-1] if prefer_high else allowed[0]
            changed = True
        if not changed:
            return cfg
    raise RuntimeError("could not build a valid extremal configuration")


def extremal_starts(dyn: Dynamics) -> tuple[np.ndarray, np.ndarray]:
    """Top and bottom configurations in the monotone order."""
    if dyn.model.monotone_order is None:
        raise NotMonotone(f"{dyn.model.name} has no monotone heat-bath order; "
                          "use tv_mixing_estimate instead")
    n = dyn.tree.n
    top = dyn.full(dyn.order[np.arange(n), -1])
    bot = dyn.full(dyn.order[np.arange(n), 0])
    return _repair(dyn, top, True), _repair(dyn, bot, False)


# ---------------------------------------------------------------------------
# experiments


def _split(replicas: int, workers: int) -> list[np.ndarray]:
    workers = max(1, min(workers, replicas))
    return [c for c in np.array_split(np.arange(replicas), workers) if c.size]


@dataclass
class CoalescenceResult:
    times: np.ndarray
    violations: int

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    def quantile(self, p: float) -> float:
        # empirical (non-interpolated) quantile so timed-out runs stay infinite
        return float(np.quantile(self.times, p, method="inverted_cdf"))

    def median_ci(self, level: float = 0.95, resamples: int = 2000, seed: int = 0) -> tuple[float, float]:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, self.times.size, (resamples, self.times.size))
        meds = np.median(self.times[idx], axis=1)
        a = (1 - level) / 2
        return float(np.quantile(meds, a)), float(np.quantile(meds, 1 - a))


def grand_coupling_run(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                       seed: int, replicas: int = 200, max_time: float = 1e6,
                       check_order: bool = False, workers: int | None = None) -> CoalescenceResult:
    """Coalescence times of the top and bottom chains under the grand coupling."""
    dyn = Dynamics(model, tree, boundary)
    top, bot = extremal_starts(dyn)
    inner, thr, first = dyn.threshold_tables()
    nbr = np.where(inner < 0, tree.n, inner)
    first = first.astype(np.uint8)
    top, bot = top[: tree.n].astype(np.uint8), bot[: tree.n].astype(np.uint8)
    times = np.empty(replicas)
    viol = np.zeros(replicas, dtype=np.int64)
    max_steps = int(min(max_time * tree.n * 1.05 + 100, 2 ** 62))

    def work(idx):
        for r in idx:
            times[r], viol[r] = _coalesce(replica_rng(seed, r), nbr, thr, first, dyn.rank,
                                          top, bot, max_steps, check_order)

    _map(work, _split(replicas, workers or worker_count()))
    times[times > max_time] = np.inf
    return CoalescenceResult(times, int(viol.sum()))


def _map(fn, chunks) -> None:
    if len(chunks) == 1:
        fn(chunks[0])
        return
    with ThreadPoolExecutor(len(chunks)) as pool:
        list(pool.map(fn, chunks))


def observe_site(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                 start: np.ndarray, grid: np.ndarray, seed: int, replicas: int,
                 site: int = 0, workers: int | None = None,
                 starts: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Spin at ``site`` at each time of ``grid`` for independent replicas.

    Returns ``(spins (replicas, len(grid)), update counts)``. ``starts`` gives
    one start per replica and overrides ``start``.
    """
    dyn = Dynamics(model, tree, boundary)
    grid = np.ascontiguousarray(grid, dtype=float)
    out = np.empty((replicas, grid.size), dtype=np.int8)
    steps = np.empty(replicas, dtype=np.int64)
    args = dyn.kernel_args()
    if starts is not None:
        starts = np.ascontiguousarray(starts, dtype=np.int8)
    else:
        start = dyn.full(np.asarray(start)[: tree.n])

    def work(idx):
        for r in idx:
            st = start if starts is None else starts[r]
            steps[r] = _run_observed(replica_rng(seed, r), *args, st, grid, site, out[r])

    _map(work, _split(replicas, workers or worker_count()))
    return out, steps


def run_to_time(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                start: np.ndarray, horizon: float, seed: int, replicas: int,
                workers: int | None = None) -> np.ndarray:
    """Final full configurations of independent chains run for ``horizon``."""
    dyn = Dynamics(model, tree, boundary)
    start = dyn.full(np.asarray(start)[: tree.n])
    out = np.empty((replicas, tree.n_total), dtype=np.int8)
    args = dyn.kernel_args()

    def work(idx):
        for r in idx:
            _run_final(replica_rng(seed, r), *args, start, float(horizon), out[r])

    _map(work, _split(replicas, workers or worker_count()))
    return out


@dataclass
class TVMixingResult:
    time: float
    grid: np.ndarray
    tv: np.ndarray
    noise_floor: float
    start_spin: int


def adversarial_start(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                      messages: MessageSet, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Start maximising the initial root distance.

    The root gets its least likely spin ``s``; the rest is the constant
    configuration ``s`` when that is valid, else a sample conditioned on
    ``sigma_root = s``.
    """
    p = marginal(messages, 0)
    s = int(np.argmin(np.where(p > 0, p, np.inf)))
    dyn = Dynamics(model, tree, boundary)
    const = dyn.full(np.full(tree.n, s))
    if dyn.is_valid(const):
        return const, s
    return sample(messages, rng, root_spin=s).astype(np.int8), s


def tv_mixing_estimate(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                       eps: float, seed: int = 0, replicas: int = 4000,
                       max_time: float = 100.0, points: int = 400,
                       workers: int | None = None) -> TVMixingResult:
    """First grid time at which the root law over replicas is within ``eps`` (TV)."""
    msgs = upward_messages(model, tree, boundary)
    exact = marginal(msgs, 0)
    q = model.spin_count
    floor = float(np.sum(np.sqrt(exact * (1 - exact) / (2 * math.pi * replicas))))
    if floor > eps / 2:
        raise ReplicaBudgetError(f"{replicas} replicas give a TV noise floor {floor:.3g} > eps/2")
    start, s = adversarial_start(model, tree, boundary, msgs, np.random.default_rng(seed))
    grid = np.linspace(0.0, max_time, points)
    spins, _ = observe_site(model, tree, boundary, start, grid, seed, replicas, 0, workers)
    freq = np.stack([(spins == k).mean(axis=0) for k in range(q)], axis=1)
    tv = 0.5 * np.abs(freq - exact[None, :]).sum(axis=1)
    hit = np.flatnonzero(tv <= eps)
    t = float(grid[hit[0]]) if hit.size else math.inf
    return TVMixingResult(t, grid, tv, floor, s)


@dataclass
class AutocorrResult:
    rate: float
    lags: np.ndarray
    rho: np.ndarray
    stderr: np.ndarray
    window: tuple[float, float]


def autocorr_gap_estimate(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                          seed: int = 0, replicas: int = 64, horizon: float = 400.0,
                          dt: float = 0.05, max_lag: float | None = None,
                          observable=None, workers: int | None = None) -> AutocorrResult:
    """Exponential decay rate of the stationary autocorrelation of a root observable.

    Chains start from perfect samples. The autocovariance uses the exact
    mean and variance and all time origins of each trajectory; the rate is
    the least-squares slope of ``-log rho`` over the window
    ``e^{-3} <= rho <= e^{-1/2}``.
    """
    msgs = upward_messages(model, tree, boundary)
    rng = np.random.default_rng(seed)
    p = marginal(msgs, 0)
    values = np.asarray(model.labels, dtype=float) if observable is None else np.asarray(observable, float)
    mean = float(p @ values)
    var = float(p @ (values - mean) ** 2)
    if var <= 0:
        raise InsufficientSignal("root observable is deterministic")
    starts = sample(msgs, rng, replicas).astype(np.int8)
    grid = np.arange(0.0, horizon, dt)
    spins, _ = observe_site(model, tree, boundary, starts[0], grid, seed + 1, replicas, 0,
                            workers, starts=starts)
    f = values[spins] - mean
    max_lag = max_lag if max_lag is not None else horizon / 4
    nlag = int(max_lag / dt)
    size = 1 << int(np.ceil(np.log2(2 * grid.size)))
    spec = np.fft.rfft(f, size, axis=1)
    acov = np.fft.irfft(spec * np.conj(spec), size, axis=1)[:, :nlag]
    counts = grid.size - np.arange(nlag)
    per_rep = acov / counts[None, :] / var
    rho = per_rep.mean(axis=0)
    stderr = per_rep.std(axis=0, ddof=1) / math.sqrt(replicas)
    lags = np.arange(nlag) * dt
    lo, hi = math.exp(-3.0), math.exp(-0.5)
    below_noise = np.flatnonzero(rho < 3 * stderr)
    first_noise = below_noise[0] if below_noise.size else nlag
    crossed = np.flatnonzero(rho < lo)
    if not crossed.size or crossed[0] > first_noise:
        raise InsufficientSignal("autocorrelation reaches the noise floor before e^-3")
    sel = np.arange(crossed[0])
    sel = sel[(rho[sel] <= hi) & (rho[sel] >= lo)]
    if sel.size < 3:
        raise InsufficientSignal("too few lags in the fit window")
    slope = np.polyfit(lags[sel], np.log(rho[sel]), 1)[0]
    return AutocorrResult(float(-slope), lags, rho, stderr, (float(lags[sel[0]]), float(lags[sel[-1]])))


# ---------------------------------------------------------------------------
# recursive couplings


@dataclass
class DownCouplingResult:
    distances: np.ndarray
    kappa: float | None = None

    @property
    def mean(self) -> float:
        return float(self.distances.mean())

    @property
    def stderr(self) -> float:
        return float(self.distances.std(ddof=1) / math.sqrt(self.distances.size))

    def tail(self, threshold: float) -> tuple[float, float]:
        """Empirical ``P[distance > threshold]`` and its 95% upper Wilson bound."""
        k = int(np.count_nonzero(self.distances > threshold))
        ci = binomtest(k, self.distances.size).proportion_ci(0.95, method="wilson")
        return k / self.distances.size, float(ci.high)


def coupling_down(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                  x: int, ell: int, replicas: int, seed: int = 0,
                  messages: MessageSet | None = None) -> DownCouplingResult:
    """Recursive optimal coupling of the subtree measures below ``x`` with ``sigma_x = +`` / ``-``.

    Each vertex below ``x`` reuses one uniform for both copies with
    inverse-CDF sampling from its exact conditional given its parent. Once
    a vertex agrees, its whole subtree agrees; where parents disagree the
    shared uniform is the optimal two-point coupling. Returns the number of
    disagreements ``ell`` levels below ``x``.
    """
    if model.spin_count != 2:
        raise ValueError("coupling_down is built for two-state models")
    x = tree.check_vertex(x)
    if not 0 <= ell <= tree.height(x):
        raise ValueError(f"ell must lie in 0..{tree.height(x)} below vertex {x}")
    msgs = messages or upward_messages(model, tree, boundary)
    cond = msgs.conditional_tables
    rng = np.random.default_rng(seed)
    hi = model.index_of(1) if model.name == "ising" else 1
    a = np.full((replicas, 1), hi, dtype=np.int8)
    b = np.full((replicas, 1), 1 - hi, dtype=np.int8)
    verts = np.array([x])
    for _ in range(ell):
        kids = tree.children[verts].ravel()
        pa = np.repeat(a, tree.b, axis=1)
        pb = np.repeat(b, tree.b, axis=1)
        u = rng.random((replicas, kids.size))
        a = (u >= cond[kids[None, :], pa, 0]).astype(np.int8)
        b = (u >= cond[kids[None, :], pb, 0]).astype(np.int8)
        verts = kids
    return DownCouplingResult(np.count_nonzero(a != b, axis=1))


@dataclass
class UpCouplingResult:
    disagreements: int
    replicas: int
    step_tv: np.ndarray

    @property
    def probability(self) -> float:
        return self.disagreements / self.replicas

    @property
    def exact_probability(self) -> float:
        """Product of the per-step TVs: the exact value for two-state models."""
        return float(np.prod(self.step_tv))

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        ci = binomtest(self.disagreements, self.replicas).proportion_ci(level, method="wilson")
        return float(ci.low), float(ci.high)


def _maximal_coupling(p1: np.ndarray, p2: np.ndarray, rng: np.random.Generator) -> tuple[int, int]:
    common = np.minimum(p1, p2)
    w = common.sum()
    if rng.random() < w:
        s = int(rng.choice(p1.size, p=common / w))
        return s, s
    r1, r2 = p1 - common, p2 - common
    return int(rng.choice(p1.size, p=r1 / r1.sum())), int(rng.choice(p2.size, p=r2 / r2.sum()))


def disagreement_up(model: SpinModel, tree: TreeTopology, boundary: BoundaryCondition,
                    w: int, x: int, replicas: int, seed: int = 0,
                    eta: np.ndarray | None = None) -> UpCouplingResult:
    """Propagate a single discrepancy at ``w`` up to ``x`` by path coupling.

    ``w`` lies ``ell`` levels below ``x`` (on the bottom of ``B_{x,ell}``).
    With a disagreement at ``y`` on the path, the spins at its parent ``z``
    are drawn by a maximal coupling of the laws at ``z`` in
    ``A = B_{x,ell}`` minus the path below ``z``, given the two spins at
    ``y``. ``eta`` (a full configuration) fixes everything else; by default
    it is a perfect sample from the Gibbs measure.
    """
    rng = np.random.default_rng(seed)
    w = tree.check_vertex(w, allow_boundary=True)
    x = tree.check_vertex(x)
    path = [w]
    while path[-1] != x:
        if path[-1] <= 0 or tree.level[path[-1]] <= tree.level[x]:
            raise ValueError("w must lie below x")
        path.append(int(tree.parent[path[-1]]))
    ell = len(path) - 1
    if w >= tree.n and boundary.is_free:
        raise ValueError("a free boundary has no spin to disagree on")
    msgs = upward_messages(model, tree, boundary)
    if eta is None:
        eta = sample(msgs, rng)
    eta = np.array(eta, dtype=np.int64)
    block = set(tree.block(x, ell).vertices.tolist())
    cache: dict = {}

    def law(i: int, spin_y: int) -> np.ndarray:
        key = (i, spin_y)
        if key not in cache:
            region = sorted(block - set(path[1:i + 1]))
            cfg = eta.copy()
            cfg[path[i]] = spin_y
            cache[key] = region_marginal(model, tree, cfg, region, path[i + 1], boundary.is_free)
        return cache[key]

    q = model.spin_count
    step_tv = np.zeros(ell)
    hits = 0
    for _ in range(replicas):
        s1 = int(eta[w])
        s2 = int(rng.choice([s for s in range(q) if s != s1]))
        agree = False
        for i in range(ell):
            try:
                p1, p2 = law(i, s1), law(i, s2)
            except ValueError:
                agree = True
                break
            s1, s2 = _maximal_coupling(p1, p2, rng)
            if s1 == s2:
                agree = True
                break
        hits += not agree
    for i in range(ell):
        try:
            step_tv[i] = 0.5 * float(np.abs(law(i, int(eta[path[i]])) -
                                            law(i, 1 - int(eta[path[i]]) if q == 2 else 0)).sum())
        except ValueError:
            step_tv[i] = 0.0
    return UpCouplingResult(hits, replicas, step_tv)
