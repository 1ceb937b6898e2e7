"""Config-driven scenarios with persisted CSV/JSON results.

Each scenario returns per-point records, summary statistics and named pass
flags; :func:`write_result` stores ``<scenario>.csv`` (every row carries
the config hash) and ``<scenario>.summary.json``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import __version__
from .analytics import (beta0, beta1, coupling_constants, critical_field, hardcore_cycle_onset,
                        lambda0, potts_beta1)
from .config import ExperimentConfig
from .exact import upward_messages, marginal, sample
from .glauber import InsufficientSignal, autocorr_gap_estimate, coupling_down, worker_count
from .mixing import g_ell, vm_root_contraction
from .model import make_colorings, model_from_descriptor
from .spectrum import LOG_SOBOLEV_CAP, build_generator, log_sobolev_upper, spectral_gap_exact
from .tree import BoundaryCondition, TreeTopology


@dataclass
class ExperimentResult:
    scenario: str
    config_hash: str
    config: dict
    records: list
    summary: dict
    passes: dict
    wall_clock: float = 0.0
    version: str = __version__

    @property
    def ok(self) -> bool:
        return all(self.passes.values())

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "config": self.config,
            "version": self.version,
            "wall_clock_s": round(self.wall_clock, 3),
            "records": len(self.records),
            "summary": self.summary,
            "passes": self.passes,
            "ok": self.ok,
        }


def _pool_map(fn, items):
    items = list(items)
    workers = min(worker_count(), len(items)) or 1
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _point_rng(cfg: ExperimentConfig, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, index])


def _axis(cfg: ExperimentConfig, key: str, default):
    vals = cfg.sweep.get(key)
    return list(vals) if vals is not None else list(default)


def _loglinear_slope(ells, values) -> float:
    v = np.asarray(values, dtype=float)
    keep = v > 0
    if keep.sum() < 2:
        return -math.inf
    return float(np.polyfit(np.asarray(ells, float)[keep], np.log(v[keep]), 1)[0])


# ---------------------------------------------------------------------------
# scenarios


def phase_curve(cfg: ExperimentConfig):
    bs = _axis(cfg, "b", [cfg.tree["b"]])
    rows, passes = [], {}
    for b in bs:
        b = int(b)
        b0 = beta0(b)
        grid = _axis(cfg, "beta", np.round(np.linspace(b0, b0 + 1.5, 31), 12))
        hc = [critical_field(float(beta), b) for beta in grid]
        for beta, h in zip(grid, hc):
            rows.append({"b": b, "beta": float(beta), "h_c": h, "beta0": b0, "beta1": beta1(b)})
        above = [h for beta, h in zip(grid, hc) if beta > b0]
        passes[f"b{b}_hc_zero_at_beta0"] = abs(critical_field(b0, b)) <= 1e-9
        passes[f"b{b}_hc_increasing"] = bool(np.all(np.diff(above) > 0)) if len(above) > 1 else True
    return rows, {"b": bs}, passes


def gap_vs_depth(cfg: ExperimentConfig):
    b = int(cfg.tree["b"])
    betas = _axis(cfg, "beta", [cfg.model.get("beta", 1.2)])
    depths = [int(d) for d in _axis(cfg, "depth", range(0, 4))]
    sim_depths = [int(d) for d in _axis(cfg, "autocorr_depth", [])]
    boundaries = _axis(cfg, "boundary", ["plus", "free"])
    desc = dict(cfg.model)
    points = list(itertools.product(betas, boundaries, depths))

    def exact_point(p):
        beta, bname, depth = p
        model = model_from_descriptor({**desc, "beta": beta})
        tree = TreeTopology(b, depth)
        bc = BoundaryCondition.parse(bname, model, tree)
        G = build_generator(model, tree, bc, cap=int(cfg.caps["exact_states"]))
        gap = spectral_gap_exact(G)
        csob = ratio = math.nan
        if G.size <= LOG_SOBOLEV_CAP:
            # descriptive only: csob * log n / gap across depths
            csob = log_sobolev_upper(G, restarts=int(cfg.budget["restarts"]), rng=_point_rng(cfg, depth))
            ratio = csob * math.log(tree.n) / gap
        return {"beta": beta, "boundary": bname, "depth": depth, "n": tree.n, "states": G.size,
                "method": "exact", "gap": gap, "csob_upper": csob, "csob_logn_over_gap": ratio,
                "window_lo": math.nan, "window_hi": math.nan}

    rows = _pool_map(exact_point, points)
    for i, (beta, bname, depth) in enumerate(itertools.product(betas, boundaries, sim_depths)):
        model = model_from_descriptor({**desc, "beta": beta})
        tree = TreeTopology(b, depth)
        bc = BoundaryCondition.parse(bname, model, tree)
        row = {"beta": beta, "boundary": bname, "depth": depth, "n": tree.n, "states": math.nan,
               "method": "autocorr", "gap": math.nan, "window_lo": math.nan, "window_hi": math.nan}
        try:
            est = autocorr_gap_estimate(model, tree, bc, seed=cfg.seed + i,
                                        replicas=int(cfg.budget.get("trajectories", 64)),
                                        horizon=float(cfg.budget["horizon"]))
            row.update(gap=est.rate, window_lo=est.window[0], window_hi=est.window[1])
        except InsufficientSignal:
            pass
        rows.append(row)

    passes = {}
    exact = {(r["beta"], r["boundary"], r["depth"]): r["gap"] for r in rows if r["method"] == "exact"}
    if {"plus", "free"} <= set(boundaries):
        for beta in betas:
            for d in depths:
                gp, gf = exact[(beta, "plus", d)], exact[(beta, "free", d)]
                # depth 0 is a single site: both gaps equal 1
                passes[f"beta{beta}_m{d}_plus_vs_free"] = gp > gf if d > 0 else abs(gp - gf) < 1e-9
            plus = [exact[(beta, "plus", d)] for d in depths]
            passes[f"beta{beta}_plus_gap_above_half"] = min(plus) >= 0.5 * exact[(beta, "plus", min(depths))]
            if {1, 3} <= set(depths):
                passes[f"beta{beta}_free_gap_halves"] = exact[(beta, "free", 3)] <= 0.5 * exact[(beta, "free", 1)]
    return rows, {"betas": betas, "depths": depths}, passes


def vm_decay(cfg: ExperimentConfig):
    b = int(cfg.tree["b"])
    bname = cfg.tree.get("boundary", "free")
    betas = _axis(cfg, "beta", [cfg.model.get("beta", 0.6)])
    ells = [int(e) for e in _axis(cfg, "ell", range(1, 5))]
    depth = max(int(cfg.tree.get("depth", max(ells))), max(ells))
    rows, passes, summary = [], {}, {}
    for beta in betas:
        model = model_from_descriptor({**cfg.model, "beta": beta})
        tree = TreeTopology(b, depth)
        bc = BoundaryCondition.parse(bname, model, tree)
        msgs = upward_messages(model, tree, bc)
        cc = coupling_constants(model, tree, bc)
        rate = cc.gamma * cc.kappa * b
        ising = model.name == "ising"
        bt = b * math.tanh(beta) ** 2 if ising else math.nan
        eps = [vm_root_contraction(msgs, 0, ell) for ell in ells]
        for ell, e in zip(ells, eps):
            rows.append({"beta": beta, "ell": ell, "eps_star": e, "gamma_kappa_b_pow": rate ** ell,
                         "b_tanh2_pow": bt ** ell, "kappa": cc.kappa, "gamma": cc.gamma})
        slope = _loglinear_slope(ells, eps)
        summary[f"beta{beta}_slope"] = slope
        if ising:
            passes[f"beta{beta}_eps_below_bound"] = all(e <= bt ** ell + 1e-12 for ell, e in zip(ells, eps))
            if bt < 1:
                passes[f"beta{beta}_slope"] = slope <= math.log(bt) + 0.05
    return rows, summary, passes


def em_concentration(cfg: ExperimentConfig):
    b = int(cfg.tree["b"])
    depth = int(cfg.tree.get("depth", 8))
    ells = [int(e) for e in _axis(cfg, "ell", [2, 4, 6, 8])]
    delta = float(_axis(cfg, "delta", [0.1])[0])
    model = model_from_descriptor(cfg.model)
    tree = TreeTopology(b, depth)
    bc = BoundaryCondition.parse(cfg.tree.get("boundary", "plus"), model, tree)
    msgs = upward_messages(model, tree, bc)
    configs = sample(msgs, _point_rng(cfg, 0), int(cfg.budget["samples"]))
    rows = []
    for s in range(model.spin_count):
        for ell in ells:
            g = g_ell(msgs, s, ell, configs)
            dev = np.abs(g - 1.0)
            k = int(np.count_nonzero(dev > delta))
            ci = binomtest(k, g.size).proportion_ci(0.95, method="wilson")
            rows.append({"spin": model.labels[s], "ell": ell, "delta": delta, "samples": g.size,
                         "tail": k / g.size, "ci_low": ci.low, "ci_high": ci.high,
                         "mean_g": float(g.mean()), "max_dev": float(dev.max())})
    passes = {}
    for s in range(model.spin_count):
        tails = [r["tail"] for r in rows if r["spin"] == model.labels[s]]
        passes[f"tail_strictly_decreasing_spin{model.labels[s]}"] = bool(np.all(np.diff(tails) < 0))
    return rows, {"ells": ells, "delta": delta}, passes


def coupling_tails(cfg: ExperimentConfig):
    b = int(cfg.tree["b"])
    ells = [int(e) for e in _axis(cfg, "ell", [6])]
    depth = max(int(cfg.tree.get("depth", max(ells))), max(ells))
    cs = [float(c) for c in _axis(cfg, "C", [8 * math.e, 16 * math.e])]
    model = model_from_descriptor(cfg.model)
    tree = TreeTopology(b, depth)
    bc = BoundaryCondition.parse(cfg.tree.get("boundary", "plus"), model, tree)
    msgs = upward_messages(model, tree, bc)
    cc = coupling_constants(model, tree, bc)
    alpha = max(cc.kappa * b, 1.0)
    rows, passes = [], {}
    for i, ell in enumerate(ells):
        res = coupling_down(model, tree, bc, 0, ell, int(cfg.budget["replicas"]),
                            seed=cfg.seed + i, messages=msgs)
        bound = (cc.kappa * b) ** ell
        passes[f"ell{ell}_mean"] = res.mean <= bound + 3 * res.stderr
        for c in cs:
            p, hi = res.tail(c * alpha ** ell)
            tail_bound = math.exp((1 - c / (2 * math.e)) / (ell + 1))
            rows.append({"ell": ell, "C": c, "mean": res.mean, "stderr": res.stderr,
                         "mean_bound": bound, "tail": p, "tail_ci_high": hi,
                         "tail_bound": tail_bound, "kappa": cc.kappa})
            passes[f"ell{ell}_C{c:.3f}_tail"] = p <= tail_bound + (hi - p)
    return rows, {"kappa": cc.kappa, "alpha": alpha}, passes


def hardcore_cycle(cfg: ExperimentConfig):
    bs = [int(b) for b in _axis(cfg, "b", range(2, 10))]
    rows, passes = [], {}
    for b in bs:
        onset, lam0 = hardcore_cycle_onset(b), lambda0(b)
        rows.append({"kind": "onset", "b": b, "lambda": math.nan, "depth": math.nan,
                     "lambda0": lam0, "onset": onset, "inv_sqrt_b_minus_1": 1 / (math.sqrt(b) - 1),
                     "even": math.nan, "odd": math.nan, "diff": math.nan})
        passes[f"b{b}_onset_matches"] = abs(onset - lam0) < 1e-3
        if b >= 5:
            passes[f"b{b}_uniqueness_bound_exceeds"] = 1 / (math.sqrt(b) - 1) > lam0
    b = int(cfg.tree["b"])
    lams = [float(x) for x in _axis(cfg, "lambda", [2.0, 6.0])]
    depths = [int(d) for d in _axis(cfg, "depth", range(1, 13))]
    for lam in lams:
        diffs = []
        model = model_from_descriptor({"model": "hardcore", "lambda": lam})
        for d in depths:
            tree = TreeTopology(b, d)
            pe = marginal(upward_messages(model, tree, BoundaryCondition.even(tree)), 0)[1]
            po = marginal(upward_messages(model, tree, BoundaryCondition.odd(tree)), 0)[1]
            diffs.append(abs(pe - po))
            rows.append({"kind": "contrast", "b": b, "lambda": lam, "depth": d,
                         "lambda0": lambda0(b), "onset": math.nan, "inv_sqrt_b_minus_1": math.nan,
                         "even": pe, "odd": po, "diff": abs(pe - po)})
        if lam < lambda0(b) and len(diffs) > 1:
            passes[f"lambda{lam}_contrast_shrinks"] = diffs[-1] < diffs[0]
    return rows, {"b": bs}, passes


def model_thresholds(cfg: ExperimentConfig):
    b = int(cfg.tree["b"])
    depths = [int(d) for d in _axis(cfg, "depth", range(1, 13))]
    rows = []
    q_free = b + 2
    col = make_colorings(q_free)
    tv_unique = []
    for d in depths:
        tree = TreeTopology(b, d)
        p1 = marginal(upward_messages(col, tree, BoundaryCondition.color(tree, 1)), 0)
        p2 = marginal(upward_messages(col, tree, BoundaryCondition.color(tree, 2)), 0)
        tv_unique.append(0.5 * float(np.abs(p1 - p2).sum()))
        rows.append({"kind": "colorings", "q": q_free, "depth": d, "tv": tv_unique[-1], "value": math.nan})
    q_frozen = b + 1
    fro = make_colorings(q_frozen)
    tv_frozen = []
    for d in depths:
        tree = TreeTopology(b, d)
        p1 = marginal(upward_messages(fro, tree, BoundaryCondition.frozen_coloring(tree, q_frozen, 1)), 0)
        p2 = marginal(upward_messages(fro, tree, BoundaryCondition.frozen_coloring(tree, q_frozen, 2)), 0)
        tv_frozen.append(0.5 * float(np.abs(p1 - p2).sum()))
        rows.append({"kind": "colorings", "q": q_frozen, "depth": d, "tv": tv_frozen[-1], "value": math.nan})
    qp = int(cfg.model.get("q", 3)) if cfg.model.get("model") == "potts" else 3
    bp = potts_beta1(b, qp)
    rows.append({"kind": "potts_beta1", "q": qp, "depth": math.nan, "tv": math.nan, "value": bp})
    passes = {
        f"q{q_free}_tv_decreasing": bool(np.all(np.diff(tv_unique) < 0)),
        f"q{q_free}_tv_below_1e-6": tv_unique[-1] < 1e-6,
        f"q{q_frozen}_frozen_tv_one": all(abs(t - 1) < 1e-12 for t in tv_frozen),
    }
    if (b, qp) == (2, 3):
        passes["potts_beta1_half_ln7"] = abs(bp - 0.5 * math.log(7)) < 1e-9
    summary = {"tv_final": tv_unique[-1], "tv_ratio": tv_unique[-1] / tv_unique[-2] if len(depths) > 1 else math.nan,
               "potts_beta1": bp}
    return rows, summary, passes


SCENARIO_FUNCS = {
    "phase-curve": phase_curve,
    "gap-vs-depth": gap_vs_depth,
    "vm-decay": vm_decay,
    "em-concentration": em_concentration,
    "coupling-tails": coupling_tails,
    "hardcore-cycle": hardcore_cycle,
    "model-thresholds": model_thresholds,
}


def run(cfg: ExperimentConfig) -> ExperimentResult:
    start = time.perf_counter()
    rows, summary, passes = SCENARIO_FUNCS[cfg.scenario](cfg)
    h = cfg.hash
    records = [{"config_hash": h, **r} for r in rows]
    return ExperimentResult(cfg.scenario, h, cfg.to_dict(), records, summary,
                            {k: bool(v) for k, v in passes.items()}, time.perf_counter() - start)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_rows(path: Path, rows: list[dict]) -> None:
    fields: list[str] = []
    for r in rows:
        fields.extend(k for k in r if k not in fields)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in r.items()})


def write_result(result: ExperimentResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{result.scenario}.csv"
    json_path = out / f"{result.scenario}.summary.json"
    write_rows(csv_path, result.records)
    json_path.write_text(json.dumps(_jsonable(result.to_json()), indent=2) + "\n")
    return csv_path, json_path
