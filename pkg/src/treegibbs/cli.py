"""Command-line entry point: ``treegibbs <command> [options]``.

Scenario commands (``phase-curve``, ``gap-vs-depth``, ...) read an INI
config and write ``<scenario>.csv`` and ``<scenario>.summary.json``. The
``phase``, ``spectrum`` and ``mixing`` commands print CSV to stdout;
``simulate`` writes one CSV row per replica plus a JSON summary.

Exit status is 1 when any pass flag fails and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import coupling_constants, critical_values
from .config import SCENARIOS, ConfigError, ExperimentConfig
from .experiments import _jsonable, run, write_result, write_rows
from .model import model_from_descriptor
from .tree import BoundaryCondition, TreeTopology


def _add_model_args(p: argparse.ArgumentParser, boundary: str = "plus") -> None:
    p.add_argument("--model", default="ising", choices=["ising", "hardcore", "potts", "colorings"])
    p.add_argument("--b", type=int, default=2)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--beta", type=float, default=1.2)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--q", type=int, default=3)
    p.add_argument("--antiferro", action="store_true")
    p.add_argument("--boundary", default=boundary)


def _instance(args):
    desc = {"model": args.model, "beta": args.beta, "h": args.h, "lambda": args.lam,
            "q": args.q, "antiferro": args.antiferro}
    model = model_from_descriptor(desc)
    tree = TreeTopology(args.b, args.depth)
    return model, tree, BoundaryCondition.parse(args.boundary, model, tree)


def _print_rows(rows: list[dict]) -> None:
    if not rows:
        return
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)


def cmd_scenario(args) -> int:
    cfg = (ExperimentConfig.from_file(args.config, args.command) if args.config
           else ExperimentConfig(args.command))
    if args.seed is not None:
        cfg.seed = args.seed
    result = run(cfg)
    out = args.out or cfg.out
    csv_path, json_path = write_result(result, out)
    for name, ok in result.passes.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wrote {csv_path} and {json_path} ({result.wall_clock:.1f}s, hash {result.config_hash})")
    return 0 if result.ok else 1


def cmd_phase(args) -> int:
    rows = []
    for b in args.b:
        cv = critical_values(b, args.q)
        rows.append({k: v for k, v in cv.items() if k != "h_c"})
    _print_rows(rows)
    return 0


def cmd_spectrum(args) -> int:
    from .spectrum import build_generator, log_sobolev_upper, mixing_time_exact, spectral_gap_exact
    model, tree, bc = _instance(args)
    G = build_generator(model, tree, bc)
    gap = spectral_gap_exact(G)
    row = {"model": model.name, **model.params, "b": tree.b, "depth": tree.depth,
           "boundary": args.boundary, "n": tree.n, "states": G.size, "gap": gap,
           "csob_upper": math.nan, "T1": math.nan, "T2": math.nan}
    if G.size <= 1 << 12:
        row["csob_upper"] = log_sobolev_upper(G, rng=np.random.default_rng(args.seed))
        row["T1"] = mixing_time_exact(G, 1)
        row["T2"] = mixing_time_exact(G, 2)
    _print_rows([row])
    return 0


def cmd_mixing(args) -> int:
    from .mixing import mixing_report
    model, tree, bc = _instance(args)
    cc = coupling_constants(model, tree, bc)
    reports = mixing_report(model, tree, bc, args.ell, np.random.default_rng(args.seed),
                            n_functions=args.functions, bound_rate=cc.gamma * cc.kappa * tree.b)
    rows = [r.row() for r in reports]
    _print_rows(rows)
    return 0 if all(all(v for k, v in r.items() if k.startswith("pass_")) for r in rows) else 1


def cmd_simulate(args) -> int:
    from . import glauber as gl
    model, tree, bc = _instance(args)
    summary: dict = {"scenario": args.scenario, "model": model.describe(), "b": tree.b,
                     "depth": tree.depth, "boundary": args.boundary, "seed": args.seed,
                     "replicas": args.replicas, "version": __version__}
    if args.scenario == "coalescence":
        res = gl.grand_coupling_run(model, tree, bc, args.seed, args.replicas, args.max_time,
                                    check_order=args.check_order)
        rows = [{"replica": i, "time": t} for i, t in enumerate(res.times)]
        summary.update(median=res.median, median_ci=res.median_ci(seed=args.seed),
                       order_violations=res.violations)
    elif args.scenario == "tvmix":
        res = gl.tv_mixing_estimate(model, tree, bc, args.eps, args.seed, args.replicas, args.max_time)
        rows = [{"time": t, "tv": v} for t, v in zip(res.grid, res.tv)]
        summary.update(time=res.time, eps=args.eps, noise_floor=res.noise_floor)
    elif args.scenario == "autocorr":
        res = gl.autocorr_gap_estimate(model, tree, bc, args.seed, args.replicas, args.max_time)
        rows = [{"lag": lag, "rho": r, "stderr": s} for lag, r, s in zip(res.lags, res.rho, res.stderr)]
        summary.update(rate=res.rate, window=res.window)
    elif args.scenario == "coupledown":
        res = gl.coupling_down(model, tree, bc, 0, args.ell, args.replicas, args.seed)
        rows = [{"replica": i, "distance": int(d)} for i, d in enumerate(res.distances)]
        cc = coupling_constants(model, tree, bc)
        summary.update(ell=args.ell, mean=res.mean, stderr=res.stderr, kappa=cc.kappa,
                       mean_bound=(cc.kappa * tree.b) ** args.ell)
    else:
        w = int(tree.level_vertices(args.ell)[0]) if args.ell <= tree.depth else tree.n
        res = gl.disagreement_up(model, tree, bc, w, 0, args.replicas, args.seed)
        rows = [{"step": i, "tv": t} for i, t in enumerate(res.step_tv)]
        summary.update(ell=args.ell, probability=res.probability, interval=res.interval(),
                       exact=res.exact_probability, gamma_pow=math.tanh(args.beta) ** args.ell
                       if model.name == "ising" else math.nan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / f"simulate-{args.scenario}.csv", rows)
    (out / f"simulate-{args.scenario}.summary.json").write_text(
        json.dumps(_jsonable(summary), indent=2) + "\n")
    print(json.dumps(_jsonable(summary)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treegibbs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("phase", help="critical-value table as CSV")
    p.add_argument("--b", type=int, nargs="+", default=[2])
    p.add_argument("--q", type=int, default=3)
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("spectrum", help="exact gap, log-Sobolev upper bound and mixing times")
    _add_model_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("mixing", help="VM/EM contraction report per (x, ell, eta)")
    _add_model_args(p, boundary="free")
    p.add_argument("--ell", type=int, nargs="+", default=[1, 2])
    p.add_argument("--functions", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mixing)

    p = sub.add_parser("simulate", help="Glauber dynamics experiments")
    _add_model_args(p)
    p.add_argument("--scenario", required=True,
                   choices=["coalescence", "tvmix", "autocorr", "coupledown", "coupleup"])
    p.add_argument("--replicas", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-time", type=float, default=100.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--ell", type=int, default=2)
    p.add_argument("--check-order", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"treegibbs: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
