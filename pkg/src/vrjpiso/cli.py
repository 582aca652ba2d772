"""Command line entry point: ``vrjpiso {verify,simulate,plotdata,list-theorems}``.

Every run is driven by one JSON config; flags only override the seed, the
output directory, the Monte Carlo budget scale and the worker count.

A verify config looks like::

    {"graph": "single",
     "theorems": ["bfs_dynkin", "soup"],
     "params": {"h": 1.0, "k": [0.5, 1.0]},
     "budget": 100000,
     "seed": 7}

List-valued params form a grid (cartesian product); wrap a per-vertex
vector in an extra list to keep it as one grid value.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import graph as graphs
from .environment import MCMCConfig, nu_sample, write_samples_csv
from .graph import AugmentedGraph, GraphError, WeightedGraph, graph_from_json
from .isomorph import THEOREMS, VerificationReport, run_check
from .loopsoup import loop_generator, sample_occupations, write_occupations_csv
from .vrjp import StopRule, simulate_vrjp_batch, write_batch_csv

SCHEMA_VERSION = 1
REPORT_COLUMNS = ["theorem", "graph", "params", "lhs", "lhs_err", "rhs", "rhs_err", "statistic", "kind",
                  "tol", "status", "seed", "note"]
OUT_ENV = "VRJPISO_OUT"
NAMED = {"single": graphs.single_vertex, "pair": graphs.pair, "path3": graphs.path3, "triangle": graphs.triangle}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    """Read a JSON config; syntax errors carry ``file:line:col``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "seed" not in cfg:
        raise ConfigError(f"{path}: a seed is required")
    cfg["_dir"] = str(path.parent)
    return cfg


def resolve_graph(spec, base_dir=".") -> WeightedGraph:
    """Named graph, inline document or path to a graph JSON file (relative to the config)."""
    if isinstance(spec, str) and spec in NAMED:
        return NAMED[spec]()
    if isinstance(spec, str):
        p = Path(spec)
        if not p.is_absolute():
            p = Path(base_dir) / p
        if not p.exists():
            raise ConfigError(f"graph file {spec!r} not found")
        spec = json.loads(p.read_text(encoding="utf-8"))
    try:
        g = graph_from_json(spec)
    except GraphError as exc:
        raise ConfigError(f"invalid graph: {exc}") from exc
    if isinstance(g, AugmentedGraph):
        raise ConfigError("give the cemetery weight as the 'h' parameter, not inside the graph")
    return g


def param_grid(params: dict) -> list[dict]:
    keys = sorted(params)
    axes = [params[k] if isinstance(params[k], list) else [params[k]] for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*axes)]


def _budget(cfg: dict, scale: float) -> int:
    b = int(round(float(cfg.get("budget", 100_000)) * scale))
    if b <= 1:
        raise ConfigError("Monte Carlo budget must be at least 2")
    return b


def _out_dir(args, cfg: dict) -> Path:
    out = args.out or cfg.get("out") or os.environ.get(OUT_ENV) or "vrjpiso-out"
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _job(payload):
    theorem, gdoc, params, budget, seed = payload
    base = WeightedGraph(np.asarray(gdoc["weights"]), name=gdoc["name"])
    return run_check(theorem, base, params, budget, seed)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def write_reports(out: Path, reports: list[VerificationReport], run: dict) -> tuple[Path, Path]:
    """``report.csv`` (runtime-free, so fixed seeds give identical bytes) and ``report.json``."""
    csv_path, json_path = out / "report.csv", out / "report.json"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# vrjpiso report schema v{SCHEMA_VERSION}\n")
        wr = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        wr.writeheader()
        for r in reports:
            row = r.row()
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    doc = {"run": run, "checks": [_clean({**r.row(), "params": r.params, "extra": r.extra, "runtime": r.runtime})
                                  for r in reports]}
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def run_verify(cfg: dict, args) -> int:
    theorems = cfg.get("theorems") or []
    if not theorems:
        raise ConfigError("nothing to verify")
    unknown = [t for t in theorems if t not in THEOREMS]
    if unknown:
        raise ConfigError(f"unknown theorem(s): {', '.join(unknown)}")
    base = resolve_graph(cfg.get("graph", "single"), cfg.get("_dir", "."))
    seed = int(args.seed if args.seed is not None else cfg["seed"])
    budget = _budget(cfg, args.budget_scale)
    gdoc = {"weights": base.weights.tolist(), "name": base.name or "graph"}
    jobs = []
    for t in theorems:
        for i, p in enumerate(param_grid(cfg.get("params", {}))):
            jobs.append((t, gdoc, p, budget, seed + i))
    t0 = time.perf_counter()
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            reports = list(pool.map(_job, jobs))
    else:
        reports = [_job(j) for j in jobs]
    out = _out_dir(args, cfg)
    run = {"graph": gdoc["name"], "seed": seed, "budget": budget, "theorems": theorems,
           "runtime": time.perf_counter() - t0, "schema": SCHEMA_VERSION}
    write_reports(out, reports, run)
    for r in reports:
        print(r.line() + (f"  [{r.note}]" if r.note else ""))
    bad = [r for r in reports if r.status in ("fail", "error")]
    print(f"{len(reports) - len(bad)}/{len(reports)} checks passed or inconclusive; reports in {out}")
    return 1 if bad else 0


def run_simulate(cfg: dict, args) -> int:
    """Dump VRJP end states, ν samples or soup occupation fields as CSV."""
    sim = cfg.get("simulate")
    if not isinstance(sim, dict) or "kind" not in sim:
        raise ConfigError("simulate needs a 'simulate' object with a 'kind'")
    base = resolve_graph(cfg.get("graph", "single"), cfg.get("_dir", "."))
    seed = int(args.seed if args.seed is not None else cfg["seed"])
    count = _budget({"budget": sim.get("count", 10_000)}, args.budget_scale)
    h = sim.get("h")
    g = base if h is None else AugmentedGraph.with_mass(base, float(h), name=base.name)
    rng = np.random.default_rng(seed)
    out = _out_dir(args, cfg)
    kind = sim["kind"]
    if kind == "vrjp":
        if isinstance(g, AugmentedGraph):
            stop = StopRule(absorbing=(g.delta,))
        elif "horizon" in sim:
            stop = StopRule(horizon=float(sim["horizon"]))
        else:
            raise ConfigError("a VRJP without cemetery needs a 'horizon'")
        res = simulate_vrjp_batch(g, int(sim.get("start", 0)), count, stop, rng)
        path = write_batch_csv(out / "vrjp.csv", res)
    elif kind == "nu":
        u = nu_sample(g, count, root=int(sim.get("root", 0)), cfg=MCMCConfig(seed=seed))
        path = write_samples_csv(out / "nu.csv", u)
    elif kind == "soup":
        if not isinstance(g, AugmentedGraph):
            raise ConfigError("loop soups need a cemetery weight 'h'")
        occ = sample_occupations(loop_generator(g, sim.get("u")), float(sim.get("alpha", 1.0)), count, rng)
        path = write_occupations_csv(out / "soup.csv", occ)
    else:
        raise ConfigError(f"unknown simulation kind {kind!r} (vrjp, nu, soup)")
    print(f"wrote {count} rows to {path}")
    return 0


def run_plotdata(cfg: dict, args) -> int:
    """Sweep one parameter of one theorem and write ``(parameter, LHS, RHS, stderr)`` rows."""
    spec = cfg.get("plot")
    if not isinstance(spec, dict) or "theorem" not in spec or "parameter" not in spec or "values" not in spec:
        raise ConfigError("plotdata needs 'plot': {theorem, parameter, values}")
    theorem = spec["theorem"]
    if theorem not in THEOREMS:
        raise ConfigError(f"unknown theorem {theorem!r}")
    base = resolve_graph(cfg.get("graph", "single"), cfg.get("_dir", "."))
    seed = int(args.seed if args.seed is not None else cfg["seed"])
    budget = _budget(cfg, args.budget_scale)
    fixed = dict(cfg.get("params", {}))
    out = _out_dir(args, cfg)
    path = out / f"{theorem}_{spec['parameter']}.csv"
    failed = False
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow([spec["parameter"], "lhs", "lhs_err", "rhs", "rhs_err", "status"])
        for v in spec["values"]:
            # the same seed at every grid point keeps the curve smooth
            rep = run_check(theorem, base, {**fixed, spec["parameter"]: v}, budget, seed, retry=False)
            failed |= rep.status == "error"
            wr.writerow([json.dumps(v), repr(rep.lhs), repr(rep.lhs_err), repr(rep.rhs), repr(rep.rhs_err),
                         rep.status])
    print(f"wrote {len(spec['values'])} points to {path}")
    return 1 if failed else 0


def list_theorems() -> int:
    width = max(len(n) for n in THEOREMS)
    for name, th in THEOREMS.items():
        tag = "mc " if th.monte_carlo else "det"
        print(f"{name:<{width}}  {tag}  {th.summary}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vrjpiso", description="Numerical checks of VRJP isomorphism theorems.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [("verify", "run verification checks"), ("simulate", "dump samples as CSV"),
                           ("plotdata", "write LHS/RHS series over a parameter grid")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help=f"output directory (default: config 'out', ${OUT_ENV})")
        p.add_argument("--budget-scale", type=float, default=1.0, help="multiply Monte Carlo budgets")
        p.add_argument("--workers", type=int, default=1, help="parallel verification jobs")
    sub.add_parser("list-theorems", help="list the registered checks")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "list-theorems":
        return list_theorems()
    try:
        cfg = load_config(args.config)
        if args.budget_scale <= 0:
            raise ConfigError("--budget-scale must be positive")
        runner = {"verify": run_verify, "simulate": run_simulate, "plotdata": run_plotdata}[args.command]
        return runner(cfg, args)
    except ConfigError as exc:
        print(f"vrjpiso: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
