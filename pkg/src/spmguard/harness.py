"""Command-line front end and experiment runner.

Every CSV written here starts with a ``# config: {...}`` line holding the
fully resolved configuration, so a file documents how to regenerate itself.
Timing goes to stderr only; data files are byte-deterministic.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .communities import PartitionError
from .defenses import (DefenseError, DefensePlan, apply_defense,
                       canonical_strategy, parse_defense)
from .epidemic import (MODELS, OdeInstabilityError, ParameterError, SIIDRParams,
                       die_out_check, ensemble)
from .graph import (EdgeListError, EmptyGraphError, FitError, Graph, GraphError,
                    complete_graph, compute_stats, cycle_graph, generate_scale_free,
                    k_core, largest_cc_fraction, load_edge_list, path_graph, star_graph,
                    write_edge_list, write_id_map)
from .model_fit import (N_PARAMS, TraceError, abc_smc, fit_all, passes_threshold, read_trace,
                        reconstruct, well_mixed_trace, write_trace)
from .spectral import ConvergenceError, NBCentralityError, eigen_drop, effective_strength, \
    spectral_radius

log = logging.getLogger("spmguard")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_INPUT = 0, 2, 3, 4, 5

# Fitted per-step rates of the seven observed attack variants.
VARIANTS = {
    "wc_1_500ms": SIIDRParams(0.10, 0.06, 0.76, 0.04, 0.09),
    "wc_1_1s": SIIDRParams(0.11, 0.07, 0.71, 0.07, 0.06),
    "wc_1_5s": SIIDRParams(0.37, 0.52, 0.27, 0.44, 0.16),
    "wc_1_10s": SIIDRParams(0.12, 0.06, 0.75, 0.05, 0.09),
    "wc_4_1s": SIIDRParams(0.14, 0.07, 0.75, 0.08, 0.05),
    "wc_4_5s": SIIDRParams(0.12, 0.07, 0.76, 0.07, 0.07),
    "wc_8_20s": SIIDRParams(0.13, 0.09, 0.74, 0.08, 0.07),
}


class ConfigError(ValueError):
    pass


def _kv(text: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise ConfigError(f"expected key=value, got {item!r}")
        out[key.strip()] = val.strip()
    return out


def resolve_attack(spec: str):
    """``wc_1_1s`` or ``MODEL:beta=..,mu=..,gamma1=..,gamma2=..,dt=..``."""
    if spec in VARIANTS:
        return "SIIDR", VARIANTS[spec]
    model, _, args = spec.partition(":")
    model = model.strip().upper()
    if model not in MODELS:
        raise ConfigError(f"unknown attack {spec!r}; use a variant name "
                          f"({', '.join(VARIANTS)}) or MODEL:beta=..")
    kw = _kv(args)
    bad = set(kw) - {"beta", "mu", "gamma1", "gamma2", "dt"}
    if bad or "beta" not in kw:
        raise ConfigError(f"attack {spec!r} needs beta and accepts mu, gamma1, gamma2, dt")
    params = SIIDRParams(**{k: float(v) for k, v in kw.items()})
    params.validate(model)
    return model, params


_GENERATORS = {
    "ba": (lambda n, m, seed: generate_scale_free(n, m, seed), ("n", "m")),
    "star": (lambda m, seed: star_graph(m), ("m",)),
    "complete": (lambda n, seed: complete_graph(n), ("n",)),
    "cycle": (lambda n, seed: cycle_graph(n), ("n",)),
    "path": (lambda n, seed: path_graph(n), ("n",)),
}


def load_graph(source: str, seed: int = 0) -> Graph:
    """An edge-list path, or a generator spec such as ``ba:n=1000,m=5``."""
    name, sep, args = source.partition(":")
    if sep and name in _GENERATORS and not os.path.exists(source):
        fn, need = _GENERATORS[name]
        kw = _kv(args)
        gen_seed = int(kw.pop("seed", seed))
        if set(kw) != set(need):
            raise ConfigError(f"generator {name} takes {', '.join(need)} (and optional seed)")
        return fn(**{k: int(v) for k, v in kw.items()}, seed=gen_seed)
    return load_edge_list(source)


def _header(config: dict) -> str:
    return "# config: " + json.dumps(config, sort_keys=True, default=str) + "\n"


def write_csv(path: Path, config: dict, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(_header(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


# ---------------------------------------------------------------- commands

def cmd_stats(args) -> int:
    g = load_graph(args.graph, args.seed)
    if args.kcore is not None:
        g = k_core(g, args.kcore)
        if g.n_active == 0:
            raise EmptyGraphError(f"empty k-core for k={args.kcore}")
    st = compute_stats(g, args.distance_sample, args.seed)
    cfg = {"command": "stats", "graph": args.graph, "kcore": args.kcore,
           "distance_sample": args.distance_sample, "seed": args.seed,
           "graph_hash": g.digest()}
    label = args.label if args.label is not None else Path(args.graph).stem
    write_csv(args.out / "stats.csv", cfg, st.CSV_COLUMNS, [st.csv_row(label)])
    sys.stdout.write((args.out / "stats.csv").read_text())
    return EXIT_OK


DEFEND_COLUMNS = ("defense", "n_nodes_before", "n_nodes_after", "n_edges_before",
                  "n_edges_after", "lambda_before", "lambda_after", "eigendrop_pct",
                  "sigma_before", "sigma_after", "nodes_removed", "edges_removed", "splits")


def defend_metrics(g: Graph, arg: Graph, plan: DefensePlan, label: str, lam0=None):
    lam0 = spectral_radius(g) if lam0 is None else lam0
    lam1 = spectral_radius(arg)
    b = plan.budget_spent
    return (label, g.n_nodes, arg.n_nodes, g.n_edges, arg.n_edges, lam0, lam1,
            eigen_drop(lam0, lam1) if lam0 > 0 else 0.0,
            largest_cc_fraction(g), largest_cc_fraction(arg),
            b["nodes"], b["edges"], b["splits"])


def cmd_defend(args) -> int:
    g = load_graph(args.graph, args.seed)
    stages = parse_defense(args.defense)
    t = time.perf_counter()
    arg, plan = apply_defense(g, stages, args.seed)
    wall = time.perf_counter() - t
    row = defend_metrics(g, arg, plan, args.defense)
    cfg = {"command": "defend", "graph": args.graph, "defense": args.defense,
           "seed": args.seed, "graph_hash": g.digest(), "arg_hash": arg.digest()}
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(args.out / "defend.csv", cfg, DEFEND_COLUMNS, [row])
    (args.out / "plan.jsonl").write_text(plan.to_jsonl())
    write_edge_list(args.out / "arg.edges", arg)
    if arg.labels is not None:
        write_id_map(args.out / "arg.idmap", arg)
    sys.stdout.write((args.out / "defend.csv").read_text())
    print(f"wall_time_s={wall:.6f}", file=sys.stderr)
    return EXIT_OK


ENSEMBLE_COLUMNS = ("step", "time", "infected_mean", "infected_q05", "infected_q50",
                    "infected_q95", "footprint_mean", "footprint_q05", "footprint_q50",
                    "footprint_q95")
TRAJECTORY_COLUMNS = ("step", "time", "S", "I", "ID", "R", "footprint")
SUMMARY_COLUMNS = ("attack", "model", "beta", "mu", "gamma1", "gamma2", "lambda1",
                   "effective_strength", "runs", "died_out_fraction", "final_footprint",
                   "slope", "intercept", "r2", "slope_defined")


def _die_out(res):
    try:
        return die_out_check(res)
    except ValueError:
        return None


def cmd_simulate(args) -> int:
    g = load_graph(args.graph, args.seed)
    if args.defense:
        g, _ = apply_defense(g, args.defense, args.seed)
    model, params = resolve_attack(args.attack)
    p0 = "random" if args.patient_zero is None else args.patient_zero
    res = ensemble(g, model, params, args.runs, args.seed, p0, args.max_steps, args.jobs)
    lam = spectral_radius(g)
    cfg = {"command": "simulate", "graph": args.graph, "defense": args.defense,
           "attack": args.attack, "model": model, "params": params.as_dict(),
           "runs": args.runs, "seeds": [args.seed, args.seed + args.runs - 1],
           "max_steps": args.max_steps, "patient_zero": p0, "graph_hash": g.digest()}
    qi, qf = res.quantiles("infected"), res.quantiles("footprint")
    rows = [(t, t * params.dt, res.mean_infected[t], *qi[:, t], res.mean_footprint[t], *qf[:, t])
            for t in range(res.infected.shape[1])]
    write_csv(args.out / "ensemble.csv", cfg, ENSEMBLE_COLUMNS, rows)
    if args.trajectory_run is None:
        comp = res.compartments.mean(axis=0)
        foot = res.mean_footprint
    else:
        r = args.trajectory_run - args.seed
        if not 0 <= r < res.runs:
            raise ConfigError("--trajectory-run must be one of the ensemble seeds")
        comp, foot = res.compartments[r], res.footprint[r]
    traj = [(t, t * params.dt, *comp[t], foot[t]) for t in range(comp.shape[0])]
    write_csv(args.out / "trajectory.csv", dict(cfg, trajectory_run=args.trajectory_run),
              TRAJECTORY_COLUMNS, traj)
    rep = _die_out(res)
    mu = params.mu
    s = effective_strength(lam, params.beta, mu) if mu > 0 else math.inf
    summary = (args.attack, model, params.beta, mu, params.gamma1, params.gamma2, lam, s,
               args.runs, res.died_out_fraction, res.final_footprint,
               rep.slope if rep else math.nan, rep.intercept if rep else math.nan,
               rep.r2 if rep else math.nan, bool(rep and rep.slope_defined))
    write_csv(args.out / "summary.csv", cfg, SUMMARY_COLUMNS, [summary])
    sys.stdout.write((args.out / "summary.csv").read_text())
    return EXIT_OK


# ---------------------------------------------------------------- sweep

@dataclass
class ExperimentConfig:
    """Sweep description, loadable from JSON.

    ``defenses`` entries are strategy names (budget goes to ``k`` for node
    strategies and ``edges`` for edge strategies), or full defense strings in
    which ``{b}`` is replaced by each budget.
    """

    graph: str
    defenses: list
    attacks: list
    budgets: list = field(default_factory=lambda: [None])
    runs: int = 500
    max_steps: int = 1000
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg.expand()
        return cfg

    def expand(self):
        """Resolved (defense string, attack name) cells in canonical order."""
        for a in self.attacks:
            resolve_attack(a)
        cells = []
        for d in self.defenses:
            for b in self.budgets:
                cells.append(_defense_cell(d, b))
        seen, out = set(), []
        for d in cells:
            if d not in seen:
                parse_defense(d)
                seen.add(d)
                out.append(d)
        return [(d, a) for d in out for a in self.attacks]


_NODE = {"NodeSplit", "Degree", "ENS", "NB", "RandN", "CINode"}
_EDGE = {"MET", "RandE"}


def _defense_cell(d: str, b) -> str:
    if "{b}" in d:
        if b is None:
            raise ConfigError(f"defense {d!r} needs budgets")
        return d.replace("{b}", str(b))
    if ":" in d or "+" in d or b is None:
        return d
    name = canonical_strategy(d)
    if name in _NODE:
        return f"{name}:k={int(b)}"
    if name in _EDGE:
        return f"{name}:edges={b}"
    return name


SWEEP_COLUMNS = ("cell", "defense", "attack", "lambda_before", "lambda_after",
                 "eigendrop_pct", "sigma", "mean_footprint", "died_out_fraction", "slope",
                 "nodes_removed", "edges_removed", "splits")


def cell_key(graph_hash, defense, attack, runs, max_steps, seed) -> str:
    model, params = resolve_attack(attack)
    blob = json.dumps({"graph": graph_hash, "defense": defense, "model": model,
                       "params": params.as_dict(), "runs": runs, "max_steps": max_steps,
                       "seed": seed}, sort_keys=True)
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


def run_cell(g: Graph, defense: str, attack: str, runs: int, max_steps: int, seed: int,
             lam0: float | None = None):
    arg, plan = apply_defense(g, defense, seed)
    m = defend_metrics(g, arg, plan, defense, lam0)
    model, params = resolve_attack(attack)
    res = ensemble(arg, model, params, runs, seed, "random", max_steps)
    rep = _die_out(res)
    return {"defense": defense, "attack": attack, "lambda_before": m[5],
            "lambda_after": m[6], "eigendrop_pct": m[7], "sigma": m[9],
            "mean_footprint": res.final_footprint,
            "died_out_fraction": res.died_out_fraction,
            "slope": rep.slope if rep and rep.slope_defined else math.nan,
            "nodes_removed": m[10], "edges_removed": m[11], "splits": m[12]}


def _cell_job(job):
    g, key, defense, attack, cfg, lam0 = job
    try:
        return key, run_cell(g, defense, attack, cfg.runs, cfg.max_steps, cfg.seed, lam0), None
    except Exception as exc:  # logged per cell; the sweep goes on
        return key, None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> tuple[Path, int]:
    """Run (or resume) a sweep; returns the CSV path and the failed-cell count."""
    g = load_graph(cfg.graph, cfg.seed)
    gh = g.digest()
    cells = cfg.expand()
    cell_dir = out / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    lam0 = spectral_radius(g)
    todo = []
    keys = {}
    for d, a in cells:
        key = cell_key(gh, d, a, cfg.runs, cfg.max_steps, cfg.seed)
        keys[key] = (d, a)
        if (cell_dir / f"{key}.json").exists():
            log.info("cell %s (%s, %s) already done", key, d, a)
            continue
        todo.append((g, key, d, a, cfg, lam0))
    failed = 0

    def record(result):
        nonlocal failed
        key, row, err = result
        if err is not None:
            failed += 1
            log.error("cell %s %s failed: %s", key, keys[key], err)
            return
        # each finished cell is persisted at once, so an interrupted sweep resumes
        tmp = cell_dir / f"{key}.json.tmp"
        tmp.write_text(json.dumps(row, sort_keys=True, default=float))
        tmp.replace(cell_dir / f"{key}.json")

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for result in ex.map(_cell_job, todo):
                record(result)
    else:
        for job in todo:
            record(_cell_job(job))
    rows = []
    for key in sorted(keys):
        path = cell_dir / f"{key}.json"
        if not path.exists():
            continue
        r = json.loads(path.read_text())
        rows.append([key] + [r[c] for c in SWEEP_COLUMNS[1:]])
    header = {"command": "sweep", **asdict(cfg), "graph_hash": gh,
              "cells": {k: list(v) for k, v in sorted(keys.items())}}
    write_csv(out / "sweep.csv", header, SWEEP_COLUMNS, rows)
    return out / "sweep.csv", failed


def cmd_sweep(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    else:
        if not (args.graph and args.defenses and args.attacks):
            raise ConfigError("sweep needs --config or --graph, --defenses and --attacks")
        cfg = ExperimentConfig(args.graph, args.defenses.split(";"), args.attacks.split(";"),
                               [_budget(b) for b in args.budgets.split(",")]
                               if args.budgets else [None],
                               args.runs, args.max_steps, args.seed)
        cfg.expand()
    path, failed = run_sweep(cfg, args.out, args.jobs)
    sys.stdout.write(path.read_text())
    if failed:
        print(f"{failed} cell(s) failed; rerun to retry", file=sys.stderr)
    return EXIT_NUMERICAL if failed else EXIT_OK


def _budget(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


# ---------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    events = read_trace(args.trace)
    curve = reconstruct(events, args.bin_width, args.n_hosts)
    if not passes_threshold(curve, args.min_infected_frac):
        raise TraceError(f"only {curve.total_infected} of {curve.n_hosts} hosts infected; "
                         f"below the {args.min_infected_frac:g} threshold")
    models = [m.strip().upper() for m in args.models.split(",")]
    for m in models:
        if m not in MODELS:
            raise ConfigError(f"unknown model {m!r}")
    fits = fit_all(curve, models, time_unit=args.time_unit)
    cfg = {"command": "fit", "trace": str(args.trace), "models": models,
           "bin_width": args.bin_width, "time_unit": args.time_unit,
           "n_hosts": curve.n_hosts, "min_infected_frac": args.min_infected_frac}
    label = args.variant if args.variant else Path(args.trace).stem
    write_csv(args.out / "aic.csv", cfg, ["variant"] + models,
              [[label] + [fits[m].aic for m in models]])
    write_csv(args.out / "fit_params.csv", cfg,
              ("model", "k", "beta", "mu", "gamma1", "gamma2", "rss", "aic", "converged"),
              [(m, N_PARAMS[m], f.params.beta, f.params.mu, f.params.gamma1, f.params.gamma2,
                f.rss, f.aic, f.converged) for m, f in fits.items()])
    sys.stdout.write((args.out / "aic.csv").read_text())
    if args.smc:
        best = min(models, key=lambda m: fits[m].aic)
        post = abc_smc(curve, best, None, args.generations, args.population, args.seed,
                       time_unit=args.time_unit)
        post.to_csv(args.out / "posterior.csv")
        means = post.mean()
        print(f"posterior ({best}): " + ", ".join(f"{k}={v:.4f}" for k, v in means.items()))
        if post.aborted:
            print(f"ABC-SMC aborted: {post.message}", file=sys.stderr)
            return EXIT_NUMERICAL
    return EXIT_OK


def cmd_trace(args) -> int:
    """Write a synthetic homogeneous-mixing trace (for testing the fit path)."""
    model, params = resolve_attack(args.attack)
    events, _, _ = well_mixed_trace(args.hosts, model, params, 1, args.max_steps, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_trace(args.out / "trace.csv", events)
    print(f"{len(events)} events -> {args.out / 'trace.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- CLI

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands get SUPPRESS defaults so they never overwrite flags given
    # before the subcommand name
    def d(value):
        return argparse.SUPPRESS if suppress else value
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=d(0), help="base seed (default 0)")
    common.add_argument("--jobs", type=int, default=d(1), help="worker processes")
    common.add_argument("--out", type=Path, default=d(Path("spmguard-out")),
                        help="output directory (default ./spmguard-out)")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="spmguard", parents=[_global_flags(suppress=False)],
                                description="Topology defenses against self-propagating malware.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", parents=[common], help="graph statistics row")
    s.add_argument("graph", help="edge-list path or generator spec (ba:n=..,m=..)")
    s.add_argument("--kcore", type=int)
    s.add_argument("--label", help="port_label column (default: file stem)")
    s.add_argument("--distance-sample", type=int, default=2000)
    s.set_defaults(func=cmd_stats)

    d = sub.add_parser("defend", parents=[common], help="apply one defense")
    d.add_argument("graph")
    d.add_argument("defense", help='e.g. "Degree:k=50" or "NodeSplit:k=50+MET:edges=0.1"')
    d.set_defaults(func=cmd_defend)

    m = sub.add_parser("simulate", parents=[common], help="epidemic ensemble")
    m.add_argument("graph")
    m.add_argument("--attack", default="wc_1_1s", help="variant name or MODEL:beta=..,mu=..")
    m.add_argument("--defense", help="defense applied before simulating")
    m.add_argument("--runs", type=int, default=500)
    m.add_argument("--max-steps", type=int, default=1000)
    m.add_argument("--patient-zero", type=int)
    m.add_argument("--trajectory-run", type=int,
                   help="seed of a single run to dump to trajectory.csv (default: ensemble means)")
    m.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", parents=[common], help="defense x attack x budget grid")
    w.add_argument("--config", help="JSON experiment config")
    w.add_argument("--graph")
    w.add_argument("--defenses", help="';'-separated defense names or specs")
    w.add_argument("--attacks", help="';'-separated attack specs")
    w.add_argument("--budgets", help="','-separated budgets")
    w.add_argument("--runs", type=int, default=500)
    w.add_argument("--max-steps", type=int, default=1000)
    w.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fit", parents=[common], help="AIC model selection on a trace")
    f.add_argument("trace", type=Path)
    f.add_argument("--models", default="SI,SIS,SIR,SIIDR")
    f.add_argument("--bin-width", type=float, default=1.0)
    f.add_argument("--time-unit", type=float, help="seconds per model step (default: bin width)")
    f.add_argument("--n-hosts", type=int)
    f.add_argument("--min-infected-frac", type=float, default=0.2)
    f.add_argument("--variant", help="row label in the AIC table")
    f.add_argument("--smc", action="store_true", help="run ABC-SMC on the best model")
    f.add_argument("--population", type=int, default=1000)
    f.add_argument("--generations", type=int, default=6)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("trace", parents=[common], help="synthetic homogeneous-mixing trace")
    t.add_argument("--attack", default="wc_4_1s")
    t.add_argument("--hosts", type=int, default=100)
    t.add_argument("--max-steps", type=int, default=5000)
    t.set_defaults(func=cmd_trace)
    return p


_EXIT_MAP = (
    ((ConfigError, ParameterError, DefenseError, PartitionError, json.JSONDecodeError),
     EXIT_CONFIG),
    ((EdgeListError, EmptyGraphError, TraceError, NBCentralityError), EXIT_INPUT),
    ((ConvergenceError, OdeInstabilityError, FitError, ArithmeticError), EXIT_NUMERICAL),
    ((OSError,), EXIT_IO),
    ((GraphError,), EXIT_INPUT),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:
        for types, code in _EXIT_MAP:
            if isinstance(exc, types):
                print(f"spmguard: error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
