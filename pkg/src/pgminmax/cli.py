"""Experiment runner.

Usage::

    pgminmax run CONFIG
    pgminmax compare CONFIG [CONFIG ...] [--out FILE]
    pgminmax stationarity CONFIG --at ITERATE_FILE

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
The environment variable ``PGMINMAX_OUTPUT_DIR`` overrides ``output.dir``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import PlConfig, StepSchedule, erm_sgd, pl_method
from .config import SCHEMA, load_config
from .data_io import flip_labels, format_float, imbalance_split, make_synthetic, metrics, parse_libsvm, write_trace_csv
from .errors import ConfigurationError, ConvergenceError, NumericalError, ParseError
from .geometry import PrimalConstraint
from .outer import D1, D2, pg_smd, pg_svrg
from .problems import DroTruncatedLogistic
from .stationarity import psi_value, stationarity_report

OUTPUT_ENV = "PGMINMAX_OUTPUT_DIR"


def rng_streams(cfg):
    """(data, split, algorithm, diagnostics) generators; each depends on one seed only."""
    data = np.random.default_rng(np.random.SeedSequence(cfg["data.seed"]))
    split = np.random.default_rng(np.random.SeedSequence(cfg["split.seed"]))
    algo_ss, diag_ss = np.random.SeedSequence(cfg["run.seed"]).spawn(2)
    return data, split, np.random.default_rng(algo_ss), np.random.default_rng(diag_ss)


def build_data(cfg, data_rng, split_rng):
    if cfg["data.source"] == "libsvm":
        ds = parse_libsvm(cfg["data.path"], name=cfg["data.name"])
    else:
        ds = make_synthetic(cfg["data.n_pos"], cfg["data.n_neg"], cfg["data.d"], data_rng,
                            separation=cfg["data.separation"], normalize=cfg["data.normalize"],
                            name=cfg["data.name"])
    train, test = imbalance_split(ds, cfg["split.neg_keep_fraction"], cfg["split.test_fraction"], split_rng)
    if cfg["split.flip_fraction"] > 0:
        train = flip_labels(train, cfg["split.flip_fraction"], split_rng)
    return train, test


def build_constraint(cfg, d):
    kind = cfg["problem.constraint"]
    if kind == "ball":
        return PrimalConstraint.ball(cfg["problem.radius"])
    if kind == "box":
        r = cfg["problem.radius"]
        return PrimalConstraint.box(-r * np.ones(d), r * np.ones(d))
    return PrimalConstraint.free()


def build_problem(cfg, train):
    return DroTruncatedLogistic(train.features, train.labels, alpha=cfg["problem.alpha"],
                                theta=cfg["problem.theta"], constraint=build_constraint(cfg, train.d),
                                geometry=cfg["problem.geometry"], name=train.name)


def resolve_gamma_cfg(cfg, problem):
    if cfg["solver.gamma"] is not None:
        return cfg["solver.gamma"]
    return 1.0 / (2.0 * problem.constants.rho)


class Diagnostics:
    """Per-row instrumentation; never touches the algorithm's random stream."""

    def __init__(self, cfg, problem, test, gamma, rng):
        self.cfg = cfg
        self.problem = problem
        self.test = test
        self.gamma = gamma
        self.rng = rng
        self.start = time.perf_counter()
        self.smooth_psi = problem.theta > 0

    def __call__(self, t, x, counter):
        cfg = self.cfg
        row = {}
        if t % cfg["diagnostics.psi_stride"] == 0:
            row["psi"] = psi_value(self.problem, x)
        if t % cfg["diagnostics.moreau_stride"] == 0:
            rep = stationarity_report(self.problem, x, self.gamma, cfg["diagnostics.tol"], cfg["diagnostics.max_iters"])
            row["moreau_grad_sq"] = rep.grad_norm_sq
        if cfg["diagnostics.metrics"] and self.test is not None and self.test.n:
            err, f = metrics(self.test.features @ x, self.test.labels)
            row["test_error"] = err
            row["f_score"] = f
        if cfg["diagnostics.wall_clock"]:
            row["wall_ms"] = 1000.0 * (time.perf_counter() - self.start)
        return row


def run_solver(cfg, problem, rng, hook):
    name = cfg["solver.name"]
    x0 = np.zeros(problem.p)
    T = cfg["solver.T"]
    seed = cfg["run.seed"]
    if name in ("pg-smd-d1", "pg-smd-d2"):
        scale = {"eta_x": cfg["solver.eta_x_scale"], "eta_y": cfg["solver.eta_y_scale"]}
        return pg_smd(problem, x0, T, D1 if name.endswith("d1") else D2, rng, hook, cfg["solver.gamma"],
                      cfg["solver.batch"], scale, seed)
    if name == "pg-svrg":
        overrides = {"J": cfg["solver.svrg_J"], "eta_x": cfg["solver.svrg_eta_x"], "eta_y": cfg["solver.svrg_eta_y"]}
        return pg_svrg(problem, x0, T, rng, hook, cfg["solver.gamma"], cfg["solver.C_k"], overrides, seed=seed)
    if name in ("pl-smd", "pl-svrg"):
        pl = PlConfig(eta=cfg["solver.pl_eta"], inner=name[3:], T_outer=T, inner_iters=cfg["solver.pl_inner_iters"],
                      eta_x=cfg["solver.pl_eta_x"], eta_y=cfg["solver.pl_eta_y"], batch=cfg["solver.batch"],
                      stages=cfg["solver.pl_stages"], dual_init=cfg["solver.pl_dual_init"], lam=cfg["solver.pl_lam"])
        return pl_method(problem, x0, pl, rng, hook, seed)
    if name == "erm-sgd":
        sched = StepSchedule(cfg["solver.erm_step_sizes"], cfg["solver.erm_step_starts"])
        return erm_sgd(problem, x0, cfg["solver.erm_steps"], sched, cfg["solver.batch"], rng, hook, seed=seed)
    raise ConfigurationError(f"solver.name: unknown solver {name!r}")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def output_dir(cfg):
    return Path(os.environ.get(OUTPUT_ENV) or cfg["output.dir"])


def run_experiment(cfg, out_dir=None):
    """Run one configured experiment; write the trace CSV and summary JSON.

    Returns ``(trace_path, summary_path, summary_dict, trace)``.
    """
    data_rng, split_rng, algo_rng, diag_rng = rng_streams(cfg)
    train, test = build_data(cfg, data_rng, split_rng)
    problem = build_problem(cfg, train)
    gamma = resolve_gamma_cfg(cfg, problem)
    hook = Diagnostics(cfg, problem, test, gamma, diag_rng)
    trace = run_solver(cfg, problem, algo_rng, hook)

    out = Path(out_dir) if out_dir is not None else output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    prefix = cfg["output.prefix"] or cfg["solver.name"]
    trace_path = out / f"{prefix}_trace.csv"
    summary_path = out / f"{prefix}_summary.json"
    write_trace_csv(trace.rows, trace_path)

    rep = stationarity_report(problem, trace.x_out, gamma, cfg["diagnostics.tol"], cfg["diagnostics.max_iters"])
    final_grad_sq = rep.grad_norm_sq
    err, f = metrics(test.features @ trace.x_out, test.labels) if test.n else (math.nan, math.nan)
    errs = [r.test_error for r in trace.rows if not math.isnan(r.test_error)]
    fs = [r.f_score for r in trace.rows if not math.isnan(r.f_score)]
    psis = [(r.psi, r.t) for r in trace.rows if not math.isnan(r.psi)]
    summary = {
        "solver": trace.solver,
        "config": cfg,
        "gamma": gamma,
        "tau": trace.tau,
        "x_out": trace.x_out,
        "final_psi": psi_value(problem, trace.x_out),
        "final_moreau_grad_sq": final_grad_sq,
        "final_test_error": err,
        "final_f_score": f,
        "best_test_error": min(errs) if errs else None,
        "best_f_score": max(fs) if fs else None,
        "argmin_psi_t": min(psis)[1] if psis else None,
        "total_data_passes": trace.counter.full_pass_equivalents,
        "oracle_counter": {
            "n": trace.counter.n,
            "stochastic_grad_calls": trace.counter.stochastic_grad_calls,
            "full_evaluations": trace.counter.full_evaluations,
        },
        "schedule": trace.schedule.table() if trace.schedule is not None else [],
        "constants": problem.constants.as_dict(),
        "constants_note": "derived conservative bounds for the truncated logistic loss",
        "train_size": train.n,
        "test_size": test.n,
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return trace_path, summary_path, summary, trace


COMPARE_HEADER = ["solver", "data_passes", "psi", "test_error", "f_score"]
SHARED_PREFIXES = ("data.", "split.")


def compare_solvers(cfgs, out_path):
    """Run several configs on the same data and split; write one long-format CSV."""
    if not cfgs:
        raise ConfigurationError("compare needs at least one configuration")
    ref = {k: cfgs[0][k] for k in SCHEMA if k.startswith(SHARED_PREFIXES)}
    for i, cfg in enumerate(cfgs[1:], start=2):
        diff = [k for k, v in ref.items() if cfg[k] != v]
        if diff:
            raise ConfigurationError(f"configuration {i} uses a different dataset or split: {', '.join(diff)}")
    labels = []
    for cfg in cfgs:
        label = cfg["output.prefix"] or cfg["solver.name"]
        while label in labels:
            label += "'"
        labels.append(label)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    results = []
    for cfg, label in zip(cfgs, labels):
        cfg = dict(cfg, **{"output.prefix": label})
        results.append(run_experiment(cfg, out_path.parent))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_HEADER)
        for label, (_, _, _, trace) in zip(labels, results):
            for r in trace.rows:
                w.writerow([label, format_float(r.data_passes), format_float(r.psi),
                            format_float(r.test_error), format_float(r.f_score)])
    return out_path


def read_iterate(path):
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if "x_out" not in doc:
            raise ConfigurationError(f"{path}: JSON iterate file needs an 'x_out' entry")
        return np.asarray(doc["x_out"], dtype=float)
    try:
        return np.asarray([float(s) for s in text.replace(",", " ").split()], dtype=float)
    except ValueError:
        raise ParseError(f"{path}: iterate file must contain numbers") from None


def stationarity_command(cfg, iterate_path):
    data_rng, split_rng, _, _ = rng_streams(cfg)
    train, _ = build_data(cfg, data_rng, split_rng)
    problem = build_problem(cfg, train)
    x = read_iterate(iterate_path)
    if x.shape != (problem.p,):
        raise ConfigurationError(f"iterate has {x.size} entries, expected {problem.p}")
    rep = stationarity_report(problem, x, resolve_gamma_cfg(cfg, problem), cfg["diagnostics.tol"],
                              cfg["diagnostics.max_iters"])
    return {
        "gamma": rep.gamma,
        "prox_point": rep.z,
        "grad_norm": rep.grad_norm,
        "grad_norm_sq": rep.grad_norm_sq,
        "psi_at_xbar": rep.psi_at_xbar,
        "psi_at_z": rep.psi_at_z,
        "envelope": rep.envelope,
        "iterations": rep.iterations,
        "residual": rep.residual,
    }


def _parser():
    ap = argparse.ArgumentParser(prog="pgminmax", description="Proximally guided min-max solvers: experiment runner")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config")
    p_cmp = sub.add_parser("compare", help="run several solvers on one dataset/split")
    p_cmp.add_argument("configs", nargs="+")
    p_cmp.add_argument("--out", default=None, help="combined CSV path (default: <output dir>/compare.csv)")
    p_st = sub.add_parser("stationarity", help="Moreau-envelope stationarity of a given iterate")
    p_st.add_argument("config")
    p_st.add_argument("--at", required=True, help="iterate file (numbers, or a run summary JSON)")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            trace_path, summary_path, _, _ = run_experiment(cfg)
            print(f"trace: {trace_path}\nsummary: {summary_path}")
        elif args.command == "compare":
            cfgs = [load_config(p) for p in args.configs]
            out = args.out or output_dir(cfgs[0]) / "compare.csv"
            print(f"comparison: {compare_solvers(cfgs, out)}")
        else:
            cfg = load_config(args.config)
            print(json.dumps(_jsonable(stationarity_command(cfg, args.at)), indent=2, sort_keys=True))
    except (ConfigurationError, ParseError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
