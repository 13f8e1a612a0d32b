"""Command line entry point: rbsde-lab {solve,reflect,stop,game,priors,verify}.

Exit codes: 0 when every asserted property passes, 1 on a property failure,
2 on configuration errors, 3 on solver precondition failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .. import __version__, bsde, priors, robust, stopping
from ..errors import (ConfigError, DriverError, EnumerationCapError, LatticeError, SolverPreconditionError)
from ..lattice import AdaptedProcess, build_default_lattice
from ..rbsde import skorokhod_report, solve_rbsde
from . import io
from .config import ExperimentConfig, TASKS, load_config, parse_config
from .suites import DEFAULT_INSTANCES, run_suites

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PRECONDITION = 0, 1, 2, 3


def _prop(name, value, tol, passed=None):
    value = float(value)
    passed = (value <= tol) if passed is None else passed
    return {"name": name, "value": value, "tolerance": tol, "passed": bool(passed)}


def _finish(cfg: ExperimentConfig, out: Path, doc: dict) -> int:
    props = doc.get("properties", [])
    doc["passed"] = all(p["passed"] for p in props)
    doc["schema"] = io.REPORT_SCHEMA
    doc["task"] = cfg.task
    doc["seed"] = cfg.seed
    io.write_report(out / "report.json", doc)
    for p in props:
        print(f"{'PASS' if p['passed'] else 'FAIL'} {p['name']}: {p['value']!r} (tol {p['tolerance']!r})")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK if doc["passed"] else EXIT_FAIL


def _terminal(cfg, model, obstacle=None) -> AdaptedProcess:
    if cfg.terminal is not None:
        return cfg.build_obstacle(model, cfg.terminal, "terminal")
    if obstacle is not None:
        return obstacle
    return cfg.build_obstacle(model)


def task_solve(cfg: ExperimentConfig, out: Path) -> int:
    model = cfg.build_model()
    d = cfg.build_driver(model)
    xi = _terminal(cfg, model)
    sol = bsde.solve_bsde(model, d, xi[model.N])
    res = bsde.node_residuals(model, d, sol)
    io.write_csv(out / "solution.csv", *io.solution_rows(model, sol.Y, sol.Z, sol.K))
    io.write_plot_tsv(out / "plot.tsv", model, {"Y": sol.Y})
    its = int(max((np.max(a) for a in sol.iterations), default=0))
    doc = {"model": model.to_dict(), "driver": d.name, "root": sol.root, "max_picard_iterations": its,
           "properties": [_prop("node_equation_residual", res, cfg.tolerances["exact"])]}
    return _finish(cfg, out, doc)


def task_reflect(cfg: ExperimentConfig, out: Path) -> int:
    model = cfg.build_model()
    d = cfg.build_driver(model)
    xi = cfg.build_obstacle(model)
    sol = solve_rbsde(model, d, xi)
    sk = skorokhod_report(sol, tol=cfg.tolerances["skorokhod"])
    io.write_csv(out / "solution.csv", *io.solution_rows(model, sol.Y, sol.Z, sol.K, sol.A, sol.dA, xi))
    io.write_plot_tsv(out / "plot.tsv", model, {"Y": sol.Y, "xi": xi})
    tol = cfg.tolerances["skorokhod"]
    doc = {"model": model.to_dict(), "driver": d.name, "root": sol.root,
           "properties": [_prop("flat_off", sk.flat_off, tol), _prop("push_nondecreasing", max(0.0, -sk.min_dA), tol),
                          _prop("above_obstacle", max(0.0, -sk.min_slack), tol),
                          _prop("terminal_condition", sk.terminal_gap, tol)]}
    return _finish(cfg, out, doc)


def task_stop(cfg: ExperimentConfig, out: Path) -> int:
    model = cfg.build_model()
    d = cfg.build_driver(model)
    xi = cfg.build_obstacle(model)
    S = tuple(cfg.S)
    sol = solve_rbsde(model, d, xi)
    ys = float(sol.Y[S[0]][S[1]])
    tol = cfg.tolerances["exact"]
    tau = stopping.optimal_time(sol, xi, S)
    x_star = stopping.evaluate_stopped(model, d, xi, tau, S)
    props = [_prop("optimal_time_attains_value", abs(x_star - ys), tol)]
    eps_rows = []
    for eps in cfg.eps:
        te = stopping.eps_optimal_time(sol, xi, S, eps)
        gap = ys - stopping.evaluate_stopped(model, d, xi, te, S)
        bound = stopping.eps_gap_bound(d.lipschitz, model.T, eps)
        eps_rows.append({"eps": eps, "gap": gap, "bound": bound, "gap_at_most_eps": gap <= eps})
        props.append(_prop(f"eps_gap_within_bound[{eps!r}]", max(0.0, -gap - tol, gap - bound), 0.0))
    oracle = None
    if not model.recombining and model.subtree_size(*S) <= cfg.caps["nodes"]:
        oracle, _ = stopping.brute_force_value(model, d, xi, S, cap=int(cfg.caps["nodes"]))
        props.append(_prop("value_equals_enumeration", abs(oracle - ys), tol))
    io.write_csv(out / "solution.csv", *io.solution_rows(model, sol.Y, sol.Z, sol.K, sol.A, sol.dA, xi))
    io.write_rows_tsv(out / "stopping_region.tsv", ["t", "node", "stop"],
                      stopping.stopping_region_triples(model, tau))
    io.write_plot_tsv(out / "plot.tsv", model, {"Y": sol.Y, "xi": xi})
    doc = {"model": model.to_dict(), "driver": d.name, "S": list(S), "Y_S": ys, "optimal_value": x_star,
           "enumeration_value": oracle, "eps": eps_rows, "properties": props}
    return _finish(cfg, out, doc)


def task_game(cfg: ExperimentConfig, out: Path) -> int:
    model = cfg.build_model()
    fam = cfg.build_family(model)
    xi = cfg.build_obstacle(model)
    S = tuple(cfg.S)
    rep = robust.solve_game(model, fam, xi, S, cap=int(cfg.caps["nodes"]), row_cap=int(cfg.caps["rows"]))
    tol = cfg.tolerances["exact"]
    props = [_prop("upper_equals_inf_driver_solution", abs(rep.V_upper - rep.Y_S), tol),
             _prop("optimization_principle", rep.principle_gap, tol)]
    if not model.recombining:
        props.append(_prop("upper_equals_lower", abs(rep.V_upper - rep.V_lower), tol))
        props.append(_prop("saddle_certified", 0.0 if rep.certified else 1.0, 0.0))
    sol = rep.solution
    io.write_csv(out / "solution.csv", *io.solution_rows(model, sol.Y, sol.Z, sol.K, sol.A, sol.dA, xi))
    io.write_rows_tsv(out / "control.tsv", ["layer", "node", "control"],
                      [(i, model.node_label(i, n), int(a)) for i in range(model.N)
                       for n, a in enumerate(rep.control.indices[i])])
    io.write_plot_tsv(out / "plot.tsv", model, {"Y": sol.Y, "xi": xi})
    doc = {"model": model.to_dict(), "game": rep.to_dict(), "properties": props}
    return _finish(cfg, out, doc)


def _state_terminal(cfg: ExperimentConfig, model):
    spec = cfg.terminal or cfg.obstacle
    if spec is None:
        raise ConfigError("task 'priors' needs a 'terminal'")
    kind = spec["kind"]
    u = np.asarray(model.marks.marks, dtype=float)
    T = model.T
    if kind == "constant":
        v = float(spec.get("value", 0.0))
        return lambda W, Nc: np.full(np.shape(W), v)
    if kind == "ramp":
        v = float(spec.get("a", 0.0)) + float(spec.get("b", 0.0)) * T
        return lambda W, Nc: np.full(np.shape(W), v)
    if kind in ("put", "call"):
        s, vol, j = float(spec.get("strike", 1.0)), float(spec.get("vol", 0.3)), float(spec.get("jump", 0.1))
        sign = 1.0 if kind == "put" else -1.0
        return lambda W, Nc: np.maximum(sign * (s - np.exp(vol * W + j * (Nc @ u if u.size else 0.0))), 0.0)
    raise ConfigError(f"terminal kind {kind!r} is not a function of the state and cannot be refined")


def task_priors(cfg: ExperimentConfig, out: Path) -> int:
    model = cfg.build_model()
    fam = cfg.build_family(model)
    if fam.prior is None:
        raise ConfigError("task 'priors' needs a family given by 'alphas'")
    term = _state_terminal(cfg, model)
    base = build_default_lattice(model.T, cfg.refine[0], model.marks, recombining=model.recombining)
    rep = priors.cross_check_prior_equivalence(base, fam.prior, cfg.control, fam.F, term, cfg.refine,
                                               seed=cfg.seed or 0, F_lipschitz=fam.F_lipschitz)
    ratio_bad = [max(0.0, rep.ratio_band[0] - r, r - rep.ratio_band[1]) for r in rep.ratios]
    props = [_prop("driver_identity", rep.identity_gap, 1e-12),
             _prop("first_order_gap_ratios", max(ratio_bad, default=0.0), 0.0, passed=rep.passed)]
    if rep.density_error is not None:
        props.append(_prop("density_mean_one", rep.density_error, 1e-12))
    io.write_rows_tsv(out / "plot.tsv", ["N", "q_value", "p_value", "gap"],
                      [(n, repr(q), repr(p), repr(g)) for n, q, p, g in zip(rep.refinements, rep.q_values,
                                                                             rep.p_values, rep.gaps)])
    doc = {"model": model.to_dict(), "equivalence": rep.to_dict(), "properties": props}
    return _finish(cfg, out, doc)


def task_verify(cfg: ExperimentConfig, out: Path) -> int:
    reports = run_suites(cfg.seed, cfg.suites, cfg.instances, cfg.refine)
    props = []
    for r in reports:
        for p in r.properties:
            props.append({"name": f"{r.suite}.{p.name}", "value": p.max_residual, "tolerance": p.tolerance,
                          "passed": p.passed if p.gating else True})
        print(f"# suite {r.suite}: {'pass' if r.passed else 'FAIL'} in {r.wall_time:.2f}s", file=sys.stderr)
    doc = {"suites": {r.suite: r.to_dict() for r in reports}, "properties": props,
           "instances": cfg.instances, "default_instances": DEFAULT_INSTANCES}
    return _finish(cfg, out, doc)


HANDLERS = {"solve": task_solve, "reflect": task_reflect, "stop": task_stop, "game": task_game,
            "priors": task_priors, "verify": task_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rbsde-lab", description="Reflected BSDE lattice experiments")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="task", required=True)
    for name in TASKS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory (default from the config, else ./out)")
        p.add_argument("--instances", type=int, help="instances per suite (verify)")
        p.add_argument("--refine", help='comma separated refinements, e.g. "8,16,32,64"')
    return ap


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.task == "verify":
        cfg = parse_config({"version": 1, "task": "verify", "seed": args.seed if args.seed is not None else 0})
    else:
        raise ConfigError(f"task {args.task!r} needs --config")
    cfg.task = args.task
    if args.seed is not None:
        cfg.seed = args.seed
    if args.task == "verify" and cfg.seed is None:
        raise ConfigError("task 'verify' needs a seed")
    if args.out:
        cfg.output = args.out
    if args.instances is not None:
        if args.instances < 1:
            raise ConfigError("--instances must be positive")
        cfg.instances = args.instances
    if args.refine:
        try:
            cfg.refine = tuple(int(v) for v in args.refine.split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"--refine: {exc}") from exc
        if not cfg.refine:
            raise ConfigError("--refine is empty")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[cfg.task](cfg, out)
    except (ConfigError, LatticeError, DriverError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverPreconditionError, EnumerationCapError) as exc:
        print(f"solver precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
