"""Acceptance criteria 1-10, one PASS/FAIL line each (run with -s to see them inline).

Tolerances are pinned here; the suites are run at seed 42 with their default
instance counts.
"""

import subprocess
import sys
import time
from functools import lru_cache

import numpy as np

from rbsde_lab.harness import generators as gen
from rbsde_lab.harness.suites import DEFAULT_INSTANCES, SID, SUITES
from rbsde_lab.rbsde import solve_rbsde
from rbsde_lab.stopping import brute_force_value

SEED = 42
EXACT = 1e-10
SKOROKHOD = 1e-12
PRIOR_EXACT = 1e-12
RATIO_BAND = (0.375, 0.625)
CONTRACTION_MAX = 0.55
CHAR_SECONDS = 60.0
GAME_SECONDS = 300.0


@lru_cache(maxsize=None)
def suite(name):
    t0 = time.perf_counter()
    rep = SUITES[name](SEED, DEFAULT_INSTANCES[name])
    return rep, time.perf_counter() - t0


def _record(log, k, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {title} ({detail})"
    print(line)
    log.append(line)
    assert ok, line


def _prop(rep, name):
    p = rep.get(name)
    assert p is not None, f"{rep.suite} has no property {name}"
    return p


def test_criterion_01_characterization(acceptance_log):
    t0 = time.perf_counter()
    worst = 0.0
    shapes = set()
    n = DEFAULT_INSTANCES["characterization"]
    for k in range(n):
        inst = gen.small_instance(SEED, SID["characterization"], k)
        m = inst.model
        shapes.add((m.N, m.B, m.J))
        y = solve_rbsde(m, inst.driver, inst.obstacle).root
        v, _ = brute_force_value(m, inst.driver, inst.obstacle)
        worst = max(worst, abs(y - v))
    rep, secs = suite("characterization")
    props = ["rbsde_equals_enumeration_all_nodes", "rbsde_equals_rule_scan_root", "time_driver_stopped_value_formula"]
    worst_suite = max(_prop(rep, p).max_residual for p in props)
    elapsed = time.perf_counter() - t0
    small = all(N <= 4 and B <= 3 and J in (0, 1) for N, B, J in shapes)
    ok = (n >= 30 and small and worst <= EXACT and worst_suite <= EXACT and rep.passed
          and elapsed <= CHAR_SECONDS)
    _record(acceptance_log, 1, "RBSDE value equals brute-force max over stopping rules", ok,
            f"{n} instances, root gap {worst:.2e}, all-node gap {worst_suite:.2e} <= {EXACT:g}, {elapsed:.1f}s <= 60s")


def test_criterion_02_eps_bound(acceptance_log):
    rep, _ = suite("eps")
    cert = _prop(rep, "eps_gap_within_certified_bound")
    disc = _prop(rep, "eps_gap_at_most_eps")
    ok = cert.passed and cert.instances >= 3 * 30
    _record(acceptance_log, 2, "0 <= Y_S - X_S(tau_eps) <= eps exp(beta T / 2)", ok,
            f"{cert.instances} cases, worst bound violation {cert.max_residual:.2e}; "
            f"reported only: gap <= eps exceeded by {disc.max_residual:.2e} in "
            f"{disc.details['failures']} cases")


def test_criterion_03_optimal_rule(acceptance_log):
    rep, _ = suite("optimal_rule")
    att = _prop(rep, "optimal_time_attains_value")
    mini = _prop(rep, "optimal_time_pathwise_minimal")
    ok = att.passed and att.max_residual <= EXACT and mini.passed
    _record(acceptance_log, 3, "optimal time attains Y_S and is pathwise minimal among optimal rules", ok,
            f"{att.instances} cases, value gap {att.max_residual:.2e} <= {EXACT:g}, "
            f"minimality violations {mini.max_residual:g}")


def test_criterion_04_comparison(acceptance_log):
    rep, _ = suite("comparison")
    order = _prop(rep, "ordered_solutions")
    strict = _prop(rep, "strict_root_gap_above_bound")
    ok = order.instances >= 50 and order.passed and order.max_residual == 0.0 and strict.passed
    _record(acceptance_log, 4, "ordered data give ordered solutions, separated drivers a positive root gap", ok,
            f"{order.instances} ordered instances, max violation {order.max_residual:g}; "
            f"{strict.instances} strict instances, shortfall below bound {strict.max_residual:g}")


def test_criterion_05_game(acceptance_log):
    rep, secs = suite("game")
    eq = _prop(rep, "upper_equals_lower")
    inf = _prop(rep, "values_equal_inf_driver_solution")
    sad = _prop(rep, "saddle_certified_by_enumeration")
    sizes = {gen.game_instance(SEED, SID["game"], k)[1].size for k in range(DEFAULT_INSTANCES["game"])}
    ok = (DEFAULT_INSTANCES["game"] >= 20 and sizes == {2, 3} and eq.max_residual <= EXACT
          and inf.max_residual <= EXACT and sad.passed and rep.passed and secs <= GAME_SECONDS)
    _record(acceptance_log, 5, "upper and lower game values agree with the inf-driver solution, saddle certified", ok,
            f"{DEFAULT_INSTANCES['game']} families of sizes {sorted(sizes)}, |Vu - Vl| {eq.max_residual:.2e}, "
            f"|V - Y| {inf.max_residual:.2e} <= {EXACT:g}, {secs:.1f}s <= 300s")


def test_criterion_06_contraction(acceptance_log):
    rep, _ = suite("contraction")
    p = _prop(rep, "contraction_ratio_at_most_0.55")
    ok = p.passed and p.max_residual <= CONTRACTION_MAX
    _record(acceptance_log, 6, "Picard contraction ratio at N = 64", ok,
            f"{p.instances} instances, max ratio {p.max_residual:.3e} <= {CONTRACTION_MAX}")


def test_criterion_07_estimates(acceptance_log):
    rep, _ = suite("estimates")
    within = _prop(rep, "violations_within_c0_dt")
    halve = _prop(rep, "violations_halve_32_to_64")
    ok = within.passed and halve.passed and halve.instances >= 20
    _record(acceptance_log, 7, "a priori estimates hold within c0 dt, violations shrink from N = 32 to 64", ok,
            f"{within.instances} (instance, N) cases, max violation {within.max_residual:.2e}; "
            f"{halve.instances} refinement pairs, halving shortfall {halve.max_residual:g}")


def test_criterion_08_priors(acceptance_log):
    rep, _ = suite("priors")
    ident = _prop(rep, "driver_identity_exact")
    order = _prop(rep, "first_order_gap_ratios")
    dens = _prop(rep, "density_mean_one")
    ratios = np.asarray(order.details["ratios"], dtype=float)
    in_band = bool(np.all((ratios >= RATIO_BAND[0]) & (ratios <= RATIO_BAND[1])))
    ok = ident.max_residual <= PRIOR_EXACT and in_band and dens.max_residual <= PRIOR_EXACT and rep.passed
    _record(acceptance_log, 8, "prior-measure solve equals shifted driver to first order", ok,
            f"identity gap {ident.max_residual:.1e}, gap ratios in [{ratios.min():.3f}, {ratios.max():.3f}] "
            f"within {list(RATIO_BAND)}, |E[Z] - 1| {dens.max_residual:.1e} <= {PRIOR_EXACT:g}")


def test_criterion_09_skorokhod(acceptance_log):
    worst = 0.0
    count = 0
    ok = True
    for name, prop in (("skorokhod", "skorokhod_conditions"), ("characterization", "skorokhod"),
                       ("game", "skorokhod")):
        p = _prop(suite(name)[0], prop)
        worst = max(worst, p.max_residual)
        count += p.instances
        ok = ok and p.passed
    ok = ok and worst <= SKOROKHOD
    _record(acceptance_log, 9, "flat-off, dA >= 0 and Y >= xi on every reflected solve", ok,
            f"{count} solves, worst residual {worst:.1e} <= {SKOROKHOD:g}")


def test_criterion_10_determinism(acceptance_log, tmp_path):
    outs = []
    codes = []
    for run in ("a", "b"):
        out = tmp_path / run
        r = subprocess.run([sys.executable, "-m", "rbsde_lab", "verify", "--seed", str(SEED), "--out", str(out)],
                           capture_output=True, text=True)
        codes.append(r.returncode)
        outs.append((out / "report.json").read_bytes())
    ok = codes == [0, 0] and outs[0] == outs[1]
    _record(acceptance_log, 10, "repeated verify run gives a byte-identical report", ok,
            f"exit codes {codes}, {len(outs[0])} bytes, identical={outs[0] == outs[1]}")
