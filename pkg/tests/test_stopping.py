import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsde_lab.bsde import solve_bsde
from rbsde_lab.drivers import MonotoneJumpDriver, zero_driver
from rbsde_lab.lattice import AdaptedProcess, MarkSet, build_default_lattice
from rbsde_lab.rbsde import deterministic_obstacle, solve_rbsde
from rbsde_lab.stopping import (
    StoppingRule,
    brute_force_value,
    brute_force_values,
    check_optimality_criterion,
    enumerate_stopping_rules,
    eps_gap_bound,
    eps_optimal_time,
    evaluate_stopped,
    optimal_time,
    risk_value_function,
    tilde_stopping_time,
)

M1 = MarkSet((0.5,), (0.5,))


def _driver(c=(-0.3, 0.25, 0.1), gamma=0.2, marks=M1):
    return MonotoneJumpDriver(base=lambda t, y, z: c[0] * np.sin(y) + c[1] * np.tanh(z) + c[2],
                              base_lipschitz=max(abs(c[0]), abs(c[1])), gamma=(gamma,) * marks.size,
                              delta=0.5, marks=marks)


def _random_obstacle(m, seed):
    rng = np.random.default_rng(seed)
    return AdaptedProcess([rng.normal(size=m.layer_size(i)) for i in range(m.N + 1)])


def test_stop_now_and_stop_at_maturity():
    m = build_default_lattice(1.0, 3, M1)
    xi = _random_obstacle(m, 1)
    assert evaluate_stopped(m, _driver(), xi, StoppingRule.immediate(m)) == xi[0][0]
    v = evaluate_stopped(m, zero_driver(M1), xi, StoppingRule.at_maturity(m))
    p = m.node_probabilities(m.N)
    assert v == pytest.approx(float(np.dot(p, xi[m.N])), abs=1e-14)


def test_random_rule_matches_hand_recursion():
    m = build_default_lattice(1.0, 3, M1)
    xi = _random_obstacle(m, 4)
    rng = np.random.default_rng(9)
    rule = StoppingRule([rng.random(m.layer_size(i)) < 0.4 for i in range(m.N + 1)])
    rule = StoppingRule([np.zeros(1, bool)] + list(rule.indicators[1:]))
    d = zero_driver(M1)
    # hand recursion: value = xi where stopped else conditional mean of children
    y = np.array(xi[m.N], float)
    for i in range(m.N - 1, -1, -1):
        y = np.where(rule.indicators[i], xi[i], m.expect_next(i, y))
    assert evaluate_stopped(m, d, xi, rule) == pytest.approx(float(y[0]), abs=1e-14)


def test_brute_force_deterministic_cases():
    m = build_default_lattice(1.0, 3, M1)
    dec = deterministic_obstacle(m, [3.0, 2.0, 1.0, 0.0])
    v, rule = brute_force_value(m, zero_driver(M1), dec)
    assert v == 3.0 and rule.indicators[0][0]
    inc = deterministic_obstacle(m, [0.0, 1.0, 2.0, 3.0])
    v, rule = brute_force_value(m, zero_driver(M1), inc)
    assert v == pytest.approx(3.0)
    assert not any(rule.indicators[i].any() for i in range(m.N))


def test_brute_force_equals_rbsde_everywhere():
    m = build_default_lattice(1.0, 3, M1)
    d = _driver()
    xi = _random_obstacle(m, 7)
    r = solve_rbsde(m, d, xi)
    assert brute_force_values(m, d, xi).max_abs_diff(r.Y) <= 1e-10
    rules = enumerate_stopping_rules(m)
    assert len(rules) == 730
    best = max(evaluate_stopped(m, d, xi, rl) for rl in rules)
    assert abs(best - r.root) <= 1e-10


def test_eps_time_examples():
    m = build_default_lattice(1.0, 3, M1)
    xi = m.adapted(lambda i, t, W, Nc: W + 0.5 * (Nc[:, 0] - 0.5 * t))
    r = solve_rbsde(m, zero_driver(M1), xi)
    assert eps_optimal_time(r, xi, eps=0.01).indicators[0][0]
    assert optimal_time(r, xi).indicators[0][0]
    xi2 = _random_obstacle(m, 3)
    r2 = solve_rbsde(m, _driver(), xi2)
    big = max(float(np.max(r2.Y[i] - xi2[i])) for i in range(m.N + 1)) + 1.0
    assert eps_optimal_time(r2, xi2, eps=big).indicators[0][0]
    with pytest.raises(ValueError):
        eps_optimal_time(r2, xi2, eps=0.0)
    assert eps_gap_bound(1.0, 1.0, 0.01) == pytest.approx(0.01 * math.exp(2.5))


def test_optimal_time_increasing_obstacle_is_maturity():
    m = build_default_lattice(1.0, 3, M1)
    xi = deterministic_obstacle(m, [0.0, 1.0, 2.0, 3.0])
    r = solve_rbsde(m, zero_driver(M1), xi)
    tau = optimal_time(r, xi)
    assert not any(tau.indicators[i].any() for i in range(m.N))


def test_optimality_criterion():
    m = build_default_lattice(1.0, 3, M1)
    d = _driver()
    xi = deterministic_obstacle(m, [2.0, 1.0, 0.0, -1.0])
    r = solve_rbsde(m, d, xi)
    v = check_optimality_criterion(m, d, xi, r, optimal_time(r, xi))
    assert v.optimal and v.oracle_agrees
    late = check_optimality_criterion(m, d, xi, r, StoppingRule.at_maturity(m))
    assert not late.optimal and late.oracle_agrees
    _, best = brute_force_value(m, d, xi)
    assert check_optimality_criterion(m, d, xi, r, best).optimal


def test_risk_value_function_sign():
    m = build_default_lattice(1.0, 3, M1)
    d = _driver()
    xi = _random_obstacle(m, 5)
    v = risk_value_function(m, d, xi)
    assert v <= -xi[0][0]
    bf, _ = brute_force_value(m, d, xi)
    assert v == pytest.approx(-bf, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_eps_bounds_and_monotonicity(seed):
    m = build_default_lattice(1.0, 3, M1)
    d = _driver()
    xi = _random_obstacle(m, seed)
    r = solve_rbsde(m, d, xi)
    prev = None
    for eps in (0.001, 0.01, 0.1, 1.0):
        rule = eps_optimal_time(r, xi, eps=eps)
        gap = r.root - evaluate_stopped(m, d, xi, rule)
        assert -1e-12 <= gap <= eps_gap_bound(d.lipschitz, 1.0, eps)
        td = rule.stopping_layers(m)
        if prev is not None:
            assert np.all(td <= prev)
        prev = td
    tau = optimal_time(r, xi)
    assert abs(evaluate_stopped(m, d, xi, tau) - r.root) <= 1e-10
    til = tilde_stopping_time(r, xi)
    assert np.array_equal(til.stopping_layers(m), tau.stopping_layers(m))
