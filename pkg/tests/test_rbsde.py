from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsde_lab.bsde import solve_bsde
from rbsde_lab.drivers import MonotoneJumpDriver, time_driver, zero_driver
from rbsde_lab.lattice import AdaptedProcess, MarkSet, build_default_lattice
from rbsde_lab.rbsde import (
    deterministic_obstacle,
    is_solution,
    rbsde_residuals,
    skorokhod_report,
    snell_envelope,
    solve_rbsde,
)
from rbsde_lab.stopping import brute_force_value

M1 = MarkSet((0.5,), (0.4,))


def _driver(marks=M1):
    return MonotoneJumpDriver(base=lambda t, y, z: -0.4 * np.sin(y) + 0.3 * np.tanh(z) + 0.2,
                              base_lipschitz=0.4, gamma=(0.2,), delta=0.5, marks=marks)


def test_far_obstacle_no_reflection():
    m = build_default_lattice(1.0, 4, M1)
    d = _driver()
    term = np.cos(m.brownian_state(m.N))
    xi = m.adapted(lambda i, t, W, Nc: np.full(len(W), -100.0))
    xi = AdaptedProcess(list(xi.layers[:-1]) + [term])
    r = solve_rbsde(m, d, xi)
    b = solve_bsde(m, d, term)
    assert r.Y.max_abs_diff(b.Y) <= 1e-13
    for i in range(m.N):
        assert np.all(r.dA[i] == 0.0)


def test_nonincreasing_deterministic_obstacle_stops_now():
    m = build_default_lattice(1.0, 4, M1)
    xi = deterministic_obstacle(m, [2.0, 1.5, 1.0, 0.5, 0.0])
    r = solve_rbsde(m, zero_driver(M1), xi)
    assert r.Y.max_abs_diff(xi) == 0.0


def test_increasing_deterministic_obstacle_waits():
    m = build_default_lattice(1.0, 4, M1)
    xi = deterministic_obstacle(m, [0.0, 0.5, 1.0, 1.5, 2.0])
    r = solve_rbsde(m, zero_driver(M1), xi)
    for i in range(m.N + 1):
        np.testing.assert_allclose(r.Y[i], 2.0)
    for i in range(m.N):
        assert np.all(r.dA[i] == 0.0)


def test_snell_matches_brute_force_on_binomial_tree():
    m = build_default_lattice(1.0, 3)
    rng = np.random.default_rng(2)
    xi = AdaptedProcess([rng.normal(size=m.layer_size(i)) for i in range(m.N + 1)])
    s = snell_envelope(m, 0.0, xi)
    v, _ = brute_force_value(m, zero_driver(), xi)
    assert abs(s.root - v) <= 1e-12


def test_snell_martingale_obstacle_equals_obstacle():
    m = build_default_lattice(1.0, 4, M1)
    xi = m.adapted(lambda i, t, W, Nc: W + 0.3 * (Nc[:, 0] - 0.4 * t))
    s = snell_envelope(m, 0.0, xi)
    assert s.Y.max_abs_diff(xi) <= 1e-14


def test_running_reward_accrues():
    m = build_default_lattice(2.0, 4, M1)
    s = snell_envelope(m, lambda t: 1.0, m.constant_adapted(0.0))
    for i in range(m.N + 1):
        np.testing.assert_allclose(s.Y[i], 2.0 - m.grid.time(i), atol=1e-14)
    s2 = solve_rbsde(m, time_driver(lambda t: 1.0, M1), m.constant_adapted(0.0))
    assert s2.Y.max_abs_diff(s.Y) <= 1e-14


def _fake(Y, dA, xi):
    return SimpleNamespace(Y=[np.asarray(y, float) for y in Y], dA=[np.asarray(a, float) for a in dA],
                           obstacle=[np.asarray(x, float) for x in xi])


def test_skorokhod_hand_built_violations():
    ok = _fake([[1.0], [1.0, 0.5]], [[0.0]], [[1.0], [1.0, 0.5]])
    assert skorokhod_report(ok).passed
    flat = _fake([[2.0], [1.0, 0.5]], [[0.3]], [[1.0], [1.0, 0.5]])
    rep = skorokhod_report(flat)
    assert not rep.passed and rep.flat_off == pytest.approx(0.3)
    neg = _fake([[1.0], [1.0, 0.5]], [[-0.2]], [[1.0], [1.0, 0.5]])
    rep = skorokhod_report(neg)
    assert not rep.passed and rep.min_dA == pytest.approx(-0.2)


def test_solver_output_is_solution():
    m = build_default_lattice(1.0, 4, M1)
    d = _driver()
    xi = m.adapted(lambda i, t, W, Nc: np.maximum(0.1 - W, 0.0) + 0.2 * Nc[:, 0])
    r = solve_rbsde(m, d, xi)
    assert skorokhod_report(r).passed
    assert rbsde_residuals(m, d, xi, r.Y, r.Z, r.K, r.dA) <= 1e-12
    assert is_solution(m, d, xi, r.Y, r.Z, r.K, r.dA)
    bad_Y = AdaptedProcess([y + (0.1 if i == 0 else 0.0) for i, y in enumerate(r.Y)])
    assert not is_solution(m, d, xi, bad_Y, r.Z, r.K, r.dA)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), N=st.integers(1, 5), J=st.integers(0, 1))
def test_skorokhod_on_random_instances(seed, N, J):
    rng = np.random.default_rng(seed)
    marks = MarkSet((0.5,), (float(rng.uniform(0.2, 1.0)),)) if J else MarkSet()
    m = build_default_lattice(1.0, N, marks)
    c = rng.uniform(-0.6, 0.6, size=3)
    d = MonotoneJumpDriver(base=lambda t, y, z: c[0] * np.sin(y) + c[1] * np.tanh(z) + c[2],
                           base_lipschitz=float(max(abs(c[0]), abs(c[1]))), gamma=(0.1,) * J, delta=0.5,
                           marks=marks)
    xi = AdaptedProcess([rng.normal(size=m.layer_size(i)) for i in range(N + 1)])
    r = solve_rbsde(m, d, xi)
    rep = skorokhod_report(r)
    assert rep.passed, rep
    for i in range(N + 1):
        assert np.all(r.Y[i] >= xi[i] - 1e-12)
