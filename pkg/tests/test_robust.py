import numpy as np
import pytest

from rbsde_lab.drivers import AmbiguityFamily, MonotoneJumpDriver, PriorSpec
from rbsde_lab.lattice import AdaptedProcess, MarkSet, build_default_lattice
from rbsde_lab.rbsde import deterministic_obstacle, solve_rbsde
from rbsde_lab.robust import (
    ControlProcess,
    check_rbsde_optimality_criteria,
    check_saddle,
    controlled,
    find_saddle,
    lower_value,
    solve_game,
    upper_value,
)
from rbsde_lab.stopping import StoppingRule, brute_force_value, optimal_time

M1 = MarkSet((0.5,), (0.5,))


def _member(c0, c1, c2, gamma=0.2, marks=M1):
    return MonotoneJumpDriver(base=lambda t, y, z: c0 * np.sin(y) + c1 * np.tanh(z) + c2 * np.cos(3 * t),
                              base_lipschitz=max(abs(c0), abs(c1)), gamma=(gamma,) * marks.size, delta=0.5,
                              marks=marks)


def _family(marks=M1):
    return AmbiguityFamily(marks=marks, members=(_member(-0.3, 0.2, 0.4, marks=marks),
                                                 _member(0.2, -0.25, -0.3, marks=marks)))


def _obstacle(m, seed=0):
    rng = np.random.default_rng(seed)
    return AdaptedProcess([rng.normal(size=m.layer_size(i)) for i in range(m.N + 1)])


@pytest.fixture
def small():
    m = build_default_lattice(1.0, 3, M1)
    return m, _family(), _obstacle(m, 3)


def test_single_member_values(small):
    m, fam, xi = small
    one = fam.subfamily([1])
    bf, _ = brute_force_value(m, one.members[0], xi)
    assert upper_value(m, one, xi).value == pytest.approx(bf, abs=1e-12)
    assert lower_value(m, one, xi).value == pytest.approx(bf, abs=1e-12)
    rep = solve_game(m, one, xi)
    assert rep.certified


def test_dominated_member_gives_its_value():
    m = build_default_lattice(1.0, 3, M1)
    lo = _member(-0.3, 0.2, 0.0)
    hi = MonotoneJumpDriver(base=lambda t, y, z: -0.3 * np.sin(y) + 0.2 * np.tanh(z) + 0.5, base_lipschitz=0.3,
                            gamma=(0.2,), delta=0.5, marks=M1)
    fam = AmbiguityFamily(marks=M1, members=(hi, lo))
    xi = _obstacle(m, 1)
    assert upper_value(m, fam, xi).value == pytest.approx(solve_rbsde(m, lo, xi).root, abs=1e-12)


def test_game_values_coincide(small):
    m, fam, xi = small
    rep = solve_game(m, fam, xi)
    assert abs(rep.V_upper - rep.V_lower) <= 1e-10
    assert abs(rep.V_upper - rep.Y_S) <= 1e-10
    assert rep.upper_mode == "full"
    assert rep.saddle is not None and rep.saddle_verdict.certified and not rep.saddle_verdict.sampled
    assert rep.certified


def test_game_at_interior_node(small):
    m, fam, xi = small
    rep = solve_game(m, fam, xi, S=(1, 2))
    assert abs(rep.V_upper - rep.V_lower) <= 1e-10 and abs(rep.V_upper - rep.Y_S) <= 1e-10


def test_prior_family_is_min_of_members():
    m = build_default_lattice(1.0, 3, M1)
    prior = PriorSpec((0.3, -0.2), ((0.2,), (-0.1,)), M1, C=1.0)
    fam = AmbiguityFamily(marks=M1, prior=prior, F=lambda t, z, k, a: np.zeros(np.shape(z)), F_base_lipschitz=0.0)
    xi = m.adapted(lambda i, t, W, Nc: np.maximum(0.1 - W, 0.0))
    rep = solve_game(m, fam, xi, saddle=False)
    a = solve_rbsde(m, fam.members[0], xi)
    b = solve_rbsde(m, fam.members[1], xi)
    for i in range(m.N + 1):
        assert np.all(rep.solution.Y[i] <= np.minimum(a.Y[i], b.Y[i]) + 1e-12)


def test_nested_family_is_lower(small):
    m, fam, xi = small
    full = solve_game(m, fam, xi, saddle=False).solution
    sub = solve_game(m, fam.subfamily([0]), xi, saddle=False).solution
    for i in range(m.N + 1):
        assert np.all(full.Y[i] <= sub.Y[i] + 1e-13)


def test_saddle_violations(small):
    m, fam, xi = small
    pair, verdict = find_saddle(m, fam, xi)
    assert pair is not None and verdict.certified
    tau, alpha = pair
    # a worse stopping rule breaks the left inequality whenever it loses value
    sol = solve_rbsde(m, controlled(fam, alpha), xi)
    late = StoppingRule.at_maturity(m)
    v = check_saddle(m, fam, xi, (0, 0), late, alpha)
    from rbsde_lab.stopping import evaluate_stopped

    if evaluate_stopped(m, controlled(fam, alpha), xi, late) < sol.root - 1e-9:
        assert v.left_violation > 0 and not v.certified
    # the non-minimizing constant control breaks the right inequality
    for a in range(fam.size):
        other = ControlProcess.constant(m, a)
        v = check_saddle(m, fam, xi, (0, 0), tau, other)
        if v.certified:
            assert v.center == pytest.approx(verdict.center, abs=1e-10)


def test_criterion_optimal_and_suboptimal(small):
    m, fam, xi = small
    rep = solve_game(m, fam, xi, saddle=False)
    good = check_rbsde_optimality_criteria(m, fam, xi, (0, 0), rep.control, eps=0.01)
    assert good.criterion_holds and good.optimal and good.agrees and good.eps_holds
    for a in range(fam.size):
        v = check_rbsde_optimality_criteria(m, fam, xi, (0, 0), ControlProcess.constant(m, a))
        assert v.agrees
        if not v.optimal:
            assert v.Y_alpha_S > v.Y_S


def test_immediate_stop_dominant():
    m = build_default_lattice(1.0, 3, M1)
    fam = _family()
    xi = deterministic_obstacle(m, [10.0, 0.0, 0.0, 0.0])
    assert lower_value(m, fam, xi).value == pytest.approx(10.0)
    assert upper_value(m, fam, xi).value == pytest.approx(10.0)


def test_tau_attains_value_under_argmin_control(small):
    from rbsde_lab.stopping import evaluate_stopped

    m, fam, xi = small
    rep = solve_game(m, fam, xi, saddle=False)
    tau = optimal_time(rep.solution, xi, model=m)
    assert evaluate_stopped(m, controlled(fam, rep.control), xi, tau) == pytest.approx(rep.Y_S, abs=1e-10)
    assert rep.principle_gap <= 1e-12 and rep.selection_gap == 0.0
