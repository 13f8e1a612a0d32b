import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsde_lab.bsde import solve_bsde
from rbsde_lab.drivers import AmbiguityFamily, DriverSpec, PriorSpec
from rbsde_lab.lattice import MarkSet, build_default_lattice, validate_model
from rbsde_lab.priors import (
    cross_check_prior_equivalence,
    density_means,
    density_process,
    driver_identity_gap,
    reweight_measure,
    robust_prior_check,
    solve_under_prior,
)
from rbsde_lab.robust import ControlProcess

M1 = MarkSet((0.5,), (0.4,))


def _prior(b1=(0.3, -0.2), b2=((0.5,), (-0.3,)), marks=M1):
    return PriorSpec(tuple(b1), tuple(b2), marks, C=1.0)


def F_zero(t, z, k, a):
    return np.zeros(np.shape(z))


def F_smooth(t, z, k, a):
    return 0.3 * np.tanh(z) + 0.1 * np.asarray(k)[..., 0] + 0.2 * np.cos(t)


def _term(W, Nc):
    return np.maximum(W, 0.0) + 0.3 * Nc[:, 0]


def test_zero_prior_density_is_one():
    m = build_default_lattice(1.0, 4, M1)
    zp = density_process(m, _prior((0.0,), ((0.0,),)), 0)
    for i in range(m.N + 1):
        np.testing.assert_array_equal(zp.Z[i], 1.0)


def test_density_mean_one_random_control():
    m = build_default_lattice(1.0, 5, M1)
    pr = _prior()
    rng = np.random.default_rng(0)
    ctrl = ControlProcess([rng.integers(0, 2, size=m.layer_size(i)) for i in range(m.N)])
    zp = density_process(m, pr, ctrl)
    assert np.max(np.abs(density_means(m, zp) - 1.0)) <= 1e-12


def test_two_step_density_by_hand():
    m = build_default_lattice(1.0, 2, M1)
    pr = _prior()
    zp = density_process(m, pr, 0)
    dw = m.increments(0)[0]
    dn = m.compensated(0)[0][:, 0]
    fac = 1 + 0.3 * dw + 0.5 * dn
    expect = np.outer(fac, fac).reshape(-1)
    np.testing.assert_allclose(zp.Z[2], expect, rtol=1e-14)


def test_reweight_zero_prior_unchanged():
    m = build_default_lattice(1.0, 3, M1)
    q = reweight_measure(m, _prior((0.0,), ((0.0,),)), 0)
    for i in range(m.N):
        np.testing.assert_allclose(q.probs(i), m.probs(i), atol=1e-16)
        np.testing.assert_allclose(q.increments(i), m.increments(i), atol=1e-16)


def test_reweighted_moments():
    m = build_default_lattice(1.0, 4, M1)
    pr = _prior()
    q = reweight_measure(m, pr, 0)
    assert validate_model(q) == []
    dt, lam = m.dt, 0.4
    pq = q.probs(0)[0]
    np.testing.assert_allclose(pq.sum(), 1.0, atol=1e-15)
    assert float(np.dot(pq, m.increments(0)[0])) == pytest.approx(0.3 * dt, abs=1e-15)
    ind = m.branching.indicator_matrix(1)[:, 0]
    qj = float(np.dot(pq, ind))
    # exact jump probability carries a dt^2 correction
    assert qj == pytest.approx(lam * dt * 1.5 - lam * dt * dt * 0.5 * lam, abs=1e-15)
    assert float(np.dot(pq, q.compensated(0)[0][:, 0])) == pytest.approx(0.0, abs=1e-15)


def test_solve_under_zero_prior_matches_base():
    m = build_default_lattice(1.0, 4, M1)
    pr = _prior((0.0,), ((0.0,),))
    term = _term(m.brownian_state(m.N), m.jump_counts(m.N))
    xq = solve_under_prior(m, pr, 0, F_smooth, term, F_lipschitz=0.34)
    d = DriverSpec(evaluator=lambda t, y, z, k: F_smooth(t, z, k, 0), lipschitz=0.34, marks=M1)
    xp = solve_bsde(m, d, term)
    assert xq.Y.max_abs_diff(xp.Y) <= 1e-14


def test_zero_F_gives_q_expectation():
    m = build_default_lattice(1.0, 3, M1)
    pr = _prior()
    term = _term(m.brownian_state(m.N), m.jump_counts(m.N))
    x = solve_under_prior(m, pr, 0, F_zero, term)
    zp = density_process(m, pr, 0)
    assert x.root == pytest.approx(float(np.dot(m.node_probabilities(m.N), zp.Z[m.N] * term)), abs=1e-14)


def test_driver_identity_exact():
    assert driver_identity_gap(_prior(), F_smooth, samples=1000, seed=1) <= 1e-12


def test_cross_check_zero_prior_and_first_order():
    base = build_default_lattice(1.0, 8, M1, recombining=True)
    z = cross_check_prior_equivalence(base, _prior((0.0,), ((0.0,),)), 0, F_smooth, _term, (8, 16), F_lipschitz=0.34)
    assert max(z.gaps) <= 1e-12
    rep = cross_check_prior_equivalence(base, _prior(), 0, F_smooth, _term, (8, 16, 32, 64), F_lipschitz=0.34)
    assert rep.identity_gap <= 1e-12
    assert all(0.375 <= r <= 0.625 for r in rep.ratios), rep.ratios
    assert rep.passed


def test_robust_prior_check_small_tree():
    m = build_default_lattice(1.0, 3, M1)
    pr = _prior((0.4, -0.3), ((0.3,), (-0.2,)))
    fam = AmbiguityFamily(marks=M1, prior=pr, F=F_zero, F_base_lipschitz=0.0)
    xi = m.adapted(lambda i, t, W, Nc: np.maximum(0.2 - W, 0.0) + 0.1 * Nc[:, 0])
    chk = robust_prior_check(m, fam, xi)
    assert chk.exact and chk.passed
    assert chk.inf_value <= min(chk.constant_values) + 1e-12


@settings(max_examples=30, deadline=None)
@given(b1=st.floats(-1.0, 1.0), b2=st.floats(-0.5, 1.0), seed=st.integers(0, 10_000))
def test_density_martingale_property(b1, b2, seed):
    m = build_default_lattice(1.0, 4, M1)
    pr = PriorSpec((b1, -b1), ((b2,), (0.0,)), M1, C=1.0)
    rng = np.random.default_rng(seed)
    ctrl = ControlProcess([rng.integers(0, 2, size=m.layer_size(i)) for i in range(m.N)])
    zp = density_process(m, pr, ctrl)
    assert np.max(np.abs(density_means(m, zp) - 1.0)) <= 1e-12
    q = reweight_measure(m, zp)
    for i in range(m.N):
        assert np.max(np.abs(q.probs(i).sum(axis=1) - 1.0)) <= 1e-14
