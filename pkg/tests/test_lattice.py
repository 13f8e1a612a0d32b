import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsde_lab.errors import LatticeError
from rbsde_lab.lattice import (
    BranchSpec,
    MarkSet,
    build_custom_lattice,
    build_default_lattice,
    conditional_expectation,
    martingale_coefficients,
    model_from_dict,
    model_from_json,
    validate_model,
)


def test_binomial_tree_without_marks():
    m = build_default_lattice(1.0, 4)
    assert m.B == 2
    assert m.dt == pytest.approx(0.25)
    np.testing.assert_allclose(m.probs(0)[0], [0.5, 0.5])
    np.testing.assert_allclose(np.sort(m.increments(0)[0]), [-0.5, 0.5])
    assert list(m.layer_sizes()) == [1, 2, 4, 8, 16]


def test_one_mark_probabilities_forced_by_moments():
    m = build_default_lattice(1.0, 4, MarkSet((1.0,), (0.2,)))
    p = m.probs(0)[0]
    assert m.B == 3
    np.testing.assert_allclose(np.sort(p), [0.05, 0.475, 0.475], atol=1e-15)
    dw = m.increments(0)[0]
    nojump = np.abs(dw) > 0
    np.testing.assert_allclose(np.sort(np.abs(dw[nojump])), [math.sqrt(0.25 / 0.95)] * 2, atol=1e-15)
    assert validate_model(m) == []


@pytest.mark.parametrize("N,J", [(1, 0), (3, 1), (4, 2), (4, 3)])
def test_default_lattice_is_valid(N, J):
    marks = MarkSet(tuple(0.3 * (j + 1) for j in range(J)), tuple(0.4 for _ in range(J)))
    m = build_default_lattice(2.0, N, marks)
    assert validate_model(m) == []
    assert m.B == J + 2


def test_recombining_layer_sizes():
    m = build_default_lattice(1.0, 64, MarkSet((0.5,), (0.3,)), recombining=True)
    assert validate_model(m) == []
    # compositions of i into 3 parts
    assert m.layer_size(10) == math.comb(12, 2)


def test_conditional_expectation_examples():
    m = build_default_lattice(1.0, 3, MarkSet((0.5,), (0.5,)))
    dw = m.increments(0)[0]
    assert conditional_expectation(m, 0, np.full(m.B, 2.5)) == pytest.approx(2.5, abs=1e-15)
    assert conditional_expectation(m, 0, dw) == pytest.approx(0.0, abs=1e-15)
    assert conditional_expectation(m, 0, dw ** 2) == pytest.approx(m.dt, abs=1e-15)


def test_martingale_coefficients_examples():
    m = build_default_lattice(1.0, 3, MarkSet((0.5,), (0.5,)))
    dw = m.increments(0)[0]
    z, k, res = martingale_coefficients(m, 0, np.full(m.B, 1.7))
    assert abs(z) < 1e-14 and np.max(np.abs(k)) < 1e-14
    z, k, res = martingale_coefficients(m, 0, 3.0 * dw)
    assert z == pytest.approx(3.0, abs=1e-13) and np.max(np.abs(k)) < 1e-13
    rng = np.random.default_rng(5)
    v = rng.normal(size=m.B)
    z, k, res = martingale_coefficients(m, 0, v)
    assert res < 1e-24
    # reconstruct from (mean, z, k) by hand
    mean = float(np.dot(m.probs(0)[0], v))
    dn = m.compensated(0)[0]
    rebuilt = mean + z * dw + dn @ np.asarray(k).reshape(-1)
    np.testing.assert_allclose(rebuilt, v, atol=1e-12)


def test_validate_model_reports_perturbations():
    marks = MarkSet((1.0,), (0.2,))
    base = build_default_lattice(1.0, 4, marks)
    assert validate_model(base) == []
    b = base.branching
    p = b.prob_array()
    p[0] += 1e-3
    bad = build_custom_lattice(1.0, 4, marks, BranchSpec(tuple(p), b.increments, b.jumps))
    assert validate_model(bad) != []
    dw = b.increment_array()
    dw[0] = -dw[0]
    flipped = build_custom_lattice(1.0, 4, marks, BranchSpec(b.probs, tuple(dw), b.jumps))
    assert any("mean" in e for e in validate_model(flipped))


def test_invalid_inputs_raise():
    with pytest.raises(LatticeError):
        build_default_lattice(1.0, 0)
    with pytest.raises(LatticeError):
        build_default_lattice(-1.0, 3)
    with pytest.raises(LatticeError):
        MarkSet((1.0,), (-0.1,))
    with pytest.raises(LatticeError):
        MarkSet((1.0, 1.0), (0.1, 0.2))


def test_dict_and_json_roundtrip():
    m = model_from_dict({"T": 1.0, "N": 3, "marks": [{"u": 0.5, "lambda": 0.3}]})
    assert validate_model(m) == []
    m2 = model_from_json(m.to_json())
    assert m2.to_dict() == m.to_dict()


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 5), J=st.integers(0, 2), T=st.floats(0.2, 3.0),
       lam=st.floats(0.05, 1.0), seed=st.integers(0, 10_000))
def test_moments_and_representation(N, J, T, lam, seed):
    marks = MarkSet(tuple(0.1 + 0.2 * j for j in range(J)), tuple(lam for _ in range(J)))
    if marks.total_intensity * T / N >= 1:
        return
    m = build_default_lattice(T, N, marks)
    assert validate_model(m, tol=1e-12) == []
    rng = np.random.default_rng(seed)
    v = rng.normal(size=m.B)
    z, k, res = martingale_coefficients(m, 0, v)
    mean = float(np.dot(m.probs(0)[0], v))
    rebuilt = mean + z * m.increments(0)[0] + m.compensated(0)[0] @ np.asarray(k).reshape(-1)
    assert np.max(np.abs(rebuilt - v)) <= 1e-10
