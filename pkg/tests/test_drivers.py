import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsde_lab.drivers import (
    AmbiguityFamily,
    DriverSpec,
    MonotoneJumpDriver,
    PriorSpec,
    check_lipschitz,
    check_royer,
    driver_from_prior,
    eval_driver,
    inf_driver,
    linear_driver,
    parse_driver,
    parse_family,
    zero_driver,
)
from rbsde_lab.errors import DriverError
from rbsde_lab.lattice import MarkSet

M1 = MarkSet((1.0,), (0.2,))


def _zero_base(t, y, z):
    return np.zeros(np.shape(y))


def _prior_family(beta1, beta2, marks=M1):
    prior = PriorSpec(tuple(beta1), tuple(tuple(b) for b in beta2), marks, C=max(1.0, *map(abs, beta1)))
    return AmbiguityFamily(marks=marks, prior=prior, F=lambda t, z, k, a: np.zeros(np.shape(z)))


def test_zero_driver_is_zero():
    assert eval_driver(zero_driver(M1), 0.3, 1.0, -2.0, [0.5]) == 0.0


def test_monotone_jump_driver_weighted_inner_product():
    d = MonotoneJumpDriver(base=_zero_base, base_lipschitz=0.0, gamma=(0.5,), delta=0.5, marks=M1)
    assert eval_driver(d, 0.0, 0.0, 0.0, [2.0]) == pytest.approx(0.2, abs=1e-15)


def test_monotone_jump_driver_rejects_gamma_below_bound():
    with pytest.raises(DriverError):
        MonotoneJumpDriver(base=_zero_base, gamma=(-0.9,), delta=0.5, marks=M1)


def test_lipschitz_spot_check():
    d = MonotoneJumpDriver(base=lambda t, y, z: 0.7 * np.sin(y) + 0.3 * np.tanh(z), base_lipschitz=0.7,
                           gamma=(0.4,), delta=0.5, marks=M1)
    assert check_lipschitz(d, samples=1000, seed=1) <= d.lipschitz * (1 + 1e-12)


def test_check_royer_monotone_driver_passes():
    d = linear_driver(-0.3, 0.2, [0.5], M1)
    assert check_royer(d, samples=500, seed=3).passed


def test_check_royer_reports_theta_bound_violation():
    d = linear_driver(0.0, 0.0, [-1.5], M1)
    rep = check_royer(d, samples=200, seed=3)
    assert not rep.passed
    assert rep.theta_bound_violation == pytest.approx(0.5)


def test_check_royer_without_oracle_is_unverifiable():
    d = DriverSpec(evaluator=lambda t, y, z, k: np.zeros(np.shape(y)), lipschitz=0.0, marks=M1)
    assert check_royer(d).status == "unverifiable"


def test_driver_from_prior_examples():
    fam = _prior_family([0.0, 0.3], [[0.0], [0.5]])
    assert eval_driver(driver_from_prior(fam, 0), 0.1, 1.0, 2.0, [1.0]) == 0.0
    assert eval_driver(driver_from_prior(fam, 1), 0.1, 1.0, 2.0, [0.0]) == pytest.approx(0.6)
    assert eval_driver(driver_from_prior(fam, 1), 0.1, 1.0, 0.0, [1.0]) == pytest.approx(0.1)


def test_inf_driver_single_member_and_dominated_family():
    f1 = linear_driver(-0.2, 0.1, [0.3], M1)
    single = inf_driver(AmbiguityFamily(marks=M1, members=(f1,)))
    rng = np.random.default_rng(0)
    for _ in range(20):
        y, z, k = rng.normal(size=3)
        assert single(0.5, y, z, [k]) == f1(0.5, y, z, [k])
    lo = linear_driver(0.0, 0.0, [0.0], M1)
    hi = DriverSpec(evaluator=lambda t, y, z, k: np.full(np.shape(y), 1.0), lipschitz=0.0, marks=M1)
    fd = inf_driver(AmbiguityFamily(marks=M1, members=(hi, lo)))
    assert fd(0.0, 3.0, -1.0, [2.0]) == 0.0
    assert fd.argmin_selector(0.0, 3.0, -1.0, [2.0]) == 1


def test_inf_driver_crossing_in_z():
    a = linear_driver(0.0, 1.0, [0.0], M1)
    b = linear_driver(0.0, -1.0, [0.0], M1)
    fd = inf_driver(AmbiguityFamily(marks=M1, members=(a, b)))
    rng = np.random.default_rng(7)
    for z in rng.normal(size=100):
        assert fd(0.0, 0.0, z, [0.0]) == min(a(0.0, 0.0, z, [0.0]), b(0.0, 0.0, z, [0.0]))
    # tie at z = 0 goes to the lowest index
    assert fd.argmin_selector(0.0, 0.0, 0.0, [0.0]) == 0


def test_parse_driver_forms():
    assert parse_driver("zero", M1).lipschitz == 0.0
    assert parse_driver("constant:2.5", M1)(0.0, 0.0, 0.0, [0.0]) == 2.5
    d = parse_driver({"type": "linear", "a": -1.0, "b": 0.5, "gamma": [0.2]}, M1)
    assert d(0.0, 1.0, 2.0, [1.0]) == pytest.approx(-1.0 + 1.0 + 0.2 * 0.2)
    with pytest.raises(DriverError):
        parse_driver("nonsense", M1)
    with pytest.raises(DriverError):
        parse_driver("linear:1.0,2.0", M1)


def test_parse_family_forms():
    fam = parse_family({"members": ["zero", "constant:1"]}, M1)
    assert fam.size == 2
    fam2 = parse_family('ambiguity:{"alphas": [{"beta1": 0.2, "beta2": [0.1]}, {"beta1": -0.2, "beta2": [0.0]}]}',
                        M1)
    assert fam2.size == 2
    with pytest.raises(DriverError):
        parse_family({"members": []}, M1)


@settings(max_examples=50, deadline=None)
@given(b1=st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=3),
       t=st.floats(0.0, 1.0), z=st.floats(-5, 5), k=st.floats(-5, 5))
def test_inf_below_every_member_and_argmin_attains(b1, t, z, k):
    fam = _prior_family(b1, [[0.25 * i] for i in range(len(b1))])
    fd = inf_driver(fam)
    v = fd(t, 0.0, z, [k])
    vals = [d(t, 0.0, z, [k]) for d in fam.members]
    assert all(v <= w for w in vals)
    assert vals[fd.argmin_selector(t, 0.0, z, [k])] == v


@settings(max_examples=50, deadline=None)
@given(b1=st.floats(-1.0, 1.0), b2=st.floats(-0.4, 1.0), z=st.floats(-5, 5), k=st.floats(-5, 5))
def test_prior_driver_is_affine_in_z_and_k(b1, b2, z, k):
    F = lambda t, zz, kk, a: 0.3 * np.tanh(zz) + 0.1 * np.asarray(kk)[..., 0]  # noqa: E731
    prior = PriorSpec((b1,), ((b2,),), M1, C=1.0)
    fam = AmbiguityFamily(marks=M1, prior=prior, F=F, F_lipschitz=0.3)
    d = fam.members[0]
    lhs = d(0.2, 0.0, z, [k]) - d(0.2, 0.0, 0.0, [0.0])
    lhs -= float(F(0.2, np.array([z]), np.array([[k]]), 0)[0]) - float(F(0.2, np.array([0.0]), np.array([[0.0]]), 0)[0])
    assert lhs == pytest.approx(b1 * z + b2 * k * 0.2, abs=1e-12)
