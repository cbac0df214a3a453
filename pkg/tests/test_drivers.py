import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qbsde.drivers import (Driver, L1DriverSpec, QuadraticEnvelope, SuperlinearEnvelope,
                           canonical_drivers, check_assumption_A, get_driver, log_growth_h,
                           normalize_envelope, validate_growth)
from qbsde.exceptions import InvalidArgumentError, UnknownLabelError


@pytest.mark.parametrize("env,expected", [
    ((1, 0.5, 1), (1, 0.5, 1)),
    ((0, 2, 1), (2, 2, 1)),
    ((0.3, 1, 2), (0.5, 1, 2)),
])
def test_normalize_examples(env, expected):
    out = normalize_envelope(QuadraticEnvelope(*env))
    assert (out.alpha, out.beta, out.gamma) == pytest.approx(expected)


def test_nonpositive_gamma():
    with pytest.raises(InvalidArgumentError):
        QuadraticEnvelope(1.0, 1.0, 0.0)


@given(a=st.floats(0, 10), b=st.floats(0, 10), g=st.floats(0.01, 10))
def test_normalize_idempotent(a, b, g):
    once = normalize_envelope(QuadraticEnvelope(a, b, g))
    assert normalize_envelope(once) == once
    assert once.is_normalized


def test_pure_quadratic_growth_exact():
    r = validate_growth(get_driver("pure_quadratic", gamma=1.7))
    assert r.max_violation <= 0.0


def test_constructed_breach():
    env = QuadraticEnvelope(1.0, 1.0, 1.0)
    f = Driver(lambda t, y, z: env.bound(y, z) + 1.0, env, "breach")
    assert validate_growth(f, samples=500).max_violation == pytest.approx(1.0)


def test_sin_driver_inside_envelope():
    env = QuadraticEnvelope(1.0, 0.0, 1.0)
    f = Driver(lambda t, y, z: np.sin(y) + 0.5 * np.sum(z * z, axis=-1), env, "sin")
    assert validate_growth(f, box={"y": (-10, 10), "z": (-10, 10)}).passed


def test_nonfinite_reported_as_witness():
    env = QuadraticEnvelope(1.0, 0.0, 1.0)
    f = Driver(lambda t, y, z: np.where(y > 0, np.nan, 0.0), env, "nan")
    r = validate_growth(f, samples=100)
    assert math.isinf(r.max_violation) and not r.passed


def test_catalog_values():
    assert float(get_driver("pure_quadratic", gamma=1.0)(0.0, 0.3, 2.0)) == 2.0
    assert float(get_driver("zero")(0.5, 7.0, -3.0)) == 0.0
    h, _ = log_growth_h(1.0)
    assert float(h(0.0)) == pytest.approx(math.e, abs=1e-15)
    assert set(canonical_drivers()) >= {"pure_quadratic", "linear", "zero", "bounded_quadratic",
                                         "l1_holder", "superlinear_log"}


def test_unknown_driver():
    with pytest.raises(UnknownLabelError):
        get_driver("cubic")


def test_assumption_A_holder_example():
    f = Driver(lambda t, y, z: -y + np.sqrt(np.abs(z[..., 0])), QuadraticEnvelope(2, 1, 2), "ex")
    spec = L1DriverSpec(mu=0.0, lam=math.inf, delta=1.0, alpha_exp=0.5, c=1.0)
    rep = check_assumption_A(f, spec)
    for name in ("monotonicity", "z_lipschitz", "holder_z", "psi_r_finite"):
        assert rep.clauses[name].passed, name


def test_assumption_A_square_fails_monotonicity():
    f = Driver(lambda t, y, z: y * y, QuadraticEnvelope(1, 1, 1), "sq")
    rep = check_assumption_A(f, L1DriverSpec(mu=5.0, lam=1.0, delta=1.0, c=1.0))
    assert not rep.clauses["monotonicity"].passed


def test_assumption_A_zero_driver():
    rep = check_assumption_A(get_driver("zero"), L1DriverSpec())
    assert rep.passed


@pytest.mark.parametrize("name", ["l1_holder", "holder_z", "l1_dominating", "linear"])
def test_catalog_l1_specs_hold(name):
    d = get_driver(name)
    assert check_assumption_A(d, d.l1, samples=3000).passed


def test_superlinear_constants():
    d = get_driver("superlinear_log")
    env = d.envelope
    assert isinstance(env, SuperlinearEnvelope)
    assert env.c == pytest.approx(math.e, rel=1e-9)
    assert env.p0 == 1.0
    checks = env.check()
    assert all(checks.values()), checks


def test_superlinear_rejects_h0():
    with pytest.raises(InvalidArgumentError):
        SuperlinearEnvelope.from_h(lambda u: np.asarray(u) * 1.0, lambda u: np.ones_like(u), 1.0)


def test_fast_growth_fails_divergence_check():
    h = lambda u: 1.0 + np.asarray(u, dtype=float) ** 2
    env = SuperlinearEnvelope.from_h(h, lambda u: 2 * np.asarray(u), 1.0)
    assert env.check()["integral_diverges"] is False


@given(y=st.floats(-50, 50), z=st.floats(-50, 50), t=st.floats(0, 1))
def test_catalog_envelopes_hypothesis(y, z, t):
    for name in canonical_drivers():
        d = get_driver(name)
        assert abs(float(d(t, y, z))) <= float(d.envelope.bound(y, z)) * (1 + 1e-12) + 1e-12


@given(y=st.floats(-20, 20), z=st.floats(-20, 20))
def test_negated_driver(y, z):
    d = get_driver("bounded_quadratic", alpha=0.5, gamma=2.0)
    assert float(d.negated()(0.0, y, z)) == pytest.approx(-float(d(0.0, -y, -z)))
