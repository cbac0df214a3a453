import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import ndtr

from qbsde.exceptions import IntegrabilityError, InvalidArgumentError, UnknownLabelError
from qbsde.oracles import (cole_hopf_value, cole_hopf_z_richardson, gauss_hermite, gaussian_expectation,
                           get_terminal, linear_bsde_value, positive_part, truncate)


def test_cole_hopf_identity():
    Y, Z = cole_hopf_value(0.0, 0.0, get_terminal("identity"), 1.0, 1.0)
    assert float(Y) == pytest.approx(0.5, abs=1e-12)
    assert float(Z) == pytest.approx(1.0, abs=1e-6)


def test_cole_hopf_gamma_scaling():
    # Y_0 = gamma T / 2 for xi = B_T
    Y, _ = cole_hopf_value(0.0, 0.3, get_terminal("identity"), 2.5, 2.0)
    assert float(Y) == pytest.approx(0.3 + 2.5, abs=1e-11)


def test_cole_hopf_abs():
    Y, _ = cole_hopf_value(0.0, 0.0, get_terminal("abs"), 1.0, 1.0)
    assert float(Y) == pytest.approx(math.log(2 * math.exp(0.5) * ndtr(1.0)), abs=1e-10)


def test_cole_hopf_at_terminal():
    Y, Z = cole_hopf_value(1.0, np.array([-1.0, 2.0]), get_terminal("abs"), 1.0, 1.0)
    np.testing.assert_allclose(Y, [1.0, 2.0])
    np.testing.assert_allclose(Z, [-1.0, 1.0])


def test_cole_hopf_rejects():
    with pytest.raises(InvalidArgumentError):
        cole_hopf_value(0.0, 0.0, get_terminal("identity"), 0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        cole_hopf_value(2.0, 0.0, get_terminal("identity"), 1.0, 1.0)


def test_cole_hopf_square_not_integrable():
    with pytest.raises(IntegrabilityError):
        cole_hopf_value(0.0, 0.0, get_terminal("square"), 1.0, 1.0)


@pytest.mark.parametrize("name,x", [("identity", 0.0), ("abs", 0.4), ("plus_abs", -0.3)])
def test_z_matches_richardson(name, x):
    term = get_terminal(name)
    Z = float(cole_hopf_value(0.2, x, term, 1.0, 1.0)[1])
    assert Z == pytest.approx(float(cole_hopf_z_richardson(0.2, x, term, 1.0, 1.0)), abs=1e-6)


def test_linear_examples():
    assert float(linear_bsde_value(0.0, 0.7, get_terminal("identity"), 0.0, 1.0)) == pytest.approx(0.7, abs=1e-13)
    assert float(linear_bsde_value(0.0, 0.0, get_terminal("square"), 1.0, 1.0)) == pytest.approx(math.e, rel=1e-12)
    assert float(linear_bsde_value(1.0, 1.5, get_terminal("square"), 1.0, 1.0)) == pytest.approx(2.25)


def test_gaussian_expectation_moments():
    assert float(gaussian_expectation(lambda x: np.ones_like(x))) == pytest.approx(1.0, abs=1e-14)
    assert float(gaussian_expectation(lambda x: x * x)) == pytest.approx(1.0, abs=1e-12)
    assert float(gaussian_expectation(np.exp)) == pytest.approx(math.exp(0.5), rel=1e-10)
    assert float(gaussian_expectation(lambda x: x, log=True, mean=2.0)) == pytest.approx(2.5, rel=1e-10)


def test_gaussian_expectation_kinks():
    v = float(gaussian_expectation(np.abs, kinks=(0.0,)))
    assert v == pytest.approx(math.sqrt(2 / math.pi), abs=1e-13)


def test_gaussian_expectation_degenerate_and_errors():
    assert float(gaussian_expectation(np.abs, mean=-2.0, variance=0.0)) == 2.0
    with pytest.raises(InvalidArgumentError):
        gaussian_expectation(np.abs, variance=-1.0)


@given(n=st.integers(2, 120))
def test_gauss_hermite_rule(n):
    r = gauss_hermite(n)
    assert r.weights.sum() == pytest.approx(1.0, abs=1e-13)
    assert np.all(r.weights > 0)
    assert abs(r.weights @ r.nodes) < 1e-12
    assert abs(r.weights @ r.nodes ** 3) < 1e-10


@given(n=st.floats(0.1, 5), p=st.floats(0.1, 5), x=st.floats(-10, 10))
def test_truncate_properties(n, p, x):
    term = get_terminal("identity")
    v = float(truncate(term, n, p).scalar(x))
    assert -p <= v <= n
    if -p <= x <= n:
        assert v == pytest.approx(x)
    assert float(truncate(term, math.inf, math.inf).scalar(x)) == x


def test_truncate_adds_kinks_and_rejects():
    t = truncate(get_terminal("identity"), 1.0, 2.0)
    np.testing.assert_allclose(t.kinks, [-2.0, 1.0], atol=1e-12)
    assert t.exp_moment_lambda == math.inf
    with pytest.raises(InvalidArgumentError):
        truncate(get_terminal("identity"), 0.0, 1.0)


def test_positive_part_and_catalog():
    pp = positive_part(get_terminal("identity"))
    np.testing.assert_allclose(pp.scalar(np.array([-1.0, 2.0])), [0.0, 2.0])
    with pytest.raises(UnknownLabelError):
        get_terminal("nope")
