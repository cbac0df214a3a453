import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qbsde.drivers import QuadraticEnvelope, SuperlinearEnvelope, get_driver, log_growth_h, normalize_envelope
from qbsde.exceptions import IntegrabilityError, InvalidArgumentError, PhiOverflowError
from qbsde.oracles import get_terminal
from qbsde.phi import (build_theta, compute_bounds, eval_F, eval_H, localization_times, log_phi_linear,
                       ode_oracle, phi_general, phi_linear, switch_time)
from qbsde.stochastic import build_grid, simulate_brownian

ONE = QuadraticEnvelope(1.0, 1.0, 1.0)


def test_H_examples():
    assert float(eval_H(0.5, ONE)) == 1.0
    env = QuadraticEnvelope(0.7, 0.3, 2.0)
    assert float(eval_H(1.0, env)) == pytest.approx(env.alpha * env.gamma)
    assert float(eval_H(math.e, ONE)) == pytest.approx(2 * math.e, rel=1e-15)


def test_H_needs_normalized_envelope():
    with pytest.raises(InvalidArgumentError):
        eval_H(2.0, QuadraticEnvelope(0.0, 2.0, 1.0))


def test_F_examples(rng):
    d = get_driver("pure_quadratic", gamma=1.3)
    p = rng.uniform(0.01, 10, 100)
    q = rng.normal(size=100)
    np.testing.assert_allclose(eval_F(0.0, p, q, d), 0.0, atol=1e-12)
    assert float(eval_F(0.0, -1.0, 2.0, d)) == 0.0


def test_phi_linear_examples():
    assert float(phi_linear(0.3, 0.0, QuadraticEnvelope(0, 0, 1), 1.0)) == 1.0
    assert float(phi_linear(0.0, 0.0, ONE, 1.0)) == pytest.approx(math.exp(math.e - 1), rel=1e-14)
    env = QuadraticEnvelope(0.4, 0.0, 1.0)
    assert float(phi_linear(0.0, math.log(0.5), env, 1.0)) == pytest.approx(0.9, rel=1e-14)
    env = QuadraticEnvelope(0.4, 0.4, 1.0)
    assert float(phi_linear(0.0, math.log(0.5), env, 1.0)) == pytest.approx(0.9, rel=1e-14)


def test_phi_linear_rejects_t():
    with pytest.raises(InvalidArgumentError):
        phi_linear(1.5, 0.0, ONE, 1.0)


def test_switch_time_examples():
    assert switch_time(-10.0, ONE, 1.0) == pytest.approx(math.exp(-10), rel=1e-9)
    assert switch_time(math.log(0.5), QuadraticEnvelope(0.4, 0, 1), 1.0) is None
    assert switch_time(math.log(0.5), QuadraticEnvelope(0.5, 0, 1), 1.0) == 0.0
    with pytest.raises(InvalidArgumentError):
        switch_time(0.5, ONE, 1.0)


@pytest.mark.parametrize("env,z", [
    (QuadraticEnvelope(1, 0, 1), 0.7), (QuadraticEnvelope(1, 1, 1), 0.3),
    (QuadraticEnvelope(0.4, 0, 1), math.log(0.5)), (QuadraticEnvelope(1, 1, 1), -10.0),
    (QuadraticEnvelope(2, 1, 0.5), -0.2), (QuadraticEnvelope(0, 0, 2), -1.0),
])
def test_closed_form_vs_oracle(env, z):
    t, curve = ode_oracle(z, env, 1.0, steps=2000)
    closed = phi_linear(t, z, env, 1.0)
    np.testing.assert_allclose(closed, curve, rtol=1e-8)
    assert np.all(np.diff(curve) <= 1e-15 * curve[:-1])


def test_oracle_constant_when_H_vanishes():
    t, c = ode_oracle(0.4, QuadraticEnvelope(0, 0, 1), 1.0, 200)
    np.testing.assert_allclose(c, math.exp(0.4), rtol=1e-15)


def test_oracle_richardson():
    a = ode_oracle(0.0, ONE, 1.0, 1000)[1][0]
    b = ode_oracle(0.0, ONE, 1.0, 2000)[1][0]
    assert abs(a - b) < 1e-10 * b


def test_oracle_overflow_names_range():
    with pytest.raises(PhiOverflowError, match="z <="):
        ode_oracle(800.0, ONE, 1.0, 200)


def test_oracle_needs_steps():
    with pytest.raises(InvalidArgumentError):
        ode_oracle(0.0, ONE, 1.0, 50)


def _affine_envelope(alpha, beta):
    # the superlinear machinery with h(y) = alpha + beta y reproduces the quadratic case
    return SuperlinearEnvelope.from_h(lambda u: alpha + beta * np.asarray(u, dtype=float),
                                      lambda u: beta + 0 * np.asarray(u, dtype=float), 1.0)


def test_theta_left_tail_and_roundtrip():
    env = get_driver("superlinear_log").envelope
    tab = build_theta(env)
    x = np.linspace(tab.x0 - 5, tab.x0 - 0.01, 20)
    np.testing.assert_allclose(tab.forward(x), np.exp(env.gamma * x) / env.c, rtol=1e-15)
    pts = np.linspace(tab.x0 - 3, tab.x_max, 200)
    np.testing.assert_allclose(tab.inverse(tab.forward(pts)), pts, atol=1e-8)
    assert np.all(np.diff(tab.cum) > 0)


@pytest.mark.parametrize("z", [0.0, 1.0, -1.0])
@pytest.mark.parametrize("t", [0.0, 0.5])
def test_theta_matches_linear_h(z, t):
    env = _affine_envelope(1.0, 1.0)
    tab = build_theta(env, z_max=3.0)
    assert float(phi_general(t, z, tab, 1.0)) == pytest.approx(float(phi_linear(t, z, ONE, 1.0)), rel=1e-6)


def test_phi_general_vs_oracle():
    env = get_driver("superlinear_log").envelope
    tab = build_theta(env)
    t, curve = ode_oracle(0.0, env, 1.0, 4000)
    assert float(phi_general(0.0, 0.0, tab, 1.0)) == pytest.approx(curve[0], rel=1e-6)
    assert float(phi_general(1.0, 0.3, tab, 1.0)) == pytest.approx(math.exp(0.3), rel=1e-12)


@given(t=st.floats(0, 1), s=st.floats(0, 1), z=st.floats(-20, 5), w=st.floats(-20, 5),
       a=st.floats(0, 3), b=st.floats(0, 3), g=st.floats(0.1, 3))
def test_phi_monotone_hypothesis(t, s, z, w, a, b, g):
    env = normalize_envelope(QuadraticEnvelope(a, b, g))
    lo_t, hi_t = min(t, s), max(t, s)
    lo_z, hi_z = min(z, w), max(z, w)
    assert log_phi_linear(hi_t, z, env, 1.0) <= log_phi_linear(lo_t, z, env, 1.0) + 1e-12
    assert log_phi_linear(t, lo_z, env, 1.0) <= log_phi_linear(t, hi_z, env, 1.0) + 1e-12


@given(p=st.floats(1e-6, 1e6), a=st.floats(0, 3), b=st.floats(0, 3), g=st.floats(0.1, 3))
def test_H_dominance_hypothesis(p, a, b, g):
    env = normalize_envelope(QuadraticEnvelope(a, b, g))
    lhs = p * (env.alpha * env.gamma + env.beta * abs(math.log(p)))
    assert lhs <= float(eval_H(p, env)) * (1 + 1e-12) + 1e-12


@pytest.fixture(scope="module")
def paths():
    return simulate_brownian(build_grid(1.0, 10), 1, 3000, seed=3)


def test_bounds_zero_terminal(paths):
    b = compute_bounds(paths, get_terminal("zero"), QuadraticEnvelope(0, 0, 1))
    assert np.max(np.abs(b.lower)) < 1e-12 and np.max(np.abs(b.upper)) < 1e-12


def test_bounds_gaussian_mgf(paths):
    b = compute_bounds(paths, get_terminal("identity"), QuadraticEnvelope(0, 0, 1))
    np.testing.assert_allclose(b.upper[:, 0], 0.5, atol=1e-10)
    np.testing.assert_allclose(b.lower[:, -1], paths.terminal[:, 0], atol=1e-12)
    assert b.consistent


def test_bounds_regression_mode_close_to_quadrature(paths):
    term = get_terminal("identity")
    q = compute_bounds(paths, term, QuadraticEnvelope(0, 0, 1))
    r = compute_bounds(paths, term, QuadraticEnvelope(0, 0, 1), mode="regression")
    assert abs(np.mean(r.upper[:, 0]) - 0.5) < 0.05
    assert np.median(np.abs(r.upper[:, 5] - q.upper[:, 5])) < 0.15


def test_bounded_terminal_upper_below_phi(paths):
    env = normalize_envelope(QuadraticEnvelope(1.0, 0.5, 1.0))
    term = get_terminal("constant", value=0.8)
    b = compute_bounds(paths, term, env)
    cap = log_phi_linear(paths.grid.times, 0.8, env, 1.0) / env.gamma
    assert np.all(b.upper <= cap[None, :] + 1e-9)


def test_square_terminal_fails_H2(paths):
    with pytest.raises(IntegrabilityError, match="H2"):
        compute_bounds(paths, get_terminal("square"), ONE)


def test_localization_conventions(paths):
    env = QuadraticEnvelope(0.5, 0.0, 1.0)
    term = get_terminal("abs")
    never = localization_times(paths, term, env, 1e6)
    assert np.all(never.tau == paths.grid.num_steps)
    now = localization_times(paths, term, env, 0.0)
    assert np.all(now.tau == 0)
    inf = localization_times(paths, term, env, math.inf)
    assert inf.fraction_stopped() == 0.0


def test_localization_nondecreasing_in_k(paths):
    from qbsde.phi import bound_statistic, schedule_from_statistic
    stat = bound_statistic(paths, get_terminal("abs"), QuadraticEnvelope(0, 0, 1))
    prev = None
    for k in (0.5, 1.0, 1.5, 2.0, 3.0):
        tau = schedule_from_statistic(stat, k).tau
        if prev is not None:
            assert np.all(tau >= prev)
        prev = tau
