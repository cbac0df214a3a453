import math
from dataclasses import replace

import numpy as np
import pytest

from qbsde.drivers import QuadraticEnvelope, get_driver
from qbsde.exceptions import InvalidArgumentError
from qbsde.oracles import get_terminal, shifted
from qbsde.phi import compute_bounds
from qbsde.solver import SolverConfig, TruncationFamily, solve_lsmc
from qbsde.stochastic import build_grid, simulate_brownian
from qbsde.verification import (CheckReport, check_comparison, check_H_properties,
                                check_monotone_family, check_phi_monotone, check_sandwich, check_triv,
                                class_d_proxy, estimate_norms)

CFG = SolverConfig(clip_to_bounds=False, batches=4)


@pytest.fixture(scope="module")
def paths():
    return simulate_brownian(build_grid(1.0, 10), 1, 3000, seed=5)


@pytest.fixture(scope="module")
def sol(paths):
    return solve_lsmc(get_driver("zero"), get_terminal("identity"), paths, CFG)


def test_comparison_self_and_shift(paths, sol):
    assert check_comparison(sol, sol).violation_rate == 0.0
    up = solve_lsmc(get_driver("zero"), shifted(
        get_terminal("identity"), get_terminal("constant", value=1.0)), paths, CFG)
    rep = check_comparison(sol, up)
    assert rep.violation_rate == 0.0
    assert rep.details["mean_gap"] == pytest.approx(1.0, abs=1e-8)
    assert check_comparison(up, sol).violation_rate == 1.0


def test_comparison_needs_crn(paths, sol):
    other = simulate_brownian(paths.grid, 1, 3000, seed=6)
    s2 = solve_lsmc(get_driver("zero"), get_terminal("identity"), other, CFG)
    with pytest.raises(InvalidArgumentError):
        check_comparison(sol, s2)


def test_sandwich_rules(paths):
    term = get_terminal("identity")
    b = compute_bounds(paths, term, QuadraticEnvelope(0, 0, 1))
    s = solve_lsmc(get_driver("pure_quadratic"), term, paths, CFG)
    rep = check_sandwich(s, b)
    assert isinstance(rep.details["per_step"], list)
    clipped = solve_lsmc(get_driver("pure_quadratic"), term, paths, replace(CFG, clip_to_bounds=True), b)
    with pytest.raises(InvalidArgumentError):
        check_sandwich(clipped, b)
    small = simulate_brownian(build_grid(1.0, 10), 1, 100, seed=5)
    with pytest.raises(InvalidArgumentError):
        check_sandwich(s, compute_bounds(small, term, QuadraticEnvelope(0, 0, 1)))


def test_monotone_rejects_mixed_ensembles(paths, sol):
    other = simulate_brownian(paths.grid, 1, 3000, seed=8)
    s2 = solve_lsmc(get_driver("zero"), get_terminal("identity"), other, CFG)
    fam = TruncationFamily({(1, math.inf): sol, (2, math.inf): s2}, None, sol.fingerprint)
    with pytest.raises(InvalidArgumentError):
        check_monotone_family(fam)


def test_class_d_constant_paths():
    assert class_d_proxy(np.zeros((100, 5))).passed
    rep = class_d_proxy(np.ones((100, 5)))
    assert rep.passed and rep.worst_ratio == 0.0


def test_norms_zero_driver(sol):
    rep = estimate_norms(sol, (0.5, 1.0, 2.0))
    # quadratic variation of B over [0, 1] is one
    assert rep.M[2.0] == pytest.approx(1.0, rel=0.1)
    assert rep.S[1.0] == pytest.approx(math.sqrt(math.pi / 2) * 1.0, rel=0.2)
    with pytest.raises(InvalidArgumentError):
        estimate_norms(sol, (0.0,))


def test_report_invariant():
    with pytest.raises(InvalidArgumentError):
        CheckReport("x", "y", 1.5, 0.0)
    r = CheckReport("x", "y", 0.01, 0.01)
    assert r.passed and r.row() == ("x", "y", 0.01, 0.01, True)


@pytest.mark.parametrize("name,params", [
    ("pure_quadratic", {}), ("linear", {"beta": 1.5}), ("bounded_quadratic", {"alpha": 2.0}),
    ("zero", {}), ("holder_z", {"c": 1.0, "alpha": 0.5}), ("l1_holder", {}),
])
def test_triv_on_catalog(name, params):
    rep = check_triv(get_driver(name, **params), samples=2000)
    assert rep.passed, rep


def test_H_and_phi_properties():
    env = QuadraticEnvelope(1.0, 1.0, 1.0)
    for r in check_H_properties(env, samples=2000) + check_phi_monotone(env, samples=2000):
        assert r.passed, r
