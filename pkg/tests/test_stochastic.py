import numpy as np
import pytest
from hypothesis import given, strategies as st

from qbsde.exceptions import InvalidArgumentError
from qbsde.stochastic import SeedSpec, build_grid, simulate_brownian


def test_grid_two_points():
    g = build_grid(1.0, 1)
    assert g.times.tolist() == [0.0, 1.0]


def test_grid_uniform():
    assert build_grid(1.0, 4).times.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]


@pytest.mark.parametrize("T,N", [(0.0, 10), (-1.0, 3), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects_degenerate(T, N):
    with pytest.raises(InvalidArgumentError):
        build_grid(T, N)


@given(T=st.floats(0.01, 50.0), N=st.integers(1, 400))
def test_grid_invariants(T, N):
    g = build_grid(T, N)
    assert g.times[0] == 0.0 and g.times[-1] == T
    assert np.all(np.diff(g.times) > 0)
    np.testing.assert_allclose(np.diff(g.times), T / N, rtol=1e-9)


def test_single_path_starts_at_zero():
    p = simulate_brownian(build_grid(1.0, 1), 1, 1, seed=3)
    assert p.values[0, 0, 0] == 0.0


def test_terminal_variance():
    M = 100_000
    p = simulate_brownian(build_grid(1.0, 100), 1, M, seed=11)
    assert abs(np.var(p.terminal[:, 0]) - 1.0) <= 5 / np.sqrt(M)


def test_increment_moments():
    M = 20_000
    p = simulate_brownian(build_grid(1.0, 8), 2, M, seed=5)
    dt = p.grid.dt
    assert np.all(np.abs(p.increments.mean(axis=0)) <= 5 * np.sqrt(dt) / np.sqrt(M))
    assert np.all(np.abs(p.increments.var(axis=0) - dt) <= 5 * dt * np.sqrt(2) / np.sqrt(M))


def test_values_are_cumulative_increments(small_paths):
    np.testing.assert_allclose(np.diff(small_paths.values, axis=1), small_paths.increments, atol=1e-14)
    assert np.all(small_paths.values[:, 0] == 0)


def test_same_seed_bit_identical():
    g = build_grid(1.0, 10)
    a = simulate_brownian(g, 2, 500, seed=99)
    b = simulate_brownian(g, 2, 500, seed=99)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.fingerprint == b.fingerprint


def test_parallel_schedule_does_not_matter():
    g = build_grid(1.0, 10)
    a = simulate_brownian(g, 1, 1001, seed=42, n_jobs=1)
    b = simulate_brownian(g, 1, 1001, seed=42, n_jobs=7)
    assert a.values.tobytes() == b.values.tobytes()


def test_paths_are_nested_in_m():
    g = build_grid(1.0, 10)
    small = simulate_brownian(g, 1, 100, seed=42)
    big = simulate_brownian(g, 1, 1000, seed=42)
    np.testing.assert_array_equal(small.values, big.values[:100])


def test_different_seeds_differ():
    g = build_grid(1.0, 5)
    assert simulate_brownian(g, 1, 10, 1).fingerprint != simulate_brownian(g, 1, 10, 2).fingerprint


def test_ensemble_is_read_only(small_paths):
    with pytest.raises(ValueError):
        small_paths.values[0, 0, 0] = 1.0


@pytest.mark.parametrize("d,M", [(0, 10), (1, 0)])
def test_simulate_rejects_bad_sizes(d, M):
    with pytest.raises(InvalidArgumentError):
        simulate_brownian(build_grid(1.0, 2), d, M)


def test_seed_range():
    with pytest.raises(InvalidArgumentError):
        SeedSpec(-1)
    with pytest.raises(InvalidArgumentError):
        SeedSpec(2 ** 64)
    SeedSpec(2 ** 64 - 1)
