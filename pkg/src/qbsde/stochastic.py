"""Time grids and Brownian path ensembles with per-path counter-based seeding.

Each path index owns an independent Philox stream keyed by
``(master_seed, path_index)``, so an ensemble is a pure function of
``(master_seed, M, N, d)`` and does not depend on how the paths are
split across worker threads.  A useful corollary is that the first ``M``
paths of a larger ensemble are bit-identical to an ensemble of size ``M``.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import InvalidArgumentError

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_N = T``."""

    horizon: float
    num_steps: int
    times: np.ndarray = field(repr=False, compare=False)

    @property
    def dt(self) -> float:
        return self.horizon / self.num_steps

    def __len__(self):
        return self.num_steps + 1


def build_grid(T: float, N: int) -> TimeGrid:
    """Uniform grid on ``[0, T]`` with ``N`` steps."""
    if not np.isfinite(T) or T <= 0:
        raise InvalidArgumentError(f"horizon must be positive, got T={T}")
    if int(N) != N or N < 1:
        raise InvalidArgumentError(f"number of steps must be a positive integer, got N={N}")
    N = int(N)
    times = np.arange(N + 1, dtype=float) * (T / N)
    times[-1] = T
    times.setflags(write=False)
    return TimeGrid(float(T), N, times)


@dataclass(frozen=True)
class SeedSpec:
    """Master seed; path ``m`` draws from ``Philox(key=master_seed + m * 2**64)``."""

    master_seed: int = 0

    def __post_init__(self):
        if int(self.master_seed) != self.master_seed or not 0 <= self.master_seed <= _U64:
            raise InvalidArgumentError("master_seed must be an unsigned 64-bit integer")

    def path_generator(self, path_index: int) -> np.random.Generator:
        key = int(self.master_seed) | (int(path_index) << 64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class PathEnsemble:
    grid: TimeGrid
    increments: np.ndarray = field(repr=False)  # (M, N, d)
    values: np.ndarray = field(repr=False)  # (M, N+1, d)
    seed: SeedSpec | None = None
    path_ids: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[2]

    def state(self, i: int) -> np.ndarray:
        """Brownian positions at grid index ``i``, shape ``(M, d)``."""
        return self.values[:, i, :]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1, :]

    def subset(self, index) -> "PathEnsemble":
        """Sub-ensemble on the given path indices (a slice or integer array)."""
        ids = np.arange(self.num_paths) if self.path_ids is None else self.path_ids
        return PathEnsemble(
            self.grid,
            _frozen(self.increments[index]),
            _frozen(self.values[index]),
            self.seed,
            _frozen(np.asarray(ids[index])),
        )

    @cached_property
    def fingerprint(self) -> str:
        """Digest of the increments; equal fingerprints mean common random numbers."""
        h = hashlib.sha256()
        h.update(np.asarray(self.increments.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.increments).tobytes())
        return h.hexdigest()[:16]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def simulate_brownian(grid: TimeGrid, d: int, M: int, seed: SeedSpec | int = 0,
                      n_jobs: int = 1) -> PathEnsemble:
    """Simulate ``M`` standard Brownian paths in ``R^d`` on ``grid``.

    Parameters
    ----------
    grid : TimeGrid
    d, M : int
        Dimension and number of paths, both at least 1.
    seed : SeedSpec or int
    n_jobs : int
        Worker threads.  The output does not depend on this value.
    """
    if int(d) != d or d < 1:
        raise InvalidArgumentError(f"dimension must be >= 1, got d={d}")
    if int(M) != M or M < 1:
        raise InvalidArgumentError(f"number of paths must be >= 1, got M={M}")
    if not isinstance(seed, SeedSpec):
        seed = SeedSpec(int(seed))
    M, d, N = int(M), int(d), grid.num_steps
    sd = np.sqrt(grid.dt)
    inc = np.empty((M, N, d))

    def fill(lo, hi):
        for m in range(lo, hi):
            seed.path_generator(m).standard_normal(out=inc[m].reshape(-1))

    chunks = max(1, int(n_jobs))
    edges = np.linspace(0, M, chunks + 1).astype(int)
    if chunks == 1:
        fill(0, M)
    else:
        with ThreadPoolExecutor(max_workers=chunks) as pool:
            list(pool.map(fill, edges[:-1], edges[1:]))
    inc *= sd
    values = np.zeros((M, N + 1, d))
    np.cumsum(inc, axis=1, out=values[:, 1:, :])
    return PathEnsemble(grid, _frozen(inc), _frozen(values), seed)
