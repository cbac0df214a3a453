"""Discretised infimal convolution ``f_n = inf_{p,q} f(t,p,q) + n|p-y| + n|q-z|``.

The infimum is taken over a centred grid that always contains ``(y, z)``
itself, so the computed value never exceeds ``f(t, y, z)``.  Each query gets
its own search box which is enlarged until the minimum is interior, followed
by a few rounds of local zooming around the best grid point.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .drivers import Driver, as_z
from .exceptions import DivergingInfimumError, InvalidArgumentError


@dataclass(frozen=True)
class InfConvGrid:
    """Search resolution for :func:`inf_convolution`.

    Parameters
    ----------
    points : int
        Odd number of grid points per axis.
    radius : float
        Initial half-width of the search box.
    margin : float
        The box is accepted once the minimum over its boundary exceeds the
        interior minimum by ``n * margin`` times the box radius.
    max_expand : int
        Number of box doublings before giving up.
    zoom_rounds : int
        Local refinement rounds around the best point.
    chunk : int
        Queries processed per vectorised batch.
    """

    points: int = 21
    radius: float = 1.0
    margin: float = 1e-3
    max_expand: int = 40
    zoom_rounds: int = 12
    chunk: int = 512

    def __post_init__(self):
        if self.points < 3 or self.points % 2 == 0:
            raise InvalidArgumentError("points must be an odd integer >= 3")
        if not self.radius > 0:
            raise InvalidArgumentError("radius must be positive")


def _offsets(k, dim):
    u = np.linspace(-1.0, 1.0, k)
    pts = np.array(list(itertools.product(u, repeat=dim)))
    boundary = np.any(np.abs(pts) == 1.0, axis=1)
    return pts, boundary


def _objective(f, n, t, y, z, P, Q):
    # P (c, K), Q (c, K, d)
    c, K = P.shape
    tt = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (c, K))
    val = f(tt.reshape(-1), P.reshape(-1), Q.reshape(c * K, -1)).reshape(c, K)
    pen = n * np.abs(P - y[:, None]) + n * np.sqrt(np.sum((Q - z[:, None, :]) ** 2, axis=-1))
    return val + pen


def _minimise_chunk(f, n, t, y, z, spec):
    c, d = z.shape
    dim = 1 + d
    off, bnd = _offsets(spec.points, dim)
    radius = np.full(c, float(spec.radius))
    todo = np.ones(c, dtype=bool)
    best = np.full(c, np.inf)
    arg = np.zeros((c, dim))
    for _ in range(spec.max_expand + 1):
        idx = np.flatnonzero(todo)
        if idx.size == 0:
            break
        r = radius[idx, None]
        P = y[idx, None] + r * off[None, :, 0]
        Q = z[idx, None, :] + r[..., None] * off[None, :, 1:]
        G = _objective(f, n, t[idx], y[idx], z[idx], P, Q)
        G = np.where(np.isnan(G), np.inf, G)
        j = np.argmin(G, axis=1)
        gmin = G[np.arange(idx.size), j]
        inner = np.min(np.where(bnd[None, :], np.inf, G), axis=1)
        outer = np.min(np.where(bnd[None, :], G, np.inf), axis=1)
        prev = best[idx]
        with np.errstate(invalid="ignore"):
            stalled = np.isfinite(prev) & (gmin >= prev - 1e-13 * (1 + np.abs(prev)))
        improve = gmin < best[idx]
        sel = idx[improve]
        best[sel] = gmin[improve]
        arg[sel, 0] = P[improve, j[improve]]
        arg[sel, 1:] = Q[improve, j[improve]]
        done = (outer >= inner + n * spec.margin * radius[idx]) | stalled
        todo[idx[done]] = False
        radius[idx[~done]] *= 2.0
    if np.any(todo):
        k = int(np.flatnonzero(todo)[0])
        raise DivergingInfimumError(
            f"infimum not attained after {spec.max_expand} box doublings at y={y[k]}, "
            f"z={z[k].tolist()}, radius={radius[k]:.3g}, current value {best[k]:.6g}")
    h = 2.0 * radius / (spec.points - 1)
    for _ in range(spec.zoom_rounds):
        r = h[:, None]
        P = arg[:, None, 0] + r * off[None, :, 0]
        Q = arg[:, None, 1:] + r[..., None] * off[None, :, 1:]
        G = _objective(f, n, t, y, z, P, Q)
        G = np.where(np.isnan(G), np.inf, G)
        j = np.argmin(G, axis=1)
        gmin = G[np.arange(c), j]
        improve = gmin < best
        best = np.where(improve, gmin, best)
        arg[improve, 0] = P[improve, j[improve]]
        arg[improve, 1:] = Q[improve, j[improve]]
        h = 2.0 * h / (spec.points - 1)
    return best, arg


def infconv_values(driver: Driver, n, t, y, z, spec: InfConvGrid = InfConvGrid(),
                   return_argmin=False):
    """Evaluate the discretised ``f_n`` at query points (flattened internally)."""
    if not n >= 1:
        raise InvalidArgumentError("n must be >= 1")
    y = np.asarray(y, dtype=float)
    z = as_z(y, z)
    shape = y.shape
    yf = y.reshape(-1)
    zf = z.reshape(yf.size, -1)
    if zf.shape[1] > 2:
        raise InvalidArgumentError("inf-convolution supports d <= 2")
    tf = np.broadcast_to(np.asarray(t, dtype=float), shape).reshape(-1)
    out = np.empty(yf.size)
    args = np.empty((yf.size, 1 + zf.shape[1]))
    for lo in range(0, yf.size, spec.chunk):
        sl = slice(lo, lo + spec.chunk)
        out[sl], args[sl] = _minimise_chunk(driver, float(n), tf[sl], yf[sl], zf[sl], spec)
    if return_argmin:
        return out.reshape(shape), args.reshape(shape + (args.shape[1],))
    return out.reshape(shape)


def inf_convolution(driver: Driver, n: int, grid_spec: InfConvGrid = InfConvGrid()) -> Driver:
    """The Lipschitz approximation ``f_n`` of ``driver`` as a new :class:`Driver`.

    The envelope of ``driver`` is carried over as metadata; ``f_n <= f`` holds
    but a lower quadratic bound on ``f_n`` is not re-derived.
    """
    if int(n) != n or n < 1:
        raise InvalidArgumentError("n must be a positive integer")
    n = int(n)

    def fn(t, y, z):
        return infconv_values(driver, n, t, y, z, grid_spec)

    return Driver(fn, driver.envelope, f"infconv({driver.label},n={n})", None, None,
                  driver.params + (("n", n),))


@dataclass
class InfConvLattice:
    """``f_n`` tabulated on a tensor lattice at a fixed time, linearly interpolated.

    Interpolation error is at most ``n`` times the lattice spacing because the
    tabulated function is ``n``-Lipschitz.
    """

    n: int
    axes: tuple
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self._interp = RegularGridInterpolator(self.axes, self.values, method="linear",
                                               bounds_error=True)

    @property
    def tolerance(self) -> float:
        return self.n * float(sum(np.max(np.diff(a)) for a in self.axes))

    def __call__(self, y, z):
        y = np.asarray(y, dtype=float)
        z = as_z(y, z)
        pts = np.concatenate([y[..., None], z], axis=-1)
        return self._interp(pts.reshape(-1, pts.shape[-1])).reshape(y.shape)


def tabulate_infconv(driver: Driver, n, y_nodes, z_nodes, t=0.0,
                     spec: InfConvGrid = InfConvGrid()) -> InfConvLattice:
    """Tabulate ``f_n(t, ., .)`` on ``y_nodes x z_nodes`` (d = 1)."""
    y_nodes = np.asarray(y_nodes, dtype=float)
    z_nodes = np.asarray(z_nodes, dtype=float)
    Yg, Zg = np.meshgrid(y_nodes, z_nodes, indexing="ij")
    vals = infconv_values(driver, n, t, Yg, Zg[..., None], spec)
    return InfConvLattice(int(n), (y_nodes, z_nodes), vals, float(t))


def moreau_abs_square(y, n):
    """Closed form of ``inf_p p^2 + n|p - y|``: ``y^2`` if ``|y| <= n/2`` else ``n|y| - n^2/4``."""
    y = np.asarray(y, dtype=float)
    return np.where(np.abs(y) <= n / 2.0, y * y, n * np.abs(y) - n * n / 4.0)


def brute_force_infconv_1d(f, n, y, half_width=50.0, points=200_001):
    """Dense-grid minimum of ``f(p) + n|p - y|`` over ``|p - y| <= half_width``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(y.shape)
    for k, yk in enumerate(y):
        p = np.linspace(yk - half_width, yk + half_width, points)
        out[k] = np.min(f(p) + n * np.abs(p - yk))
    return out
