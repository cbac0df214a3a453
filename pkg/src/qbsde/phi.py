"""The comparison function ``phi_t(z)`` and the a-priori bounds built from it.

``phi`` solves the backward ODE ``phi_t = exp(gamma z) + int_t^T H(phi_s) ds``.
For a quadratic envelope it has a closed form; for a superlinear envelope it
is ``exp(gamma Theta^{-1}(T - t + Theta(z)))`` with ``Theta`` tabulated.  All
``phi`` values are handled through their logarithms because they overflow
double precision for moderate ``z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .drivers import Driver, QuadraticEnvelope, SuperlinearEnvelope, as_z, zsq
from .exceptions import (IntegrabilityError, InvalidArgumentError, PhiOverflowError,
                         QuadratureToleranceError, TableRangeError)
from .oracles import DEFAULT_PIECEWISE, PiecewiseRule, TerminalFunction, gaussian_expectation
from .regression import RegressionSpec, regressor_for
from .stochastic import PathEnsemble, TimeGrid

_LOG_MAX = math.log(np.finfo(float).max)
# conditional expectations on the lattice; +-24 sd covers exponential tilts up to ~15
BOUNDS_RULE = PiecewiseRule(half_width=24.0, panels=48, order=16)


def _require_normalized(env):
    if isinstance(env, QuadraticEnvelope) and not env.is_normalized:
        raise InvalidArgumentError(
            f"envelope not normalized: alpha={env.alpha} < beta/gamma={env.beta / env.gamma}")


def threshold(env) -> float:
    """Level below which ``H`` is constant."""
    return 1.0 if isinstance(env, QuadraticEnvelope) else env.p0


def floor_value(env) -> float:
    """The constant value of ``H`` below :func:`threshold`."""
    return env.gamma * env.alpha if isinstance(env, QuadraticEnvelope) else env.c


def eval_H(p, env):
    """The convex function dominating the transformed generator.

    Quadratic envelope: ``p (alpha gamma + beta ln p)`` for ``p >= 1`` and
    ``gamma alpha`` below.  Superlinear envelope: ``gamma p h(ln p / gamma)``
    for ``p >= p0`` and ``c`` below.
    """
    _require_normalized(env)
    p = np.asarray(p, dtype=float)
    thr, low = threshold(env), floor_value(env)
    pp = np.where(p >= thr, p, thr)
    if isinstance(env, QuadraticEnvelope):
        up = pp * (env.alpha * env.gamma + env.beta * np.log(pp))
    else:
        up = env.gamma * pp * env.h(np.log(pp) / env.gamma)
    return np.where(p >= thr, up, low)


def H_over_p_log(u, env):
    """``H(e^u) e^{-u}`` for ``e^u`` above the threshold, written in terms of ``u``."""
    if isinstance(env, QuadraticEnvelope):
        return env.alpha * env.gamma + env.beta * u
    return env.gamma * env.h(u / env.gamma)


def eval_F(s, p, q, driver: Driver):
    """``1_{p>0} (gamma p f(s, ln p/gamma, q/(gamma p)) - |q|^2/(2p))``."""
    g = driver.envelope.gamma
    p = np.asarray(p, dtype=float)
    q = as_z(p, q)
    pos = p > 0
    ps = np.where(pos, p, 1.0)
    val = g * ps * driver(s, np.log(ps) / g, q / (g * ps[..., None])) - zsq(q) / (2 * ps)
    return np.where(pos, val, 0.0)


def F_scale(s, p, q, driver: Driver):
    """Magnitude of the two terms of :func:`eval_F`, for roundoff-aware comparisons."""
    g = driver.envelope.gamma
    p = np.asarray(p, dtype=float)
    q = as_z(p, q)
    ps = np.where(p > 0, p, 1.0)
    a = np.abs(g * ps * driver(s, np.log(ps) / g, q / (g * ps[..., None])))
    return a + zsq(q) / (2 * ps)


# ---------------------------------------------------------------------------
# quadratic envelope: closed forms

def _check_t(t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > T):
        raise InvalidArgumentError(f"t must lie in [0, {T}]")
    return t


def _expm1_over(beta, x):
    # (e^{beta x} - 1)/beta, continuous at beta = 0
    return np.expm1(beta * x) / beta if beta > 0 else x


def log_phi_linear(t, z, env: QuadraticEnvelope, T: float):
    """``ln phi_t(z)`` for a quadratic envelope, vectorised over ``t`` and ``z``."""
    _require_normalized(env)
    t = _check_t(t, T)
    z = np.asarray(z, dtype=float)
    a, b, g = env.alpha, env.beta, env.gamma
    tau = T - t
    pos = g * a * _expm1_over(b, tau) + g * z * np.exp(b * tau)
    with np.errstate(over="ignore", under="ignore"):
        e = np.exp(g * np.minimum(z, 0.0))
    lin = e + g * a * tau
    with np.errstate(divide="ignore"):
        small = np.log(np.where(lin <= 1.0, lin, 1.0))
    small = np.where(lin <= 1.0, np.where(e > 0, small, g * z), 0.0)
    if a > 0:
        # S - t where e^{gamma z} + gamma alpha (T - S) = 1; an infinite
        # delay for tiny gamma alpha correctly clamps to 0
        with np.errstate(over="ignore"):
            rest = np.maximum(tau - (1.0 - e) / (g * a), 0.0)
        big = g * a * _expm1_over(b, rest)
    else:
        big = np.zeros(np.broadcast(tau, z).shape)
    neg = np.where(lin <= 1.0, small, big)
    return np.where(z >= 0, pos, neg)


def phi_linear(t, z, env: QuadraticEnvelope, T: float):
    """``phi_t(z)`` for a quadratic envelope; raises on overflow."""
    lp = log_phi_linear(t, z, env, T)
    if np.any(lp > _LOG_MAX):
        raise PhiOverflowError(f"ln phi = {np.max(lp):.4g} exceeds {_LOG_MAX:.1f}; "
                               "use log_phi_linear")
    return np.exp(lp)


def switch_time(z, env: QuadraticEnvelope, T: float):
    """Time ``S`` with ``exp(gamma z) + gamma alpha (T - S) = 1`` for ``z < 0``.

    Returns ``None`` when ``phi`` stays below one on ``[0, T]`` and ``0`` on the
    boundary case ``exp(gamma z) + T gamma alpha = 1``.
    """
    if z >= 0:
        raise InvalidArgumentError("switch time is defined for z < 0 only")
    _require_normalized(env)
    e = math.exp(env.gamma * z)
    ga = env.gamma * env.alpha
    if ga == 0:
        return None
    lhs = e + T * ga
    if lhs < 1.0:
        return None
    if lhs == 1.0:
        return 0.0
    return max(T - (1.0 - e) / ga, 0.0)


# ---------------------------------------------------------------------------
# superlinear envelope: Theta table

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class ThetaTable:
    """``Theta(x) = int_{-inf}^x du / theta(u)`` on nodes ``x0 = xs[0] < xs[1] < ...``.

    Below ``x0 = ln p0 / gamma`` the closed form ``exp(gamma x)/c`` is used;
    above it, node values come from adaptive quadrature and values between
    nodes from 16-point Gauss-Legendre.
    """

    envelope: SuperlinearEnvelope
    tol: float
    xs: np.ndarray = field(repr=False)
    cum: np.ndarray = field(repr=False)

    @property
    def x0(self) -> float:
        return float(self.xs[0])

    @property
    def x_max(self) -> float:
        return float(self.xs[-1])

    @property
    def v_max(self) -> float:
        return float(self.cum[-1])

    def theta(self, x):
        env = self.envelope
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            left = (env.c / env.gamma) * np.exp(-env.gamma * np.minimum(x, self.x0))
        return np.where(x >= self.x0, env.h(np.maximum(x, self.x0)), left)

    def forward(self, x):
        """``Theta(x)``; raises :class:`TableRangeError` above the table."""
        env = self.envelope
        x = np.asarray(x, dtype=float)
        if np.any(x > self.x_max):
            raise TableRangeError(f"x={np.max(x):.6g} beyond table end {self.x_max:.6g}")
        with np.errstate(under="ignore"):
            left = np.exp(env.gamma * np.minimum(x, self.x0)) / env.c
        j = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, self.xs.size - 2)
        a = self.xs[j]
        xr = np.maximum(x, self.x0)
        half = 0.5 * (xr - a)
        u = (0.5 * (xr + a))[..., None] + half[..., None] * _GL_X
        right = self.cum[j] + half * np.sum(_GL_W / env.h(u), axis=-1)
        return np.where(x <= self.x0, left, right)

    def inverse(self, v, tol=1e-14, max_iter=80):
        """``Theta^{-1}(v)`` for ``v > 0`` by bracketing and safeguarded Newton."""
        env = self.envelope
        v = np.asarray(v, dtype=float)
        if np.any(v <= 0):
            raise InvalidArgumentError("Theta maps onto (0, inf); v must be positive")
        if np.any(v > self.v_max):
            raise TableRangeError(f"v={np.max(v):.6g} beyond table range {self.v_max:.6g}")
        v0 = self.cum[0]
        left = np.log(env.c * np.minimum(v, v0)) / env.gamma
        j = np.clip(np.searchsorted(self.cum, v, side="right") - 1, 0, self.xs.size - 2)
        lo, hi = self.xs[j].copy(), self.xs[j + 1].copy()
        c0, c1 = self.cum[j], self.cum[j + 1]
        x = lo + (hi - lo) * np.clip((v - c0) / (c1 - c0), 0.0, 1.0)
        active = v > v0
        for _ in range(max_iter):
            if not np.any(active):
                break
            F = self.forward(x) - v
            lo = np.where(F < 0, x, lo)
            hi = np.where(F > 0, x, hi)
            step = F * self.theta(x)
            xn = x - step
            bad = (xn <= lo) | (xn >= hi)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            conv = np.abs(xn - x) <= tol * (1.0 + np.abs(x))
            x = np.where(active, xn, x)
            active = active & ~conv
        return np.where(v <= v0, left, x)

    def extended(self, v_needed) -> "ThetaTable":
        """A table whose range reaches ``v_needed``."""
        if v_needed <= self.v_max:
            return self
        return _grow(self.envelope, self.tol, self.xs, self.cum, v_needed)


def _grow(env, tol, xs, cum, v_needed, max_nodes=20_000):
    xs, cum = list(xs), list(cum)
    x0 = xs[0]
    hfun = lambda u: 1.0 / float(env.h(u))
    ratio = 10 ** (1 / 16)
    while cum[-1] < v_needed:
        if len(xs) >= max_nodes:
            raise TableRangeError(
                f"Theta reached only {cum[-1]:.6g} < {v_needed:.6g} at x={xs[-1]:.6g}; "
                "the integral of 1/h may converge")
        off = xs[-1] - x0
        nxt = x0 + (1e-3 if off == 0 else off * ratio)
        val, err = quad(hfun, xs[-1], nxt, epsabs=tol * 1e-3, epsrel=1e-13, limit=200)
        if err > tol:
            raise QuadratureToleranceError(
                f"quadrature of 1/h on [{xs[-1]:.6g}, {nxt:.6g}] has error {err:.3g} > {tol:.3g}")
        xs.append(nxt)
        cum.append(cum[-1] + val)
    xs, cum = np.array(xs), np.array(cum)
    if not np.all(np.diff(cum) > 0):
        raise QuadratureToleranceError("tabulated Theta is not strictly increasing")
    xs.setflags(write=False)
    cum.setflags(write=False)
    return ThetaTable(env, tol, xs, cum)


def build_theta(env: SuperlinearEnvelope, tol: float = 1e-11, z_max: float = 10.0,
                horizon: float = 1.0) -> ThetaTable:
    """Tabulate ``Theta`` far enough to evaluate ``phi_t(z)`` for ``z <= z_max``, ``T - t <= horizon``."""
    if not isinstance(env, SuperlinearEnvelope):
        raise InvalidArgumentError("build_theta needs a SuperlinearEnvelope")
    x0 = math.log(env.p0) / env.gamma
    start = _grow(env, tol, [x0], [env.p0 / env.c], env.p0 / env.c * (1 + 1e-9))
    # node at z_max first, then far enough for the horizon
    if z_max > x0:
        while start.x_max < z_max:
            start = _grow(env, tol, start.xs, start.cum, start.v_max * (1 + 1e-12) + 1e-300)
    need = horizon + float(start.forward(min(max(z_max, x0), start.x_max)))
    return start.extended(need)


def log_phi_general(t, z, table: ThetaTable, T: float):
    """``ln phi_t(z) = gamma Theta^{-1}(T - t + Theta(z))``, extending the table if needed."""
    t = _check_t(t, T)
    z = np.asarray(z, dtype=float)
    g = table.envelope.gamma
    tau = np.broadcast_to(T - t, np.broadcast(t, z).shape)
    zb = np.broadcast_to(z, tau.shape)
    if np.any(zb > table.x_max):
        tab = table
        while tab.x_max < np.max(zb):
            tab = _grow(tab.envelope, tab.tol, tab.xs, tab.cum, tab.v_max * 1.0001)
        table = tab
    v = table.forward(zb) + tau
    table = table.extended(float(np.max(v)) if v.size else 0.0)
    out = g * table.inverse(np.maximum(v, np.finfo(float).tiny))
    return np.where(tau == 0, g * zb, out)


def phi_general(t, z, table: ThetaTable, T: float):
    lp = log_phi_general(t, z, table, T)
    if np.any(lp > _LOG_MAX):
        raise PhiOverflowError(f"ln phi = {np.max(lp):.4g} overflows; use log_phi_general")
    return np.exp(lp)


def log_phi(t, z, env, T, table: ThetaTable | None = None):
    """Dispatch on the envelope type."""
    if isinstance(env, QuadraticEnvelope):
        return log_phi_linear(t, z, env, T)
    if table is None:
        table = build_theta(env, z_max=max(float(np.max(z, initial=0.0)), 1.0), horizon=T)
    return log_phi_general(t, z, table, T)


# ---------------------------------------------------------------------------
# RK4 oracle

def ode_oracle(z, env, T: float = 1.0, steps: int = 1000, log: bool = False):
    """Fourth-order Runge-Kutta solution of the backward ``phi`` ODE.

    Integrates in ``s = T - t``.  While ``phi`` is below the threshold the
    right-hand side is constant and the solution is linear, so that part is
    exact; above it the logarithm ``u = ln phi`` is integrated with
    ``du/ds = H(e^u) e^{-u}``.

    Returns
    -------
    t : ndarray
        Ascending times ``0 .. T``.
    phi : ndarray
        ``phi_t(z)`` (or ``ln phi_t(z)`` with ``log=True``).
    """
    if steps < 100:
        raise InvalidArgumentError("ode_oracle needs at least 100 steps")
    _require_normalized(env)
    g = env.gamma
    thr, low = threshold(env), floor_value(env)
    lthr = math.log(thr)
    ds = T / steps
    u = np.empty(steps + 1)
    u[0] = g * z
    rhs = lambda v: H_over_p_log(v, env)

    def rk4(v, hstep):
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * hstep * k1)
        k3 = rhs(v + 0.5 * hstep * k2)
        k4 = rhs(v + hstep * k3)
        return v + hstep * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

    p_lin = math.exp(g * z) if u[0] < lthr else None
    for k in range(steps):
        v = u[k]
        if p_lin is not None:
            s_cross = (thr - p_lin) / low if low > 0 else math.inf
            s_here = k * ds
            if s_cross >= (k + 1) * ds:
                u[k + 1] = math.log(p_lin + low * (k + 1) * ds)
                continue
            rem = (k + 1) * ds - max(s_cross, s_here)
            v = lthr
            p_lin = None
            u[k + 1] = rk4(v, rem)
        else:
            u[k + 1] = rk4(v, ds)
        if not np.isfinite(u[k + 1]):
            break
    bad = ~np.isfinite(u)
    if np.any(bad) or (not log and np.max(u) > _LOG_MAX):
        safe = _safe_z(env, T)
        raise PhiOverflowError(
            f"phi overflowed integrating from z={z}; values are representable for z <= {safe:.4g}"
            + ("" if log else " (or call with log=True)"))
    t = T - ds * np.arange(steps + 1)
    out = u if log else np.exp(u)
    return t[::-1].copy(), out[::-1].copy()


def _safe_z(env, T):
    if isinstance(env, QuadraticEnvelope):
        g, a, b = env.gamma, env.alpha, env.beta
        return (_LOG_MAX - g * a * _expm1_over(b, T)) / (g * math.exp(b * T))
    return float("nan")


# ---------------------------------------------------------------------------
# bounds and localisation

@dataclass(frozen=True)
class BoundsProfile:
    """Per-path, per-time a-priori bounds on ``Y``."""

    grid: TimeGrid
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    estimator: str = "quadrature"

    @property
    def consistent(self) -> bool:
        return bool(np.all(self.lower <= self.upper + 1e-10 * (1 + np.abs(self.upper))))


def _kinked_levels(terminal: TerminalFunction, levels):
    ks = set(terminal.kinks)
    for lev in levels:
        ks.update(terminal.zeros(lev))
    return tuple(sorted(ks))


def _phi_kink_levels(env, tau):
    levels = [0.0]
    if isinstance(env, QuadraticEnvelope):
        ga = env.gamma * env.alpha
        if 0 < ga * tau < 1:
            levels.append(math.log(1 - ga * tau) / env.gamma)
    else:
        levels.append(math.log(env.p0) / env.gamma)
    return levels


def check_integrability(terminal: TerminalFunction, env, T, paths: PathEnsemble | None = None,
                        table=None, share=0.5):
    """Finite ``E[phi_0(|xi|)]`` by node doubling and range widening, plus a sample check on ``paths``.

    Raises :class:`IntegrabilityError` naming (H2) when either test fails.
    """
    absg = TerminalFunction(lambda x: np.abs(terminal(x)), f"|{terminal.label}|",
                            terminal.kinks)
    kinks = _kinked_levels(terminal, [0.0] + [-l for l in _phi_kink_levels(env, T)]
                           + _phi_kink_levels(env, T))
    fn = lambda y: log_phi(0.0, absg.scalar(y), env, T, table)
    try:
        a = gaussian_expectation(fn, 0.0, T, kinks=kinks, log=True)
        b = gaussian_expectation(fn, 0.0, T, kinks=kinks, log=True,
                                 piecewise=DEFAULT_PIECEWISE.doubled())
        c = gaussian_expectation(fn, 0.0, T, kinks=kinks, log=True,
                                 piecewise=DEFAULT_PIECEWISE.widened())
    except (OverflowError, TableRangeError) as exc:
        raise IntegrabilityError(f"(H2) fails: E[phi_0(|xi|)] not computable ({exc})") from exc
    worst = max(abs(float(a) - float(b)), abs(float(a) - float(c)))
    if not (np.isfinite(a) and worst <= 1e-8 * (1 + abs(float(a)))):
        raise IntegrabilityError(
            f"(H2) fails: ln E[phi_0(|xi|)] unstable under refinement or a wider range "
            f"({float(a):.6g} vs {float(b):.6g}, {float(c):.6g})")
    if paths is not None:
        lv = log_phi(0.0, np.abs(terminal.on(paths)), env, T, table)
        top = float(np.max(lv))
        w = np.exp(lv - top)
        big = 1.0 / np.sum(w)
        if w.size >= 1000 and big > share:
            raise IntegrabilityError(
                f"(H2) fails: one path carries {big:.1%} of the sample mean of phi_0(|xi|)")
    return float(a)


def _lattice(x, L):
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi - lo < 1e-12:
        return np.array([lo])
    pad = 1e-9 * (hi - lo)
    return np.linspace(lo - pad, hi + pad, L)


def _spline_to(xs, vals, x):
    if xs.size == 1:
        return np.full(x.shape, vals[0])
    return CubicSpline(xs, vals)(x)


def _conditional_log_quadrature(paths, i, log_integrand, kinks, lattice):
    grid = paths.grid
    tau = grid.horizon - grid.times[i]
    x = paths.state(i)[:, 0]
    xs = _lattice(x, lattice)
    vals = gaussian_expectation(log_integrand, xs, tau, kinks=kinks, log=True, piecewise=BOUNDS_RULE)
    return _spline_to(xs, vals, x)


def _conditional_log_regression(paths, i, log_targets, spec):
    top = float(np.max(log_targets))
    w = np.exp(log_targets - top)
    scale = math.sqrt(paths.grid.times[i])
    lo = max(float(np.min(w)), np.finfo(float).tiny)
    reg = regressor_for(replace(spec, clip_box=(lo, float(np.max(w)))), scale)
    st = paths.state(i)
    return np.log(reg.fit(st, w).predict(st)) + top


def compute_bounds(paths: PathEnsemble, terminal: TerminalFunction, env, mode: str = "quadrature",
                   spec: RegressionSpec = RegressionSpec(), lattice: int = 401,
                   table: ThetaTable | None = None, check: bool = True) -> BoundsProfile:
    """Lower and upper bounds ``-(1/gamma) ln E(phi_t(-xi)|B_t)`` and ``(1/gamma) ln E(phi_t(xi)|B_t)``.

    ``mode="quadrature"`` (d = 1) integrates against the Gaussian transition
    density on a lattice of ``lattice`` states and splines to the paths.
    ``mode="regression"`` regresses ``phi_t(+-xi)`` on the Brownian state.
    """
    if mode not in ("quadrature", "regression"):
        raise InvalidArgumentError(f"unknown bounds mode {mode!r}")
    if mode == "quadrature" and paths.dim != 1:
        raise InvalidArgumentError("quadrature bounds need d = 1; use mode='regression'")
    _require_normalized(env)
    grid = paths.grid
    T, N = grid.horizon, grid.num_steps
    g = env.gamma
    if isinstance(env, SuperlinearEnvelope) and table is None:
        zmax = float(np.max(np.abs(terminal.on(paths)))) + 1.0
        table = build_theta(env, z_max=zmax + 40.0 * math.sqrt(T), horizon=T)
    if check:
        check_integrability(terminal, env, T, paths, table)
    xi = terminal.on(paths)
    M = paths.num_paths
    lower = np.empty((M, N + 1))
    upper = np.empty((M, N + 1))
    lower[:, N] = xi
    upper[:, N] = xi
    for i in range(N):
        t = grid.times[i]
        if mode == "quadrature":
            levels = _phi_kink_levels(env, T - t)
            kinks = _kinked_levels(terminal, levels + [-l for l in levels])
            up = _conditional_log_quadrature(
                paths, i, lambda y: log_phi(t, terminal.scalar(y), env, T, table), kinks, lattice)
            dn = _conditional_log_quadrature(
                paths, i, lambda y: log_phi(t, -terminal.scalar(y), env, T, table), kinks, lattice)
        else:
            up = _conditional_log_regression(paths, i, log_phi(t, xi, env, T, table), spec)
            dn = _conditional_log_regression(paths, i, log_phi(t, -xi, env, T, table), spec)
        upper[:, i] = up / g
        lower[:, i] = -dn / g
    for a in (lower, upper):
        a.setflags(write=False)
    return BoundsProfile(grid, lower, upper, mode)


def bound_statistic(paths: PathEnsemble, terminal: TerminalFunction, env, mode="quadrature",
                    spec: RegressionSpec = RegressionSpec(), lattice: int = 401,
                    table: ThetaTable | None = None):
    """``(1/gamma) ln E(phi_0(|xi|) | B_{t_i})`` on every path and grid index."""
    if mode == "quadrature" and paths.dim != 1:
        raise InvalidArgumentError("quadrature statistic needs d = 1")
    grid = paths.grid
    T, N = grid.horizon, grid.num_steps
    g = env.gamma
    if isinstance(env, SuperlinearEnvelope) and table is None:
        zmax = float(np.max(np.abs(terminal.on(paths)))) + 1.0
        table = build_theta(env, z_max=zmax + 40.0 * math.sqrt(T), horizon=T)
    absxi = np.abs(terminal.on(paths))
    out = np.empty((paths.num_paths, N + 1))
    out[:, N] = log_phi(0.0, absxi, env, T, table) / g
    levels = _phi_kink_levels(env, T)
    kinks = _kinked_levels(terminal, [0.0] + levels + [-l for l in levels])
    fn = lambda y: log_phi(0.0, np.abs(terminal.scalar(y)), env, T, table)
    for i in range(N):
        if mode == "quadrature":
            out[:, i] = _conditional_log_quadrature(paths, i, fn, kinks, lattice) / g
        else:
            out[:, i] = _conditional_log_regression(paths, i, log_phi(0.0, absxi, env, T, table),
                                                    spec) / g
    return out


@dataclass(frozen=True)
class LocalizationSchedule:
    """First grid index at which the bound statistic reaches ``level`` (``N`` if never)."""

    level: float
    tau: np.ndarray = field(repr=False)
    num_steps: int = 0

    @property
    def crossed(self) -> np.ndarray:
        return self.tau < self.num_steps

    def fraction_stopped(self) -> float:
        return float(np.mean(self.crossed))


def schedule_from_statistic(stat, k) -> LocalizationSchedule:
    N = stat.shape[1] - 1
    hit = stat >= k
    any_hit = hit.any(axis=1)
    tau = np.where(any_hit, np.argmax(hit, axis=1), N)
    tau.setflags(write=False)
    return LocalizationSchedule(float(k), tau, N)


def localization_times(paths: PathEnsemble, terminal: TerminalFunction, env, k,
                       mode="quadrature", spec: RegressionSpec = RegressionSpec(),
                       lattice: int = 401, statistic=None) -> LocalizationSchedule:
    """Grid stopping times ``tau_k``; pass ``statistic`` to reuse one computation across ``k``."""
    if statistic is None:
        check_integrability(terminal, env, paths.grid.horizon, paths)
        statistic = bound_statistic(paths, terminal, env, mode, spec, lattice)
    if np.isinf(k):
        N = paths.grid.num_steps
        return LocalizationSchedule(float(k), np.full(paths.num_paths, N), N)
    return schedule_from_statistic(statistic, k)
