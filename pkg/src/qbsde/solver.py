"""Backward least-squares Monte Carlo for ``Y_t = xi + int f(s,Y,Z) ds - int Z dB``.

At each grid index, going backwards::

    E_i  = R_i[Y_{i+1}]
    Z_i  = R_i[(Y_{i+1} - E_i) dB_i] / dt
    Y_i  = E_i + dt f(t_i, Y_i, Z_i)        (implicit, Newton)

where ``R_i`` is the regression on ``B_{t_i}`` (Hermite or spline basis,
optionally augmented by the heat-smoothed terminal function and its slope).  Subtracting ``E_i``
before forming the ``Z`` target does not change the conditional expectation
(``E_i`` is known at ``t_i``) but removes most of its variance.

Standard errors come from re-running the scheme on 20 disjoint path
batches and looking at the spread of the per-batch regression functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .drivers import Driver, QuadraticEnvelope, SuperlinearEnvelope, l1_dominating, zsq
from .exceptions import (HypothesisError, InvalidArgumentError, SolverInconsistencyError,
                         StepFailureError)
from .oracles import TerminalFunction, absolute, gaussian_expectation, truncate
from .regression import RegressionSpec, regressor_for
from .stochastic import PathEnsemble, TimeGrid


@dataclass(frozen=True)
class SolverConfig:
    """Numerical choices of the backward scheme.

    ``z_cap`` is ``None``, a positive number, or ``"auto"``; the automatic cap
    is ``sqrt(2 k / (gamma dt))`` with ``k`` the largest bound magnitude at
    the step (or the largest ``|Y_{i+1}|`` without bounds).
    """

    regression: RegressionSpec = RegressionSpec()
    step_mode: str = "implicit"
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    clip_to_bounds: bool = True
    z_cap: float | str | None = None
    batches: int = 20
    se_lattice: int = 201

    def __post_init__(self):
        if self.step_mode not in ("implicit", "explicit"):
            raise InvalidArgumentError(f"unknown step_mode {self.step_mode!r}")
        if not self.newton_tol > 0:
            raise InvalidArgumentError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise InvalidArgumentError("newton_max_iter must be >= 1")
        if self.batches < 2 and self.batches != 0:
            raise InvalidArgumentError("batches must be 0 (no standard errors) or >= 2")
        if isinstance(self.z_cap, str) and self.z_cap != "auto":
            raise InvalidArgumentError("z_cap must be a number, 'auto' or None")
        if isinstance(self.z_cap, (int, float)) and not self.z_cap > 0:
            raise InvalidArgumentError("z_cap must be positive")


@dataclass(frozen=True)
class TruncationPair:
    """Levels of ``xi^{n,p} = min(xi^+, n) - min(xi^-, p)``; ``inf`` disables a side."""

    n: float
    p: float

    def __post_init__(self):
        for v in (self.n, self.p):
            if not (v >= 1 and (math.isinf(v) or int(v) == v)):
                raise InvalidArgumentError("truncation levels must be integers >= 1 or inf")

    def apply(self, terminal: TerminalFunction) -> TerminalFunction:
        return truncate(terminal, self.n, self.p)


@dataclass
class BsdeSolution:
    """Per-path, per-step ``Y`` (shape ``(M, N+1)``) and ``Z`` (shape ``(M, N, d)``).

    ``se`` holds per-cell standard errors of ``Y`` from batch re-runs (zeros
    if batches were disabled).  ``batch_values`` and ``lattice`` keep the
    per-batch regression functions so that errors of differences between
    two solutions on the same ensemble can be formed.
    """

    grid: TimeGrid
    Y: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    fingerprint: str = ""
    se: np.ndarray | None = field(default=None, repr=False)
    batch_Y0: np.ndarray | None = field(default=None, repr=False)
    lattice: list | None = field(default=None, repr=False)
    batch_values: np.ndarray | None = field(default=None, repr=False)
    states: np.ndarray | None = field(default=None, repr=False)
    metadata: dict = field(default_factory=dict)

    @property
    def num_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def Y0(self) -> float:
        return float(np.mean(self.Y[:, 0]))

    @property
    def Y0_se(self) -> float:
        if self.batch_Y0 is None:
            return 0.0
        return float(np.std(self.batch_Y0, ddof=1) / math.sqrt(self.batch_Y0.size))

    @property
    def terminal_residual(self) -> float:
        return float(self.metadata.get("terminal_residual", 0.0))


# ---------------------------------------------------------------------------
# implicit step

def _bracket(driver, t, E, Z, dt):
    env = driver.envelope
    if isinstance(env, QuadraticEnvelope) and env.beta * dt < 1:
        R = (np.abs(E) + dt * (env.alpha + 0.5 * env.gamma * zsq(Z))) / (1 - env.beta * dt)
        return -R - 1e-12 * (1 + R), R + 1e-12 * (1 + R)
    R = np.abs(E) + dt * np.abs(driver(t, E, Z)) + 1.0
    lo, hi = -R.copy(), R.copy()
    for _ in range(200):
        glo = lo - E - dt * driver(t, lo, Z)
        ghi = hi - E - dt * driver(t, hi, Z)
        bad_lo, bad_hi = glo > 0, ghi < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, 2 * lo, lo)
        hi = np.where(bad_hi, 2 * hi, hi)
    return lo, hi


def implicit_step(driver: Driver, t, E, Z, dt, tol=1e-12, max_iter=50, step=None):
    """Solve ``y = E + dt f(t, y, Z)`` path by path.

    Newton from the explicit predictor; paths that do not converge fall back
    to bisection on a bracket derived from the envelope.

    Returns
    -------
    y : ndarray
    stats : dict
        ``newton_iter`` (largest iteration count) and ``fallbacks``.
    """
    E = np.asarray(E, dtype=float)
    y = E + dt * driver(t, E, Z)
    active = np.ones(E.shape, dtype=bool)
    it_used = 0
    for it in range(max_iter):
        G = y - E - dt * driver(t, y, Z)
        conv = np.abs(G) <= tol * (1 + np.abs(y))
        active = ~conv
        if not active.any():
            break
        it_used = it + 1
        dG = 1 - dt * driver.partial_y(t, y, Z)
        dG = np.where(np.abs(dG) < 1e-8, 1e-8, dG)
        y = np.where(active, y - G / dG, y)
        y = np.where(np.isfinite(y), y, E)
    else:
        G = y - E - dt * driver(t, y, Z)
        active = ~(np.abs(G) <= tol * (1 + np.abs(y)))
    fallbacks = int(active.sum())
    if fallbacks:
        idx = np.flatnonzero(active)
        Zs = Z[idx]
        Es = E[idx]
        lo, hi = _bracket(driver, t, Es, Zs, dt)
        glo = lo - Es - dt * driver(t, lo, Zs)
        ghi = hi - Es - dt * driver(t, hi, Zs)
        bad = (glo > 0) | (ghi < 0) | ~np.isfinite(glo) | ~np.isfinite(ghi)
        if bad.any():
            k = int(idx[np.flatnonzero(bad)[0]])
            raise StepFailureError(f"no bracket for the implicit step at path {k}, step {step}",
                                   path=k, step=step)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gm = mid - Es - dt * driver(t, mid, Zs)
            lo = np.where(gm <= 0, mid, lo)
            hi = np.where(gm > 0, mid, hi)
            if np.all(hi - lo <= tol * (1 + np.abs(mid))):
                break
        mid = 0.5 * (lo + hi)
        res = np.abs(mid - Es - dt * driver(t, mid, Zs))
        slack = (hi - lo) * (1 + dt * np.abs(driver.partial_y(t, mid, Zs))) + tol * (1 + np.abs(mid))
        if np.any(~(res <= slack)):
            k = int(idx[np.flatnonzero(~(res <= slack))[0]])
            raise StepFailureError(f"implicit step failed at path {k}, step {step}", path=k, step=step)
        y = y.copy()
        y[idx] = mid
    return y, {"newton_iter": it_used, "fallbacks": fallbacks}


# ---------------------------------------------------------------------------
# smoothed-payoff regressors

class _SmoothedPayoff:
    """Columns ``s(x)`` and ``s'(x)`` with ``s(x) = E g(x + B_T - B_t)``, splined from a lattice."""

    def __init__(self, terminal: TerminalFunction, t: float, T: float, size: int = 257):
        from scipy.interpolate import CubicSpline

        half = 8.0 * math.sqrt(max(t, 0.0)) + 1.0
        xs = np.linspace(-half, half, size)
        vals = gaussian_expectation(terminal.scalar, xs, T - t, kinks=terminal.kinks)
        self.spline = CubicSpline(xs, vals)
        self.slope = self.spline.derivative()

    def __call__(self, X):
        x = np.asarray(X, dtype=float)[:, 0]
        return np.column_stack([self.spline(x), self.slope(x)])


def payoff_features(terminal: TerminalFunction, grid: TimeGrid):
    """Per-step extra regressors built from the heat-smoothed terminal function (d = 1)."""
    return [_SmoothedPayoff(terminal, t, grid.horizon) for t in grid.times[:-1]]


# ---------------------------------------------------------------------------
# core backward pass

@dataclass
class _StepModel:
    t: float
    reg_E: object
    reg_Z: list
    cap: float | None


def _cap_z(Z, cap):
    if cap is None:
        return Z
    nz = np.sqrt(zsq(Z))
    fac = np.where(nz > cap, cap / np.maximum(nz, 1e-300), 1.0)
    return Z * fac[:, None]


def _auto_cap(driver, dt, lo, hi, ynext):
    k = float(np.max(np.abs(ynext))) if lo is None else float(max(np.max(np.abs(lo)), np.max(np.abs(hi))))
    return math.sqrt(2 * max(k, 1e-12) / (driver.envelope.gamma * dt))


def _backward(driver, values, increments, grid, xi, config: SolverConfig, lower=None, upper=None,
              alive=None, frozen=None, features=None):
    M, N, d = increments.shape
    dt = grid.dt
    spec = config.regression
    Y = np.empty((M, N + 1))
    Z = np.zeros((M, N, d))
    Y[:, N] = xi
    models = [None] * N
    stats = {"newton_iter": 0, "fallbacks": 0, "clipped": 0, "caps": []}
    for i in range(N - 1, -1, -1):
        t = grid.times[i]
        scale = math.sqrt(t)
        ynext = Y[:, i + 1]
        live = slice(None) if alive is None else alive[:, i]
        st = values[live, i, :]
        if alive is not None and not np.any(live):
            Y[:, i] = frozen[:, i]
            continue
        extra = None if features is None else features[i]
        reg_E = regressor_for(spec, scale, extra).fit(st, ynext[live])
        E = reg_E.predict(st)
        resid = ynext[live] - E
        reg_Z = []
        Zi = np.empty((st.shape[0], d))
        for j in range(d):
            r = regressor_for(replace(spec, clip_box=None), scale, extra).fit(
                st, resid * increments[live, i, j] / dt)
            reg_Z.append(r)
            Zi[:, j] = r.predict(st)
        cap = config.z_cap
        if cap == "auto":
            cap = _auto_cap(driver, dt, None if lower is None else lower[:, i],
                            None if upper is None else upper[:, i], ynext)
        if cap is not None:
            stats["caps"].append(float(cap))
        Zi = _cap_z(Zi, cap)
        if config.step_mode == "implicit":
            yi, st_ = implicit_step(driver, t, E, Zi, dt, config.newton_tol, config.newton_max_iter, i)
            stats["newton_iter"] = max(stats["newton_iter"], st_["newton_iter"])
            stats["fallbacks"] += st_["fallbacks"]
        else:
            yi = E + dt * driver(t, E, Zi)
        if not np.all(np.isfinite(yi)):
            k = int(np.flatnonzero(~np.isfinite(yi))[0])
            raise StepFailureError(f"non-finite Y at path {k}, step {i}", path=k, step=i)
        if config.clip_to_bounds and lower is not None:
            lo, hi = lower[live, i], upper[live, i]
            stats["clipped"] += int(np.sum((yi < lo) | (yi > hi)))
            yi = np.clip(yi, lo, hi)
        if alive is None:
            Y[:, i] = yi
            Z[:, i, :] = Zi
        else:
            Y[:, i] = frozen[:, i]
            Y[live, i] = yi
            Z[live, i, :] = Zi
        models[i] = _StepModel(t, reg_E, reg_Z, cap)
    return Y, Z, models, stats


def _predict_step(driver, model: _StepModel, states, dt, config):
    E = model.reg_E.predict(states)
    Zi = np.column_stack([r.predict(states) for r in model.reg_Z])
    Zi = _cap_z(Zi, model.cap)
    if config.step_mode == "implicit":
        y, _ = implicit_step(driver, model.t, E, Zi, dt, config.newton_tol, config.newton_max_iter)
    else:
        y = E + dt * driver(model.t, E, Zi)
    return y, Zi


def _lattices(values, L):
    out = []
    for i in range(values.shape[1]):
        x = values[:, i, 0]
        lo, hi = float(np.min(x)), float(np.max(x))
        out.append(np.array([lo]) if hi - lo < 1e-12 else np.linspace(lo, hi, L))
    return out


class LSMCSolver(BaseEstimator):
    """Estimator wrapper around the backward scheme.

    Parameters
    ----------
    driver : Driver
    config : SolverConfig

    ``fit(paths, xi, bounds=None)`` runs the scheme on a path ensemble with
    realised terminal values ``xi``; afterwards ``solution_`` holds the
    :class:`BsdeSolution` and ``predict(states, step)`` evaluates the fitted
    ``Y`` at new Brownian states.
    """

    def __init__(self, driver=None, config=None):
        self.driver = driver
        self.config = config

    def fit(self, paths: PathEnsemble, xi, bounds=None, terminal: TerminalFunction | None = None):
        if self.driver is None:
            raise InvalidArgumentError("LSMCSolver needs a driver")
        cfg = self.config or SolverConfig()
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (paths.num_paths,):
            raise InvalidArgumentError("xi must have one value per path")
        if not np.all(np.isfinite(xi)):
            raise InvalidArgumentError("terminal values must be finite")
        lower = upper = None
        if bounds is not None:
            if bounds.lower.shape != (paths.num_paths, paths.grid.num_steps + 1):
                raise InvalidArgumentError("bounds do not match the path ensemble")
            lower, upper = bounds.lower, bounds.upper
        grid = paths.grid
        feats = _features_for(cfg, terminal, paths)
        Y, Z, models, stats = _backward(self.driver, paths.values, paths.increments, grid, xi, cfg,
                                        lower, upper, features=feats)
        self.models_ = models
        self.dt_ = grid.dt
        meta = {
            "driver": self.driver.label,
            "step_mode": cfg.step_mode,
            "degree": cfg.regression.degree,
            "ridge": cfg.regression.ridge,
            "clip_to_bounds": bool(cfg.clip_to_bounds and bounds is not None),
            "newton_max_iter_used": stats["newton_iter"],
            "bisection_fallbacks": stats["fallbacks"],
            "clipped_cells": stats["clipped"],
            "z_cap": "none" if not stats["caps"] else f"{min(stats['caps']):.6g}..{max(stats['caps']):.6g}",
            "num_paths": paths.num_paths,
            "num_steps": grid.num_steps,
            "seed": None if paths.seed is None else paths.seed.master_seed,
            "terminal_residual": float(np.max(np.abs(Y[:, -1] - xi))),
        }
        sol = BsdeSolution(grid, Y, Z, paths.fingerprint, metadata=meta,
                           states=paths.values)
        if cfg.batches:
            _attach_batch_errors(sol, self.driver, paths, xi, cfg, terminal, feats)
        for a in (sol.Y, sol.Z):
            a.setflags(write=False)
        self.solution_ = sol
        return self

    def predict(self, states, step: int):
        """``Y`` at grid index ``step`` for Brownian states of shape ``(n, d)``."""
        check_is_fitted(self, "models_")
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if step == len(self.models_):
            raise InvalidArgumentError("the terminal step is given by xi, not by a regression")
        return _predict_step(self.driver, self.models_[step], states, self.dt_,
                             self.config or SolverConfig())[0]


def _features_for(cfg, terminal, paths):
    if not cfg.regression.payoff_features:
        return None
    if terminal is None or paths.dim != 1:
        raise InvalidArgumentError("payoff features need the terminal function and d = 1")
    return payoff_features(terminal, paths.grid)


def _attach_batch_errors(sol, driver, paths, xi, cfg, terminal, features=None):
    B = cfg.batches
    M, N = paths.num_paths, paths.grid.num_steps
    edges = np.linspace(0, M, B + 1).astype(int)
    d1 = paths.dim == 1
    if d1:
        lattice = _lattices(paths.values, cfg.se_lattice)
    else:
        # a fixed subsample of states stands in for the lattice when d > 1
        sub = np.linspace(0, M - 1, min(M, 500)).astype(int)
        lattice = [paths.values[sub, i, :] for i in range(N + 1)]
    L = max(len(x) for x in lattice)
    vals = np.full((B, N + 1, L), np.nan)
    y0 = np.empty(B)
    bcfg = replace(cfg, clip_to_bounds=False)
    for b in range(B):
        sl = slice(edges[b], edges[b + 1])
        Yb, _, models, _ = _backward(driver, paths.values[sl], paths.increments[sl], paths.grid,
                                     xi[sl], bcfg, features=features)
        y0[b] = np.mean(Yb[:, 0])
        for i in range(N):
            pts = lattice[i][:, None] if d1 else lattice[i]
            vals[b, i, :len(pts)] = _predict_step(driver, models[i], pts, paths.grid.dt, bcfg)[0]
        if terminal is not None:
            pts = lattice[N][:, None] if d1 else lattice[N]
            vals[b, N, :len(pts)] = terminal(pts)
        else:
            vals[b, N, :] = 0.0
    sol.batch_Y0 = y0
    sol.lattice = lattice
    sol.batch_values = vals
    sol.se = cell_errors(sol, vals)


def cell_errors(sol: BsdeSolution, batch_values):
    """Interpolate ``std_b / sqrt(B)`` of batch functions to every path and step."""
    B = batch_values.shape[0]
    M, N1 = sol.Y.shape
    out = np.zeros((M, N1))
    for i in range(N1):
        lat = sol.lattice[i]
        s = np.std(batch_values[:, i, :len(lat)], axis=0, ddof=1) / math.sqrt(B)
        if np.ndim(lat) == 1:
            if lat.size == 1:
                out[:, i] = s[0]
            else:
                out[:, i] = np.interp(sol.states[:, i, 0], lat, s)
        else:
            out[:, i] = np.median(s)
    out.setflags(write=False)
    return out


def difference_errors(a: BsdeSolution, b: BsdeSolution):
    """Per-cell standard errors of ``Y_a - Y_b`` for solutions on one ensemble."""
    if a.fingerprint != b.fingerprint:
        raise InvalidArgumentError("solutions are not on the same path ensemble")
    if a.batch_values is None or b.batch_values is None:
        return np.zeros(a.Y.shape)
    return cell_errors(a, a.batch_values - b.batch_values)


def difference_se_at(a: BsdeSolution, b: BsdeSolution, step: int):
    """Standard error of the mean of ``Y_a - Y_b`` at ``step``, from batch means."""
    if a.fingerprint != b.fingerprint:
        raise InvalidArgumentError("solutions are not on the same path ensemble")
    if step == 0 and a.batch_Y0 is not None and b.batch_Y0 is not None:
        d = a.batch_Y0 - b.batch_Y0
        return float(np.std(d, ddof=1) / math.sqrt(d.size))
    return float(np.mean(difference_errors(a, b)[:, step]))


def solve_lsmc(driver: Driver, terminal: TerminalFunction, paths: PathEnsemble,
               config: SolverConfig = SolverConfig(), bounds=None) -> BsdeSolution:
    """Run the backward scheme for ``xi = terminal(B_T)``."""
    xi = terminal.on(paths)
    solver = LSMCSolver(driver, config).fit(paths, xi, bounds, terminal)
    sol = solver.solution_
    sol.metadata["terminal"] = terminal.label
    return sol


# ---------------------------------------------------------------------------
# truncation families

@dataclass
class TruncationFamily:
    solutions: dict
    limit: BsdeSolution | None
    fingerprint: str

    def Y0(self) -> dict:
        return {k: s.Y0 for k, s in self.solutions.items()}


def solve_truncated_family(driver: Driver, terminal: TerminalFunction, n_list, p_list,
                           paths: PathEnsemble, config: SolverConfig = SolverConfig(),
                           include_limit: bool = True, bounds_fn=None) -> TruncationFamily:
    """Solutions for every ``(n, p)`` on one ensemble, plus the untruncated run.

    ``bounds_fn(terminal)`` may supply bounds for clipping; by default no
    bounds are used.
    """
    n_list, p_list = list(n_list), list(p_list)
    if not n_list or not p_list:
        raise InvalidArgumentError("truncation lists must be nonempty")
    if n_list != sorted(n_list) or p_list != sorted(p_list):
        raise InvalidArgumentError("truncation lists must be sorted ascending")
    sols = {}
    for n in n_list:
        for p in p_list:
            pair = TruncationPair(n, p)
            term = pair.apply(terminal)
            b = None if bounds_fn is None else bounds_fn(term)
            sols[(n, p)] = solve_lsmc(driver, term, paths, config, b)
    limit = None
    if include_limit:
        b = None if bounds_fn is None else bounds_fn(terminal)
        limit = solve_lsmc(driver, terminal, paths, config, b)
    return TruncationFamily(sols, limit, paths.fingerprint)


# ---------------------------------------------------------------------------
# L^1 data

@dataclass
class L1Result:
    solution: BsdeSolution
    family: TruncationFamily
    dominating: BsdeSolution
    domination_rate: float
    worst_excess: float
    diagnostics: dict


def solve_l1(driver: Driver, terminal: TerminalFunction, paths: PathEnsemble,
             config: SolverConfig = SolverConfig(clip_to_bounds=False),
             n_list=(1, 2, 4, 8), p_list=(1, 2, 4, 8), tolerance_se: float = 3.0,
             threshold: float = 0.01) -> L1Result:
    """Double truncation for integrable data, checked against the dominating driver.

    The dominating problem uses ``2c(1 + |y| + min(|z|^alpha, |z|))`` with
    terminal ``|xi|``; every family member must satisfy
    ``|Y^{n,p}| <= Y^g + tolerance`` on all but ``threshold`` of the cells.
    """
    spec = driver.l1
    if spec is None:
        raise HypothesisError("(H4)", f"driver {driver.label!r} has no L1 specification")
    if not terminal.l1_certificate:
        raise HypothesisError("(H5)", f"terminal {terminal.label!r} carries no integrability certificate")
    fam = solve_truncated_family(driver, terminal, n_list, p_list, paths, config, include_limit=False)
    g = l1_dominating(c=max(spec.c, 1e-300) if spec.c > 0 else 0.0, alpha=spec.alpha_exp)
    dom = solve_lsmc(g, absolute(terminal), paths, config)
    worst_rate, worst = 0.0, -np.inf
    for key, s in fam.solutions.items():
        tol = tolerance_se * np.sqrt(np.asarray(s.se if s.se is not None else 0.0) ** 2
                                     + np.asarray(dom.se if dom.se is not None else 0.0) ** 2)
        excess = np.abs(s.Y) - dom.Y - tol
        worst_rate = max(worst_rate, float(np.mean(excess > 0)))
        worst = max(worst, float(np.max(excess)))
    if worst_rate > threshold:
        raise SolverInconsistencyError(
            f"domination |Y^(n,p)| <= Y^g(|xi|) fails on {worst_rate:.2%} of cells "
            f"(worst excess {worst:.3g}); scheme bias suspected")
    top = (max(n_list), max(p_list))
    diag = {"pairs": sorted(fam.solutions), "dominating_Y0": dom.Y0,
            "Y0": {k: v.Y0 for k, v in fam.solutions.items()}}
    return L1Result(fam.solutions[top], fam, dom, worst_rate, worst, diag)


# ---------------------------------------------------------------------------
# localisation

def solve_localized(driver: Driver, terminal: TerminalFunction, paths: PathEnsemble, schedule,
                    full: BsdeSolution, config: SolverConfig = SolverConfig(clip_to_bounds=False)):
    """Solve on ``[0, tau_k]`` with the stopped value ``Y_{tau_k}`` taken from ``full``.

    Paths are frozen after their crossing index; regressions at step ``i``
    use only the paths with ``tau_k > i``.
    """
    if full.fingerprint != paths.fingerprint:
        raise InvalidArgumentError("full solution is not on this ensemble")
    N = paths.grid.num_steps
    tau = np.asarray(schedule.tau)
    idx = np.arange(N + 1)
    alive = idx[None, :N] < tau[:, None]
    stopped_val = full.Y[np.arange(full.num_paths), tau]
    frozen = np.where(idx[None, :] >= tau[:, None], stopped_val[:, None], np.nan)
    xi = np.where(tau == N, terminal.on(paths), stopped_val)
    cfg = replace(config, clip_to_bounds=False)
    Y, Z, _, stats = _backward(driver, paths.values, paths.increments, paths.grid, xi, cfg,
                               alive=alive, frozen=frozen, features=_features_for(cfg, terminal, paths))
    meta = {"level": schedule.level, "stopped_fraction": float(np.mean(tau < N)),
            "bisection_fallbacks": stats["fallbacks"]}
    return BsdeSolution(paths.grid, Y, Z, paths.fingerprint, metadata=meta, states=paths.values)


# ---------------------------------------------------------------------------
# diagnostics on a solution

@dataclass
class EnergyReport:
    lhs: float
    rhs: float
    tolerance: float = 0.05
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rhs) and self.lhs <= self.rhs * (1 + self.tolerance))


def energy_estimate(solution: BsdeSolution, env: QuadraticEnvelope, gamma: float | None = None,
                    terminal: TerminalFunction | None = None, tolerance: float = 0.05) -> EnergyReport:
    """Discrete ``E sum |Z|^2 dt`` against ``2 E[u-type bound]``.

    The right side is
    ``2 E[(1/gamma^2) max_i e^{gamma|Y_i|} + (1/gamma) sum_i e^{gamma|Y_i|}(alpha + beta|Y_i|) dt]``.
    With ``terminal`` given, its exponential-moment certificate must exceed
    ``gamma e^{beta T}``.
    """
    if isinstance(env, SuperlinearEnvelope):
        raise InvalidArgumentError("the energy estimate is stated for quadratic envelopes")
    g = env.gamma if gamma is None else gamma
    T = solution.grid.horizon
    if terminal is not None:
        lam = terminal.exp_moment_lambda
        need = g * math.exp(env.beta * T)
        if lam is None or not lam > need:
            raise HypothesisError("(H3)", f"exponential moment certificate {lam} does not exceed "
                                          f"gamma e^(beta T) = {need:.6g}")
    dt = solution.grid.dt
    lhs = float(np.mean(np.sum(zsq(solution.Z), axis=1) * dt))
    aY = np.abs(solution.Y)
    with np.errstate(over="ignore"):
        e = np.exp(g * aY)
        sup_term = np.max(e, axis=1) / g ** 2
        run = np.sum(e[:, :-1] * (env.alpha + env.beta * aY[:, :-1]), axis=1) * dt / g
    rhs = float(2 * np.mean(sup_term + run))
    return EnergyReport(lhs, rhs, tolerance, {"sup_term": float(np.mean(sup_term)),
                                              "running_term": float(np.mean(run))})


def terminal_continuity_stat(solution: BsdeSolution):
    """``max_m |Y[m, N-1] - Y[m, N]|`` and its mean over paths."""
    if solution.grid.num_steps < 2:
        raise InvalidArgumentError("terminal continuity needs N >= 2")
    gap = np.abs(solution.Y[:, -2] - solution.Y[:, -1])
    return float(np.max(gap)), float(np.mean(gap))
