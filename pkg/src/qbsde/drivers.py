"""Generators ``f(t, y, z)`` with their growth envelopes, plus sampling diagnostics.

Drivers are vectorised: ``y`` has shape ``(...)`` and ``z`` has shape
``(..., d)``.  For ``d = 1`` a ``z`` with the same shape as ``y`` is accepted
and gets the trailing axis added.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from .exceptions import InvalidArgumentError, UnknownLabelError

ENVELOPE_TOL = 1e-12


def as_z(y, z):
    z = np.asarray(z, dtype=float)
    if z.ndim == np.ndim(y):
        z = z[..., None]
    return z


def zsq(z):
    return np.sum(z * z, axis=-1)


@dataclass(frozen=True)
class QuadraticEnvelope:
    """``|f(t,y,z)| <= alpha + beta |y| + (gamma/2) |z|^2``."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidArgumentError(f"gamma must be positive, got {self.gamma}")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidArgumentError("alpha and beta must be nonnegative")

    @property
    def is_normalized(self) -> bool:
        return self.alpha >= self.beta / self.gamma

    def bound(self, y, z):
        z = as_z(y, z)
        return self.alpha + self.beta * np.abs(y) + 0.5 * self.gamma * zsq(z)


def normalize_envelope(env: QuadraticEnvelope) -> QuadraticEnvelope:
    """Raise ``alpha`` to ``beta/gamma`` if needed; the bound only gets weaker."""
    if not isinstance(env, QuadraticEnvelope):
        raise InvalidArgumentError("expected a QuadraticEnvelope")
    if env.is_normalized:
        return env
    return QuadraticEnvelope(env.beta / env.gamma, env.beta, env.gamma)


@dataclass(frozen=True)
class SuperlinearEnvelope:
    """``|f(t,y,z)| <= h(|y|) + (gamma/2) |z|^2`` with ``h`` convex, nondecreasing.

    Build through :meth:`from_h`, which computes ``c`` and ``p0``.
    """

    h: Callable = field(repr=False)
    dh: Callable = field(repr=False)
    gamma: float
    c: float
    p0: float
    label: str = "h"

    @classmethod
    def from_h(cls, h, dh, gamma, label="h", u_max=None):
        if not gamma > 0:
            raise InvalidArgumentError("gamma must be positive")
        h0 = float(h(0.0))
        if not h0 > 0:
            raise InvalidArgumentError(f"h(0) must be positive, got {h0}")
        u_max = 400.0 / gamma if u_max is None else u_max
        c = _sup_exp_weighted(h, gamma, u_max)

        def k(p):
            return gamma * p * float(h(math.log(p) / gamma))

        if k(1.0) >= c:
            p0 = 1.0
        else:
            hi = 2.0
            while k(hi) < c:
                hi *= 2.0
                if hi > 1e300:
                    raise InvalidArgumentError("could not locate p0")
            p0 = brentq(lambda p: k(p) - c, 1.0, hi, xtol=1e-15, rtol=1e-15)
        return cls(h, dh, float(gamma), float(c), float(p0), label)

    def bound(self, y, z):
        z = as_z(y, z)
        return self.h(np.abs(y)) + 0.5 * self.gamma * zsq(z)

    def check(self, samples=2000, seed=0, y_max=50.0):
        """Sampled checks on ``h``: monotone, convex, derivative, divergent ``int 1/h``."""
        rng = np.random.default_rng(seed)
        u = np.sort(rng.uniform(0, y_max, samples))
        hu = self.h(u)
        out = {"h0_positive": float(self.h(0.0)) > 0}
        out["nondecreasing"] = bool(np.all(np.diff(hu) >= -ENVELOPE_TOL * (1 + np.abs(hu[1:]))))
        slopes = np.diff(hu) / np.diff(u)
        ok = np.diff(u) > 1e-9
        s = slopes[ok]
        out["convex"] = bool(np.all(np.diff(s) >= -1e-6 * (1 + np.abs(s[1:]))))
        eps = 1e-6
        fd = (self.h(u + eps) - self.h(np.maximum(u - eps, 0))) / (u + eps - np.maximum(u - eps, 0))
        out["derivative_consistent"] = bool(np.allclose(self.dh(u), fd, rtol=1e-5, atol=1e-6))
        ladder = 10.0 ** np.arange(1, 13)
        pts = np.concatenate([[0.0], ladder])
        incr = np.array([quad(lambda x: 1.0 / float(self.h(x)), a, b, limit=200)[0]
                         for a, b in zip(pts[:-1], pts[1:])])
        # a divergent integral keeps adding comparable mass per decade
        ratios = incr[-5:] / incr[-6:-1]
        out["integral_diverges"] = bool(np.all(ratios >= 0.85))
        out["c_finite"] = bool(np.isfinite(self.c))
        return out


def _sup_exp_weighted(h, gamma, u_max):
    """``sup_{u>0} gamma exp(-gamma u) h(u)``, i.e. ``sup_{p in (0,1)} gamma p h(-ln p/gamma)``."""
    u = np.concatenate([[0.0], np.logspace(-10, np.log10(u_max), 6000)])
    v = gamma * np.exp(-gamma * u) * h(u)
    j = int(np.argmax(v))
    if j == u.size - 1 and v[-1] > v[-2] * (1 + 1e-12):
        raise InvalidArgumentError("sup exp(-gamma y) h(y) appears to be infinite")
    lo, hi = u[max(j - 1, 0)], u[min(j + 1, u.size - 1)]
    best = float(v[j])
    if hi > lo:
        r = minimize_scalar(lambda x: -gamma * math.exp(-gamma * x) * float(h(x)),
                            bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
        best = max(best, -float(r.fun))
    return best


Envelope = Union[QuadraticEnvelope, SuperlinearEnvelope]


@dataclass(frozen=True)
class L1DriverSpec:
    """Constants of assumption (A) and of ``|f| <= c (1 + |y| + |z|^alpha)``."""

    mu: float = 0.0
    lam: float = 0.0
    delta: float = 0.0
    alpha_exp: float = 0.5
    c: float = 0.0
    g_process: Union[float, Callable] = 0.0

    def __post_init__(self):
        if not 0 < self.alpha_exp < 1:
            raise InvalidArgumentError("alpha must lie in (0, 1)")
        if self.lam < 0 or self.delta < 0 or self.c < 0:
            raise InvalidArgumentError("lambda, delta and c must be nonnegative")

    def g_at(self, t):
        return self.g_process(t) if callable(self.g_process) else self.g_process


@dataclass(frozen=True)
class Driver:
    """A generator with its growth envelope.

    ``func(t, y, z)`` must be vectorised; ``dfdy`` is an optional analytic
    partial derivative in ``y`` used by the implicit solver.
    """

    func: Callable = field(repr=False)
    envelope: Envelope
    label: str
    dfdy: Callable | None = field(default=None, repr=False)
    l1: L1DriverSpec | None = None
    params: tuple = ()

    def __call__(self, t, y, z):
        y = np.asarray(y, dtype=float)
        return np.asarray(self.func(t, y, as_z(y, z)), dtype=float)

    def eval(self, t, y, z):
        return self(t, y, z)

    def partial_y(self, t, y, z, h=1e-7):
        y = np.asarray(y, dtype=float)
        if self.dfdy is not None:
            return np.asarray(self.dfdy(t, y, as_z(y, z)), dtype=float) * np.ones_like(y)
        step = h * (1.0 + np.abs(y))
        return (self(t, y + step, z) - self(t, y - step, z)) / (2 * step)

    def negated(self) -> "Driver":
        """``-f(t, -y, -z)``, the driver of ``-Y`` with terminal ``-xi``."""
        f, d = self.func, self.dfdy
        dneg = None if d is None else (lambda t, y, z: d(t, -y, -z))
        return Driver(lambda t, y, z: -f(t, -y, -z), self.envelope, f"neg({self.label})", dneg,
                      self.l1, self.params)

    @property
    def gamma(self) -> float:
        return self.envelope.gamma


# ---------------------------------------------------------------------------
# diagnostics

@dataclass
class GrowthReport:
    max_violation: float
    witnesses: list
    n_samples: int
    tol: float = ENVELOPE_TOL

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tol)


def _sample_box(rng, samples, box):
    box = {"t": (0.0, 1.0), "y": (-10.0, 10.0), "z": (-10.0, 10.0), "d": 1, **(box or {})}
    d = int(box["d"])
    t = rng.uniform(*box["t"], samples)
    y = rng.uniform(*box["y"], samples)
    z = rng.uniform(*box["z"], (samples, d))
    return t, y, z


def validate_growth(driver: Driver, samples: int = 10_000, box=None, seed=0,
                    envelope: Envelope | None = None, n_witnesses=5) -> GrowthReport:
    """Largest sampled value of ``|f| - envelope``; nonpositive means the envelope holds.

    Non-finite driver values count as infinite violations and are reported
    among the witnesses.
    """
    if samples < 1:
        raise InvalidArgumentError("samples must be >= 1")
    env = driver.envelope if envelope is None else envelope
    rng = np.random.default_rng(seed)
    t, y, z = _sample_box(rng, samples, box)
    with np.errstate(all="ignore"):
        fv = driver(t, y, z)
        viol = np.abs(fv) - env.bound(y, z)
    viol = np.where(np.isfinite(viol), viol, np.inf)
    order = np.argsort(-viol)[:n_witnesses]
    wit = [(float(t[j]), float(y[j]), z[j].tolist(), float(fv[j]), float(viol[j])) for j in order]
    return GrowthReport(float(viol.max()), wit, samples)


@dataclass
class ClauseResult:
    passed: bool
    worst: float
    witness: tuple


@dataclass
class AssumptionReport:
    clauses: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())


def _clause(excess, scale, witnesses, tol=ENVELOPE_TOL):
    excess = np.where(np.isnan(excess), np.inf, excess)
    with np.errstate(invalid="ignore"):
        rel = np.where(excess <= 0, excess, excess / (1.0 + np.abs(scale)))
    rel = np.where(np.isnan(rel), np.inf, rel)
    j = int(np.argmax(rel))
    return ClauseResult(bool(rel[j] <= tol), float(excess[j]), tuple(w[j] for w in witnesses))


def check_assumption_A(driver: Driver, spec: L1DriverSpec, samples: int = 10_000, seed=0,
                       box=None, radii=(1.0, 10.0)) -> AssumptionReport:
    """Sample each clause of assumption (A) and the ``c(1+|y|+|z|^alpha)`` bound.

    Continuity in ``y`` is not checkable from samples and is not reported.
    """
    if samples < 1:
        raise InvalidArgumentError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    t, y, z = _sample_box(rng, samples, box)
    _, y2, z2 = _sample_box(rng, samples, box)
    g = np.array([spec.g_at(s) for s in t]) if callable(spec.g_process) else spec.g_process
    with np.errstate(all="ignore"):
        f_yz = driver(t, y, z)
        f_y2z = driver(t, y2, z)
        f_yz2 = driver(t, y, z2)
        f_y0 = driver(t, y, np.zeros_like(z))
        out = {}
        dy = y - y2
        lhs = dy * (f_yz - f_y2z)
        out["monotonicity"] = _clause(lhs - spec.mu * dy * dy, np.abs(lhs) + np.abs(spec.mu) * dy * dy,
                                      (t, y, y2))
        dz = np.sqrt(zsq(z - z2))
        diff = np.abs(f_yz - f_yz2)
        out["z_lipschitz"] = _clause(diff - spec.lam * dz, diff, (t, y, dz))
        hold = spec.delta * (g + np.abs(y) + np.sqrt(zsq(z))) ** spec.alpha_exp
        dd = np.abs(f_yz - f_y0)
        out["holder_z"] = _clause(dd - hold, dd, (t, y, np.sqrt(zsq(z))))
        f00 = driver(t, np.zeros_like(y), np.zeros_like(z))
        psi = []
        for r in radii:
            yy = rng.uniform(-r, r, samples)
            psi.append(float(np.max(np.abs(driver(t, yy, np.zeros_like(z)) - f00))))
        psi = np.array(psi)
        out["psi_r_finite"] = ClauseResult(bool(np.all(np.isfinite(psi))), float(np.max(psi)),
                                           tuple(radii))
        env = spec.c * (1 + np.abs(y) + np.sqrt(zsq(z)) ** spec.alpha_exp)
        out["growth_H4"] = _clause(np.abs(f_yz) - env, np.abs(f_yz), (t, y, np.sqrt(zsq(z))))
    return AssumptionReport(out)


# ---------------------------------------------------------------------------
# catalog

def pure_quadratic(gamma=1.0) -> Driver:
    g = float(gamma)
    return Driver(lambda t, y, z: 0.5 * g * zsq(z) + 0.0 * y, QuadraticEnvelope(0.0, 0.0, g),
                  "pure_quadratic", lambda t, y, z: 0.0, params=(("gamma", g),))


def linear(beta=1.0, gamma=1.0) -> Driver:
    b = float(beta)
    env = normalize_envelope(QuadraticEnvelope(0.0, abs(b), float(gamma)))
    return Driver(lambda t, y, z: b * y, env, "linear", lambda t, y, z: b,
                  L1DriverSpec(mu=b, lam=0.0, delta=0.0, c=abs(b)),
                  params=(("beta", b), ("gamma", float(gamma))))


def zero(gamma=1.0) -> Driver:
    return Driver(lambda t, y, z: np.zeros(np.shape(y)), QuadraticEnvelope(0.0, 0.0, float(gamma)),
                  "zero", lambda t, y, z: 0.0, L1DriverSpec(), params=(("gamma", float(gamma)),))


def bounded_quadratic(alpha=1.0, gamma=1.0) -> Driver:
    a, g = float(alpha), float(gamma)
    return Driver(lambda t, y, z: a + 0.5 * g * zsq(z) + 0.0 * y, QuadraticEnvelope(a, 0.0, g),
                  "bounded_quadratic", lambda t, y, z: 0.0, params=(("alpha", a), ("gamma", g)))


def _holder_quadratic_envelope(c):
    # c|z|^a <= c + c|z|^2 for a in (0, 1)
    return normalize_envelope(QuadraticEnvelope(2 * c, c, max(2 * c, 1e-300)))


def l1_holder(c=1.0, alpha=0.5) -> Driver:
    """``c (1 + |y| + |z|^alpha)``."""
    c, a = float(c), float(alpha)
    spec = L1DriverSpec(mu=c, lam=math.inf, delta=c, alpha_exp=a, c=c)
    return Driver(lambda t, y, z: c * (1 + np.abs(y) + zsq(z) ** (a / 2)),
                  _holder_quadratic_envelope(c), "l1_holder", lambda t, y, z: c * np.sign(y),
                  spec, (("c", c), ("alpha", a)))


def holder_z(c=1.0, alpha=0.5) -> Driver:
    """``c |z|^alpha``."""
    c, a = float(c), float(alpha)
    spec = L1DriverSpec(mu=0.0, lam=math.inf, delta=c, alpha_exp=a, c=c)
    return Driver(lambda t, y, z: c * zsq(z) ** (a / 2) + 0.0 * y, _holder_quadratic_envelope(c),
                  "holder_z", lambda t, y, z: 0.0, spec, (("c", c), ("alpha", a)))


def l1_dominating(c=1.0, alpha=0.5) -> Driver:
    """``2c (1 + |y| + min(|z|^alpha, |z|))``: Lipschitz and satisfies (A)."""
    c, a = float(c), float(alpha)
    spec = L1DriverSpec(mu=2 * c, lam=2 * c, delta=2 * c, alpha_exp=a, c=2 * c)

    def f(t, y, z):
        nz = np.sqrt(zsq(z))
        return 2 * c * (1 + np.abs(y) + np.minimum(nz ** a, nz))

    return Driver(f, _holder_quadratic_envelope(2 * c), "l1_dominating",
                  lambda t, y, z: 2 * c * np.sign(y), spec, (("c", c), ("alpha", a)))


def log_growth_h(alpha=1.0):
    """``h(y) = alpha (y + e) ln(y + e)`` and its derivative."""
    a = float(alpha)
    h = lambda u: a * (np.asarray(u) + math.e) * np.log(np.asarray(u) + math.e)
    dh = lambda u: a * (np.log(np.asarray(u) + math.e) + 1.0)
    return h, dh


def superlinear_log(alpha=1.0, gamma=1.0) -> Driver:
    """``h(|y|) + (gamma/2)|z|^2`` with ``h(y) = alpha (y+e) ln(y+e)``."""
    h, dh = log_growth_h(alpha)
    g = float(gamma)
    env = SuperlinearEnvelope.from_h(h, dh, g, label=f"{alpha:g}(y+e)ln(y+e)")
    return Driver(lambda t, y, z: h(np.abs(y)) + 0.5 * g * zsq(z), env, "superlinear_log",
                  lambda t, y, z: np.sign(y) * dh(np.abs(y)),
                  params=(("alpha", float(alpha)), ("gamma", g)))


_CATALOG = {
    "pure_quadratic": pure_quadratic,
    "linear": linear,
    "zero": zero,
    "bounded_quadratic": bounded_quadratic,
    "l1_holder": l1_holder,
    "holder_z": holder_z,
    "l1_dominating": l1_dominating,
    "superlinear_log": superlinear_log,
}


def canonical_drivers():
    """Name to factory mapping of the built-in drivers."""
    return dict(_CATALOG)


def get_driver(name: str, **params) -> Driver:
    if name not in _CATALOG:
        raise UnknownLabelError(f"unknown driver {name!r}; known: {sorted(_CATALOG)}")
    return _CATALOG[name](**params)
