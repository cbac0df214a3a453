"""Gaussian quadrature and closed-form BSDE values used as ground truth.

Two cases have an exact answer in terms of a Gaussian integral when the
terminal value is ``g(B_T)`` in one dimension:

* the pure quadratic driver ``f = (gamma/2)|z|^2``, where ``P = exp(gamma Y)``
  is a martingale, so ``Y_t = (1/gamma) log E[exp(gamma g(B_T)) | B_t]``;
* the linear driver ``f = beta y``, where ``Y_t = exp(beta (T-t)) E[g(B_T) | B_t]``.

Smooth integrands use Gauss--Hermite nodes.  Terminal functions with kinks
(``|x|``, truncations, positive parts) declare them, and the integral is then
split at the kinks and done by composite Gauss--Legendre, which restores
spectral accuracy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp, roots_hermitenorm

from .exceptions import IntegrabilityError, InvalidArgumentError, UnknownLabelError

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for ``E[fn(G)]`` with ``G`` standard normal."""

    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.nodes.shape[0]


def gauss_hermite(n: int = 200) -> QuadratureRule:
    x, w = roots_hermitenorm(int(n))
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w)


@dataclass(frozen=True)
class PiecewiseRule:
    """Composite Gauss--Legendre on ``[-half_width, half_width]`` in standard units.

    Panel edges are the uniform ones plus any kinks, so the integrand is
    smooth on every panel.
    """

    half_width: float = 40.0
    panels: int = 80
    order: int = 16

    def doubled(self) -> "PiecewiseRule":
        return PiecewiseRule(self.half_width, self.panels, 2 * self.order)

    def widened(self) -> "PiecewiseRule":
        """Same panel width over a 1.5x wider range; exposes tail divergence."""
        return PiecewiseRule(1.5 * self.half_width, int(1.5 * self.panels), self.order)


DEFAULT_RULE = gauss_hermite(200)
DEFAULT_PIECEWISE = PiecewiseRule()


def gaussian_expectation(fn, mean=0.0, variance=1.0, rule: QuadratureRule | None = None,
                         kinks=None, log=False, piecewise: PiecewiseRule = DEFAULT_PIECEWISE):
    """``E[fn(mean + sqrt(variance) G)]`` for ``G ~ N(0, 1)``.

    Parameters
    ----------
    fn : callable
        Vectorised scalar function.  With ``log=True`` it returns the
        logarithm of the integrand and the result is the log of the
        expectation, which avoids overflow for exponential integrands.
    mean : float or array
        Broadcast over; the result has the shape of ``mean``.
    kinks : sequence of float, optional
        Points (in the same units as ``mean``) where ``fn`` is not smooth.
    """
    if variance < 0:
        raise InvalidArgumentError(f"variance must be nonnegative, got {variance}")
    mean = np.asarray(mean, dtype=float)
    shape = mean.shape
    mu = mean.reshape(-1)
    if variance == 0:
        out = np.asarray(fn(mu), dtype=float)
        return out.reshape(shape)
    sd = np.sqrt(variance)
    kinks = np.asarray([] if kinks is None else kinks, dtype=float)
    if kinks.size == 0:
        rule = DEFAULT_RULE if rule is None else rule
        x = mu[:, None] + sd * rule.nodes[None, :]
        vals = np.asarray(fn(x), dtype=float)
        if log:
            with np.errstate(divide="ignore"):
                logw = np.log(rule.weights)
            out = logsumexp(vals + logw[None, :], axis=1)
        else:
            out = vals @ rule.weights
        return out.reshape(shape)

    L = piecewise.half_width
    base = np.linspace(-L, L, piecewise.panels + 1)
    ku = np.clip((kinks[None, :] - mu[:, None]) / sd, -L, L)
    edges = np.sort(np.concatenate([np.broadcast_to(base, (mu.size, base.size)), ku], axis=1), axis=1)
    a, b = edges[:, :-1], edges[:, 1:]
    gx, gw = np.polynomial.legendre.leggauss(piecewise.order)
    half = 0.5 * (b - a)
    u = (0.5 * (a + b))[..., None] + half[..., None] * gx
    with np.errstate(divide="ignore"):
        logw = np.log(half)[..., None] + np.log(gw) - 0.5 * u * u - _LOG_SQRT_2PI
    x = mu[:, None, None] + sd * u
    vals = np.asarray(fn(x), dtype=float)
    if log:
        out = logsumexp((vals + logw).reshape(mu.size, -1), axis=1)
    else:
        out = (vals * np.exp(logw)).reshape(mu.size, -1).sum(axis=1)
    return out.reshape(shape)


@dataclass(frozen=True)
class TerminalFunction:
    """Terminal value ``xi = g(B_T)``.

    ``g`` receives states with a trailing dimension axis, shape ``(..., d)``.
    ``kinks`` lists, for ``d = 1``, the points where ``g`` is not smooth.
    ``exp_moment_lambda`` certifies ``E[exp(lambda |xi|)] < inf`` and
    ``l1_certificate`` certifies ``E|xi| < inf``.
    """

    g: Callable = field(repr=False)
    label: str = "custom"
    kinks: tuple = ()
    exp_moment_lambda: float | None = None
    l1_certificate: bool = False

    def __call__(self, x):
        return np.asarray(self.g(np.asarray(x, dtype=float)), dtype=float)

    def scalar(self, x):
        """Evaluate at one-dimensional states given without the trailing axis."""
        return self(np.asarray(x, dtype=float)[..., None])

    def on(self, paths):
        """Realised values on a path ensemble."""
        return self(paths.terminal)

    def zeros(self, level=0.0, lo=-60.0, hi=60.0, n=24001):
        """Points where ``g(x) = level`` in one dimension, by sign scan and Brent."""
        xs = np.linspace(lo, hi, n)
        v = self.scalar(xs) - level
        z = v == 0.0
        flat = np.zeros_like(z)
        flat[1:-1] = z[:-2] & z[2:]
        out = [float(x) for x in xs[z & ~flat]] if z.sum() < n // 100 else []
        s = np.sign(v)
        for j in np.nonzero(s[:-1] * s[1:] < 0)[0]:
            out.append(brentq(lambda x: float(self.scalar(x) - level), xs[j], xs[j + 1], xtol=1e-14))
        return tuple(sorted(set(out)))


def truncate(terminal: TerminalFunction, n: float, p: float) -> TerminalFunction:
    """``xi^{n,p} = min(xi^+, n) - min(xi^-, p)``."""
    if not (n > 0 and p > 0):
        raise InvalidArgumentError("truncation levels must be positive")
    g = terminal.g

    def gt(x):
        v = np.asarray(g(x), dtype=float)
        return np.minimum(np.maximum(v, 0.0), n) - np.minimum(np.maximum(-v, 0.0), p)

    kinks = terminal.kinks
    if np.isfinite(n):
        kinks = kinks + terminal.zeros(n)
    if np.isfinite(p):
        kinks = kinks + terminal.zeros(-p)
    bounded = np.isfinite(n) and np.isfinite(p)
    lam = np.inf if bounded else terminal.exp_moment_lambda
    return TerminalFunction(gt, f"{terminal.label}^({n:g},{p:g})", tuple(sorted(set(kinks))),
                            lam, bounded or terminal.l1_certificate)


def positive_part(terminal: TerminalFunction) -> TerminalFunction:
    g = terminal.g
    return TerminalFunction(lambda x: np.maximum(np.asarray(g(x), dtype=float), 0.0),
                            f"{terminal.label}^+", tuple(sorted(set(terminal.kinks + terminal.zeros(0.0)))),
                            terminal.exp_moment_lambda, terminal.l1_certificate)


def shifted(terminal: TerminalFunction, other: TerminalFunction, label=None) -> TerminalFunction:
    """Sum of two terminal functions of the same state."""
    g1, g2 = terminal.g, other.g
    lam = None
    if terminal.exp_moment_lambda and other.exp_moment_lambda:
        # Hoelder: E e^{l|a+b|} <= sqrt(E e^{2l|a|} E e^{2l|b|})
        lam = 0.5 * min(terminal.exp_moment_lambda, other.exp_moment_lambda)
    return TerminalFunction(lambda x: np.asarray(g1(x), dtype=float) + np.asarray(g2(x), dtype=float),
                            label or f"{terminal.label}+{other.label}",
                            tuple(sorted(set(terminal.kinks + other.kinks))), lam,
                            terminal.l1_certificate and other.l1_certificate)


def absolute(terminal: TerminalFunction) -> TerminalFunction:
    g = terminal.g
    return TerminalFunction(lambda x: np.abs(np.asarray(g(x), dtype=float)), f"|{terminal.label}|",
                            tuple(sorted(set(terminal.kinks + terminal.zeros(0.0)))),
                            terminal.exp_moment_lambda, terminal.l1_certificate)


# Every Gaussian-tailed terminal below has all exponential moments; the
# certificate value only needs to beat gamma*exp(beta*T) in the scenarios.
def _catalog():
    big = 50.0
    return {
        "zero": lambda: TerminalFunction(lambda x: np.zeros(x.shape[:-1]), "zero", (), big, True),
        "constant": lambda value=1.0: TerminalFunction(lambda x: np.full(x.shape[:-1], float(value)),
                                                       f"const({value:g})", (), big, True),
        "identity": lambda: TerminalFunction(lambda x: x[..., 0], "B_T", (), big, True),
        "abs": lambda: TerminalFunction(lambda x: np.abs(x[..., 0]), "|B_T|", (0.0,), big, True),
        "plus_abs": lambda: TerminalFunction(lambda x: x[..., 0] + np.abs(x[..., 0]), "B_T+|B_T|",
                                             (0.0,), big / 2, True),
        "positive_part": lambda: TerminalFunction(lambda x: np.maximum(x[..., 0], 0.0), "B_T^+",
                                                  (0.0,), big, True),
        # exp(lambda x^2) is integrable under N(0, T) only for lambda < 1/(2T):
        # no exponential-moment certificate, but xi is in L^1.
        "square": lambda: TerminalFunction(lambda x: x[..., 0] ** 2, "B_T^2", (), None, True),
        "norm": lambda: TerminalFunction(lambda x: np.sqrt(np.sum(x * x, axis=-1)), "|B_T|",
                                         (), big, True),
    }


def terminal_catalog():
    return dict(_catalog())


def get_terminal(name: str, **params) -> TerminalFunction:
    cat = _catalog()
    if name not in cat:
        raise UnknownLabelError(f"unknown terminal {name!r}; known: {sorted(cat)}")
    return cat[name](**params)


def _stable(value_fn, value, rtol=1e-8, what="quadrature"):
    """Raise if refining the quadrature moves the answer by more than ``rtol``."""
    refined = value_fn()
    diff = np.max(np.abs(np.asarray(refined) - np.asarray(value)) / (1.0 + np.abs(np.asarray(value))))
    if not np.isfinite(diff) or diff > rtol:
        raise IntegrabilityError(
            f"{what} changed by {diff:.3g} (relative) under node doubling; "
            "the required exponential moment is probably infinite")


def _log_exp_moment(terminal, gamma, x, s, rule, check):
    def lf(y):
        return gamma * terminal.scalar(y)

    kinks = terminal.kinks
    val = gaussian_expectation(lf, x, s * s, rule=rule, kinks=kinks, log=True)
    if check:
        if kinks:
            redo = lambda: gaussian_expectation(lf, x, s * s, kinks=kinks, log=True,
                                                piecewise=DEFAULT_PIECEWISE.doubled())
            _stable(lambda: gaussian_expectation(lf, x, s * s, kinks=kinks, log=True,
                                                 piecewise=DEFAULT_PIECEWISE.widened()),
                    val, what="exponential moment")
        else:
            n = (rule or DEFAULT_RULE).n
            redo = lambda: gaussian_expectation(lf, x, s * s, rule=gauss_hermite(2 * n), log=True)
        _stable(redo, val, what="exponential moment")
    return val


def cole_hopf_value(t, x, terminal: TerminalFunction, gamma: float, T: float,
                    rule: QuadratureRule | None = None, h: float = 1e-5, check: bool = True):
    """Exact ``(Y_t, Z_t)`` at ``B_t = x`` for the driver ``(gamma/2)|z|^2``.

    ``Z`` is the spatial derivative of ``Y`` by central differences of step ``h``.
    Raises :class:`IntegrabilityError` when ``exp(gamma xi)`` does not look
    integrable, detected through node doubling.
    """
    if gamma <= 0:
        raise InvalidArgumentError("gamma must be positive")
    if not 0 <= t <= T:
        raise InvalidArgumentError(f"t={t} outside [0, {T}]")
    x = np.asarray(x, dtype=float)
    s = np.sqrt(T - t)
    if s == 0:
        Y = terminal.scalar(x)
        Z = (terminal.scalar(x + h) - terminal.scalar(x - h)) / (2 * h)
        return Y, Z
    Y = _log_exp_moment(terminal, gamma, x, s, rule, check) / gamma
    yp = _log_exp_moment(terminal, gamma, x + h, s, rule, False) / gamma
    ym = _log_exp_moment(terminal, gamma, x - h, s, rule, False) / gamma
    return Y, (yp - ym) / (2 * h)


def cole_hopf_z_richardson(t, x, terminal, gamma, T, h=1e-2):
    """Richardson-extrapolated derivative, an independent check on ``Z``."""
    def Y(v):
        return cole_hopf_value(t, v, terminal, gamma, T, check=False)[0]

    d1 = (Y(x + h) - Y(x - h)) / (2 * h)
    d2 = (Y(x + h / 2) - Y(x - h / 2)) / h
    return (4 * d2 - d1) / 3


def linear_bsde_value(t, x, terminal: TerminalFunction, beta: float, T: float,
                      rule: QuadratureRule | None = None, check: bool = True):
    """Exact ``Y_t`` at ``B_t = x`` for the driver ``beta * y``."""
    if not 0 <= t <= T:
        raise InvalidArgumentError(f"t={t} outside [0, {T}]")
    x = np.asarray(x, dtype=float)
    s = np.sqrt(T - t)
    val = gaussian_expectation(terminal.scalar, x, s * s, rule=rule, kinks=terminal.kinks)
    if check and s > 0:
        if terminal.kinks:
            redo = lambda: gaussian_expectation(terminal.scalar, x, s * s, kinks=terminal.kinks,
                                                piecewise=DEFAULT_PIECEWISE.doubled())
        else:
            redo = lambda: gaussian_expectation(terminal.scalar, x, s * s,
                                                rule=gauss_hermite(2 * (rule or DEFAULT_RULE).n))
        _stable(redo, val, what="first moment")
    return np.exp(beta * (T - t)) * val


def cole_hopf_curve(grid, xs, terminal, gamma):
    """Rows ``(t, x, Y, Z)`` of the exact solution on ``grid.times x xs``."""
    rows = []
    for t in grid.times:
        Y, Z = cole_hopf_value(t, xs, terminal, gamma, grid.horizon)
        rows.extend(zip(np.full(len(xs), t), xs, np.atleast_1d(Y), np.atleast_1d(Z)))
    return rows
