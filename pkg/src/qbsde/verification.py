"""Pass/fail checks of comparison, sandwich, monotone-limit and norm properties.

Every check compares cells ``(m, i)`` of solutions on one path ensemble and
flags a cell only when the inequality fails by more than a few batch standard
errors.  A report passes when the flagged fraction is at most its threshold.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .drivers import Driver, QuadraticEnvelope
from .exceptions import InvalidArgumentError
from .phi import BoundsProfile, F_scale, eval_F, eval_H, log_phi_linear
from .solver import (BsdeSolution, TruncationFamily, difference_errors, difference_se_at,
                     terminal_continuity_stat)


@dataclass
class CheckReport:
    check: str
    scenario: str
    violation_rate: float
    threshold: float
    worst: tuple = (None, None, 0.0)  # (path, step, magnitude)
    tolerance: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.violation_rate <= 1:
            raise InvalidArgumentError("violation_rate must lie in [0, 1]")

    @property
    def passed(self) -> bool:
        return bool(self.violation_rate <= self.threshold)

    def row(self):
        return (self.check, self.scenario, self.violation_rate, self.threshold, self.passed)


def _worst(excess):
    k = int(np.argmax(excess))
    m, i = np.unravel_index(k, excess.shape)
    return (int(m), int(i), float(excess[m, i]))


def _same_ensemble(a: BsdeSolution, b: BsdeSolution):
    if a.Y.shape != b.Y.shape or a.grid.num_steps != b.grid.num_steps \
            or a.grid.horizon != b.grid.horizon:
        raise InvalidArgumentError("solutions live on different grids or ensembles")
    if a.fingerprint != b.fingerprint:
        raise InvalidArgumentError("solutions do not share common random numbers")


def check_comparison(sol: BsdeSolution, sol_prime: BsdeSolution, tol: float = 0.0, n_se: float = 3.0,
                     threshold: float = 0.01, scenario: str = "") -> CheckReport:
    """Fraction of cells with ``Y > Y' + eps``, ``eps = tol + n_se * SE(Y - Y')``."""
    _same_ensemble(sol, sol_prime)
    eps = tol + n_se * difference_errors(sol, sol_prime)
    excess = sol.Y - sol_prime.Y - eps
    bad = excess > 0
    return CheckReport("comparison", scenario, float(np.mean(bad)), threshold, _worst(excess),
                       f"{tol:g} + {n_se:g} SE", {"mean_gap": float(np.mean(sol_prime.Y - sol.Y))})


def check_sandwich(sol: BsdeSolution, bounds: BoundsProfile, n_se: float = 3.0,
                   threshold: float = 0.01, scenario: str = "", bounds_se=None) -> CheckReport:
    """Two-sided violation rate of ``lower - eps <= Y <= upper + eps`` before maturity."""
    if bounds.lower.shape != sol.Y.shape:
        raise InvalidArgumentError("bounds do not match the solution")
    if sol.metadata.get("clip_to_bounds"):
        raise InvalidArgumentError("sandwich check needs a solution computed without clipping")
    se = np.zeros(sol.Y.shape) if sol.se is None else sol.se
    bse = 0.0 if bounds_se is None else bounds_se
    eps = n_se * np.sqrt(se ** 2 + np.asarray(bse) ** 2)
    excess = np.maximum(sol.Y - bounds.upper, bounds.lower - sol.Y) - eps
    excess = excess[:, :-1]
    bad = excess > 0
    per_step = bad.mean(axis=0)
    return CheckReport("sandwich", scenario, float(np.mean(bad)), threshold, _worst(excess),
                       f"{n_se:g} SE", {"per_step": per_step.tolist(),
                                       "above_upper": float(np.mean((sol.Y - bounds.upper - eps)[:, :-1] > 0)),
                                       "below_lower": float(np.mean((bounds.lower - sol.Y - eps)[:, :-1] > 0))})


def _adjacent_pairs(keys):
    ns = sorted({k[0] for k in keys})
    ps = sorted({k[1] for k in keys})
    pairs = []
    # (smaller, larger) in the claimed order
    for p in ps:
        for a, b in zip(ns[:-1], ns[1:]):
            if (a, p) in keys and (b, p) in keys:
                pairs.append(((a, p), (b, p)))
    for n in ns:
        for a, b in zip(ps[:-1], ps[1:]):
            if (n, a) in keys and (n, b) in keys:
                pairs.append(((n, b), (n, a)))
    return pairs


def check_monotone_family(family: TruncationFamily, n_se: float = 2.0, threshold: float = 0.01,
                          steps=None, scenario: str = "") -> CheckReport:
    """Ordering ``Y^{n,p+1} <= Y^{n,p} <= Y^{n+1,p}`` at ``t = 0`` and two interior times.

    At ``t = 0`` the compared quantity is ``Y_0`` with the batch standard
    error of the difference; at interior times every path is a cell.
    """
    sols = family.solutions
    fps = {s.fingerprint for s in sols.values()}
    if len(fps) != 1 or fps != {family.fingerprint}:
        raise InvalidArgumentError("family was not built on common random numbers")
    keys = set(sols)
    pairs = _adjacent_pairs(keys)
    any_sol = next(iter(sols.values()))
    N = any_sol.grid.num_steps
    steps = (0, N // 3, 2 * N // 3) if steps is None else tuple(steps)
    bad_total, cells, worst = 0, 0, (None, None, -np.inf)
    per_time = {}
    for i in steps:
        bad_i, cells_i = 0, 0
        for lo_key, hi_key in pairs:
            lo, hi = sols[lo_key], sols[hi_key]
            if i == 0:
                gap = lo.Y0 - hi.Y0 - n_se * difference_se_at(lo, hi, 0)
                b = int(gap > 0)
                bad_i += b * lo.num_paths
                cells_i += lo.num_paths
                if gap > worst[2]:
                    worst = (None, 0, float(gap))
            else:
                eps = n_se * difference_errors(lo, hi)[:, i]
                gap = lo.Y[:, i] - hi.Y[:, i] - eps
                bad_i += int(np.sum(gap > 0))
                cells_i += gap.size
                k = int(np.argmax(gap))
                if gap[k] > worst[2]:
                    worst = (k, i, float(gap[k]))
        per_time[i] = bad_i / max(cells_i, 1)
        bad_total += bad_i
        cells += cells_i
    rate = bad_total / max(cells, 1)
    y0 = {f"{k[0]},{k[1]}": s.Y0 for k, s in sorted(sols.items())}
    return CheckReport("monotone_family", scenario, float(rate), threshold, worst, f"{n_se:g} SE",
                       {"per_time": per_time, "Y0": y0, "pairs": [(a, b) for a, b in pairs]})


# ---------------------------------------------------------------------------
# norms and class (D)

@dataclass
class ClassDReport:
    passed: bool
    level: float
    worst_ratio: float
    num_times: int


@dataclass
class NormReport:
    S: dict
    M: dict
    class_d: ClassDReport

    def relative_change(self, other: "NormReport") -> dict:
        out = {}
        for name, a, b in [("S", self.S, other.S), ("M", self.M, other.M)]:
            for k in a:
                den = max(abs(a[k]), abs(b[k]), 1e-300)
                out[f"{name}{k:g}"] = abs(a[k] - b[k]) / den if math.isfinite(den) else math.inf
        return out


def _norm(sample, beta):
    val = float(np.mean(sample))
    if not math.isfinite(val):
        warnings.warn(f"moment of order {beta} looks infinite", RuntimeWarning)
        return math.inf
    return val ** min(1.0, 1.0 / beta)


def class_d_proxy(Y, num_times=20, seed=0, extra_taus=(), share=0.05):
    """Uniform-integrability proxy over random grid stopping times.

    ``Y`` has shape ``(M, N+1)``.  Each random time draws an independent
    uniform grid index per path; ``extra_taus`` adds given index arrays.  The
    proxy passes if for some level ``L`` on a quantile ladder every time has
    ``E[|Y_tau|; |Y_tau| > L] <= share * E|Y_tau|``.
    """
    M, N1 = Y.shape
    rng = np.random.default_rng(seed)
    taus = [rng.integers(0, N1, M) for _ in range(num_times)] + [np.asarray(t) for t in extra_taus]
    rows = np.arange(M)
    vals = np.stack([np.abs(Y[rows, t]) for t in taus])
    means = vals.mean(axis=1)
    ladder = np.quantile(vals, [0.5, 0.75, 0.9, 0.95, 0.975, 0.99, 0.995])
    best_ratio, best_L = math.inf, math.nan
    for L in ladder:
        tail = np.where(vals > L, vals, 0.0).mean(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(means > 0, tail / means, 0.0)
        r = float(np.max(ratio))
        if r < best_ratio:
            best_ratio, best_L = r, float(L)
        if r <= share:
            return ClassDReport(True, float(L), r, len(taus))
    return ClassDReport(False, best_L, best_ratio, len(taus))


def estimate_norms(sol: BsdeSolution, betas=(0.5, 1.0), seed=0, extra_taus=()) -> NormReport:
    """``E[sup|Y|^b]^{min(1,1/b)}``, ``E[(sum|Z|^2 dt)^{b/2}]^{min(1,1/b)}`` and the class-(D) proxy."""
    for b in betas:
        if not b > 0:
            raise InvalidArgumentError("norm exponents must be positive")
    supY = np.max(np.abs(sol.Y), axis=1)
    qv = np.sum(np.sum(sol.Z ** 2, axis=2), axis=1) * sol.grid.dt
    with np.errstate(over="ignore"):
        S = {b: _norm(supY ** b, b) for b in betas}
        Mn = {b: _norm(qv ** (b / 2), b) for b in betas}
    return NormReport(S, Mn, class_d_proxy(sol.Y, seed=seed, extra_taus=extra_taus))


def check_norm_stability(small: NormReport, large: NormReport, rtol=0.05, scenario="") -> CheckReport:
    """Norm estimates at ``M`` and ``2M`` agree within ``rtol`` and are finite."""
    ch = small.relative_change(large)
    bad = [k for k, v in ch.items() if not v <= rtol]
    finite = all(math.isfinite(v) for d in (small.S, small.M, large.S, large.M) for v in d.values())
    rate = len(bad) / max(len(ch), 1) if finite else 1.0
    return CheckReport("norm_stability", scenario, rate, 0.0, (None, None, max(ch.values(), default=0.0)),
                       f"rtol {rtol:g}", {"relative_change": ch})


def check_terminal_continuity(solutions, n_se: float = 2.0, scenario: str = "") -> CheckReport:
    """``mean |Y_{N-1} - Y_N|`` must decrease along solutions ordered by ``N``."""
    sols = sorted(solutions, key=lambda s: s.grid.num_steps)
    stats = []
    for s in sols:
        gap = np.abs(s.Y[:, -2] - s.Y[:, -1])
        stats.append((s.grid.num_steps, float(np.mean(gap)), float(np.std(gap) / math.sqrt(gap.size)),
                      float(np.max(gap))))
    bad = 0
    for (_, m1, s1, _), (_, m2, s2, _) in zip(stats[:-1], stats[1:]):
        if m2 > m1 + n_se * math.hypot(s1, s2):
            bad += 1
    rate = bad / max(len(stats) - 1, 1)
    return CheckReport("terminal_continuity", scenario, rate, 0.0, (None, None, stats[-1][1]),
                       f"{n_se:g} SE", {"stats": stats})


def check_localization(full: BsdeSolution, localized: BsdeSolution, schedule, n_se: float = 3.0,
                       scenario: str = "") -> CheckReport:
    """``|Y_0^loc - Y_0|`` against ``2 E[max_i |Y_i| ; tau_k < T] + n_se SE``."""
    _same_ensemble(full, localized)
    crossed = np.asarray(schedule.tau) < full.grid.num_steps
    mass = 2.0 * float(np.mean(np.max(np.abs(full.Y), axis=1) * crossed))
    bound = mass + n_se * full.Y0_se
    diff = abs(localized.Y0 - full.Y0)
    return CheckReport("localization", scenario, float(diff > bound), 0.0, (None, 0, diff - bound),
                       "tail mass + SE", {"difference": diff, "bound": bound,
                                          "stopped_fraction": float(np.mean(crossed))})


# ---------------------------------------------------------------------------
# deterministic inequalities

def _rate(excess, scale, tol):
    bad = excess > tol * (1.0 + np.abs(scale))
    return float(np.mean(bad)), float(np.max(excess)) if excess.size else 0.0


def check_triv(driver: Driver, samples=10_000, seed=0, tol=1e-12, p_range=(-2.0, 50.0),
               q_range=(-20.0, 20.0), s_range=(0.0, 1.0)) -> CheckReport:
    """``F(s,p,q) <= H(p)`` on random ``(s,p,q)``."""
    rng = np.random.default_rng(seed)
    d = 1
    s = rng.uniform(*s_range, samples)
    p = np.exp(rng.uniform(-8, math.log(p_range[1]), samples))
    p[: samples // 10] = rng.uniform(p_range[0], 0, samples // 10)
    q = rng.uniform(*q_range, (samples, d))
    env = driver.envelope
    if isinstance(env, QuadraticEnvelope) and not env.is_normalized:
        raise InvalidArgumentError("triv check needs a normalized envelope")
    F = eval_F(s, p, q, driver)
    Hp = eval_H(np.maximum(p, 0.0), env) if isinstance(p, np.ndarray) else eval_H(p, env)
    excess = F - Hp
    scale = F_scale(s, p, q, driver) + np.abs(Hp)
    rate, worst = _rate(excess, scale, tol)
    return CheckReport("triv", driver.label, rate, 0.0, (None, None, worst), f"{tol:g} relative")


def check_H_properties(env, samples=10_000, seed=0, tol=1e-12) -> list:
    """Convexity by secants and the dominance ``p(alpha gamma + beta |ln p|) <= H(p)``."""
    rng = np.random.default_rng(seed)
    a = np.exp(rng.uniform(-6, 6, samples))
    b = np.exp(rng.uniform(-6, 6, samples))
    lam = rng.uniform(0, 1, samples)
    mid = lam * a + (1 - lam) * b
    Ha, Hb, Hm = eval_H(a, env), eval_H(b, env), eval_H(mid, env)
    chord = lam * Ha + (1 - lam) * Hb
    rc, wc = _rate(Hm - chord, np.abs(Ha) + np.abs(Hb), tol)
    out = [CheckReport("H_convexity", _env_label(env), rc, 0.0, (None, None, wc), f"{tol:g} relative")]
    if isinstance(env, QuadraticEnvelope):
        p = np.exp(rng.uniform(-8, 8, samples))
        dom = p * (env.alpha * env.gamma + env.beta * np.abs(np.log(p)))
        Hp = eval_H(p, env)
        rd, wd = _rate(dom - Hp, Hp, tol)
        out.append(CheckReport("H_dominance", _env_label(env), rd, 0.0, (None, None, wd),
                               f"{tol:g} relative"))
    return out


def check_phi_monotone(env: QuadraticEnvelope, T=1.0, samples=10_000, seed=0, tol=1e-12) -> list:
    """``t -> phi_t(z)`` nonincreasing and ``z -> phi_t(z)`` nondecreasing (log scale)."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(-10, 10, samples)
    t1 = rng.uniform(0, T, samples)
    t2 = rng.uniform(0, T, samples)
    lo_t, hi_t = np.minimum(t1, t2), np.maximum(t1, t2)
    a = log_phi_linear(lo_t, z, env, T)
    b = log_phi_linear(hi_t, z, env, T)
    rt, wt = _rate(b - a, np.abs(a) + np.abs(b), tol)
    z2 = rng.uniform(-10, 10, samples)
    zl, zh = np.minimum(z, z2), np.maximum(z, z2)
    c = log_phi_linear(t1, zl, env, T)
    e = log_phi_linear(t1, zh, env, T)
    rz, wz = _rate(c - e, np.abs(c) + np.abs(e), tol)
    lab = _env_label(env)
    return [CheckReport("phi_monotone_t", lab, rt, 0.0, (None, None, wt), f"{tol:g} relative"),
            CheckReport("phi_monotone_z", lab, rz, 0.0, (None, None, wz), f"{tol:g} relative")]


def _env_label(env):
    if isinstance(env, QuadraticEnvelope):
        return f"alpha={env.alpha:g},beta={env.beta:g},gamma={env.gamma:g}"
    return f"h={env.label},gamma={env.gamma:g}"


def continuity_summary(sol: BsdeSolution):
    mx, mean = terminal_continuity_stat(sol)
    return {"N": sol.grid.num_steps, "max": mx, "mean": mean, "reference": math.sqrt(2 * sol.grid.dt / math.pi)}
