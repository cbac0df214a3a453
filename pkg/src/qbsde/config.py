"""Experiment configuration: ``configparser`` sections resolved into typed objects.

Example::

    [scenario]
    name = cole_hopf_flagship
    checks = oracle, sandwich, energy

    [grid]
    T = 1.0
    N = 50

    [ensemble]
    M = 100000
    d = 1
    seed = 20261014

    [driver]
    name = pure_quadratic
    gamma = 1.0

    [terminal]
    name = identity

Keys other than ``name`` in ``[driver]`` and ``[terminal]`` are passed to the
catalog factories as floats.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .drivers import QuadraticEnvelope, get_driver, normalize_envelope
from .exceptions import ConfigError, InvalidArgumentError, UnknownLabelError
from .oracles import get_terminal
from .regression import RegressionSpec
from .solver import SolverConfig

KNOWN_CHECKS = ("oracle", "sandwich", "energy", "monotone", "comparison", "continuity",
                "norms", "l1", "localization")


@dataclass
class RunConfig:
    scenario: str
    T: float
    N: int
    M: int
    d: int
    seed: int
    driver_name: str
    driver_params: dict
    terminal_name: str
    terminal_params: dict
    envelope: object = None
    n_list: tuple = (1, 2, 4, 8)
    p_list: tuple = (math.inf,)
    monotone_steps: tuple | None = None
    solver: SolverConfig = SolverConfig()
    checks: tuple = ()
    comparison_terminal: str | None = None
    comparison_params: dict = field(default_factory=dict)
    localization_level: float = 2.0
    bounds_mode: str = "quadrature"
    export_paths: int = 1000
    output_dir: str = "artifacts"
    raw: str = ""

    def driver(self):
        return get_driver(self.driver_name, **self.driver_params)

    def terminal(self):
        return get_terminal(self.terminal_name, **self.terminal_params)


def _floats(section, skip=("name",)):
    out = {}
    for k, v in section.items():
        if k in skip:
            continue
        try:
            out[k] = float(v)
        except ValueError as exc:
            raise ConfigError(f"parameter {k} = {v!r} is not a number") from exc
    return out


def _levels(text):
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        vals.append(math.inf if tok in ("inf", "none") else float(tok))
    return tuple(vals)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration; raises :class:`ConfigError`."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    for sec in ("grid", "ensemble", "driver", "terminal"):
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")
    try:
        sc = cp["scenario"] if cp.has_section("scenario") else {}
        name = sc.get("name", "custom")
        checks = tuple(c.strip() for c in sc.get("checks", "").split(",") if c.strip())
        for c in checks:
            if c not in KNOWN_CHECKS:
                raise ConfigError(f"unknown check {c!r}; known: {', '.join(KNOWN_CHECKS)}")
        T = float(cp["grid"].get("T", "1.0"))
        N = int(cp["grid"].get("N", "50"))
        M = int(cp["ensemble"].get("M", "10000"))
        d = int(cp["ensemble"].get("d", "1"))
        seed = int(cp["ensemble"].get("seed", "0"))
        drv = cp["driver"]
        ter = cp["terminal"]
        if "name" not in drv or "name" not in ter:
            raise ConfigError("[driver] and [terminal] need a name")
        dparams = _floats(drv)
        tparams = _floats(ter)
        if "gamma" in dparams and not dparams["gamma"] > 0:
            raise ConfigError(f"gamma must be positive, got {dparams['gamma']}")
        if T <= 0 or N < 1 or M < 1 or d < 1:
            raise ConfigError("need T > 0 and N, M, d >= 1")
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        sv = cp["solver"] if cp.has_section("solver") else {}
        cap = sv.get("z_cap", "none").strip()
        reg = RegressionSpec(degree=int(sv.get("degree", "4")), ridge=float(sv.get("ridge", "1e-8")),
                             basis=sv.get("basis", "hermite").strip(),
                             n_knots=int(sv.get("n_knots", "12")),
                             payoff_features=_bool(sv.get("payoff_features", "false")))
        solver = SolverConfig(regression=reg, step_mode=sv.get("step_mode", "implicit").strip(),
                              newton_tol=float(sv.get("newton_tol", "1e-12")),
                              newton_max_iter=int(sv.get("newton_max_iter", "50")),
                              clip_to_bounds=_bool(sv.get("clip_to_bounds", "true")),
                              z_cap=None if cap == "none" else ("auto" if cap == "auto" else float(cap)),
                              batches=int(sv.get("batches", "20")))
        tr = cp["truncation"] if cp.has_section("truncation") else {}
        n_list = _levels(tr.get("n", "1,2,4,8"))
        p_list = _levels(tr.get("p", "inf"))
        steps = tr.get("steps", "auto").strip()
        mono_steps = None if steps == "auto" else tuple(int(v) for v in steps.split(","))
        env = None
        if cp.has_section("envelope"):
            e = cp["envelope"]
            env = normalize_envelope(QuadraticEnvelope(float(e.get("alpha", "0")),
                                                       float(e.get("beta", "0")),
                                                       float(e.get("gamma", "1"))))
        cmp_sec = cp["comparison"] if cp.has_section("comparison") else {}
        loc = cp["localization"] if cp.has_section("localization") else {}
        out = cp["output"] if cp.has_section("output") else {}
        rc = RunConfig(
            scenario=name, T=T, N=N, M=M, d=d, seed=seed,
            driver_name=drv["name"].strip(), driver_params=dparams,
            terminal_name=ter["name"].strip(), terminal_params=tparams,
            envelope=env, n_list=n_list, p_list=p_list, monotone_steps=mono_steps,
            solver=solver, checks=checks,
            comparison_terminal=cmp_sec.get("terminal", None),
            comparison_params=_floats(cmp_sec, skip=("terminal",)) if cmp_sec else {},
            localization_level=float(loc.get("k", "2.0")),
            bounds_mode=sc.get("bounds_mode", "quadrature").strip() if sc else "quadrature",
            export_paths=int(out.get("export_paths", "1000")),
            output_dir=out.get("dir", "artifacts"),
            raw=text,
        )
        rc.driver()
        rc.terminal()
        if rc.comparison_terminal:
            get_terminal(rc.comparison_terminal, **rc.comparison_params)
    except (UnknownLabelError, InvalidArgumentError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return rc


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        if p.suffix == "" and str(path) in BUILTIN_SCENARIOS:
            return parse_config(BUILTIN_SCENARIOS[str(path)])
        raise ConfigError(f"config file {path} not found")
    return parse_config(p.read_text())


BUILTIN_SCENARIOS = {
    "zero": """
[scenario]
name = zero
checks = oracle, sandwich, energy

[grid]
T = 1.0
N = 10

[ensemble]
M = 2000
d = 1
seed = 1

[driver]
name = zero

[terminal]
name = zero

[solver]
clip_to_bounds = false
""",
    "cole_hopf_flagship": """
[scenario]
name = cole_hopf_flagship
checks = oracle, sandwich, energy

[grid]
T = 1.0
N = 50

[ensemble]
M = 100000
d = 1
seed = 20261014

[driver]
name = pure_quadratic
gamma = 1.0

[terminal]
name = identity

[solver]
degree = 4
clip_to_bounds = false
""",
}
