"""
Scenario files: YAML with nested sections, strict keys, and a canonical dump.

Every section maps onto a dataclass; keys not declared there are rejected.
``dump_scenario`` writes all fields including defaults, so parsing its output
gives back an equal Scenario.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, get_type_hints

import numpy as np
import yaml

from . import kernels as K
from . import nonlinearity as NL
from .history import (ExpModes, HistoryState, constant_profile, make_history, saturating_profile,
                      with_profile)
from .spectral import DomainSpec, SpectralField, modes_field, random_field

EXPERIMENTS = ("evolve", "decay_study", "absorbing_study", "splitting", "equilibria", "kernel_certify")


class ConfigError(ValueError):
    pass


@dataclass
class DomainCfg:
    dimension: int = 1
    edge_lengths: list = field(default_factory=lambda: [math.pi])
    modes_per_axis: list = field(default_factory=lambda: [32])
    pad: int = 2


KERNEL_KEYS = {
    "zero": set(),
    "prony": {"terms"},
    "piecewise_constant": {"breakpoints", "values"},
    "geometric_steps": {"ratio", "width"},
    "tabulated": {"function", "s_min", "s_max", "points", "tail_kind", "tail_param", "origin_exponent"},
}

TABULATED_FUNCTIONS = {
    "inverse_square": lambda s: 1.0 / (1.0 + s) ** 2,
    "exp": lambda s: np.exp(-s),
    "stretched_exp": lambda s: np.exp(-np.sqrt(s)),
    "singular_exp": lambda s: s ** -0.5 * np.exp(-s),
}


@dataclass
class KernelCfg:
    type: str = "prony"
    terms: list | None = None
    breakpoints: list | None = None
    values: list | None = None
    ratio: float | None = None
    width: float | None = None
    function: str | None = None
    s_min: float | None = None
    s_max: float | None = None
    points: int | None = None
    tail_kind: str | None = None
    tail_param: float | None = None
    origin_exponent: float | None = None


@dataclass
class NonlinearityCfg:
    name: str | None = "cubic"
    coefficients: list | None = None
    nu: float = 1.0
    m_f: float = 0.0


@dataclass
class FieldCfg:
    type: str = "zero"
    entries: list | None = None
    amplitude: float | None = None
    decay: float | None = None


@dataclass
class HistoryInitCfg:
    type: str = "zero"
    rate: float | None = None


@dataclass
class InitialCfg:
    u0: FieldCfg = field(default_factory=FieldCfg)
    v0: FieldCfg = field(default_factory=FieldCfg)
    eta0: HistoryInitCfg = field(default_factory=HistoryInitCfg)
    perturbation: float = 0.0


@dataclass
class StepCfg:
    dt: float | None = None
    tol: float = 1e-12
    max_iter: int = 100
    scheme: str = "implicit-midpoint"
    inner_tol: float = 1e-13
    max_inner: int = 500
    history: str = "auto"
    sgrid_growth: float = 1.02


@dataclass
class OutputCfg:
    energy_every: int = 1
    snapshots: bool = False


@dataclass
class AnalysisCfg:
    fit_window: float = 1.0 / 3.0
    sigma: float | None = None
    eps: float | None = None
    delta: float | None = None
    beta: float | None = None
    k: float | None = None
    random_seeds: int = 4
    equilibrium_tol: float = 1e-10
    plateau_slack: float = 0.1
    nece_deltas: list | None = None


@dataclass
class Scenario:
    name: str = "scenario"
    experiment: str = "evolve"
    seed: int = 0
    rho: float = 0.0
    horizon: float = 1.0
    domain: DomainCfg = field(default_factory=DomainCfg)
    kernel: KernelCfg = field(default_factory=KernelCfg)
    nonlinearity: NonlinearityCfg = field(default_factory=NonlinearityCfg)
    forcing: FieldCfg = field(default_factory=FieldCfg)
    initial: InitialCfg = field(default_factory=InitialCfg)
    step: StepCfg = field(default_factory=StepCfg)
    output: OutputCfg = field(default_factory=OutputCfg)
    analysis: AnalysisCfg = field(default_factory=AnalysisCfg)

    def __post_init__(self):
        validate(self)


def _build(cls, data: Any, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'top level'}: expected a mapping, got {type(data).__name__}")
    hints = get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'top level'}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {}
    for name, value in data.items():
        sub = hints[name]
        where = f"{path}.{name}" if path else name
        if is_dataclass(sub):
            kwargs[name] = _build(sub, value, where)
        else:
            kwargs[name] = _coerce(sub, value, where)
    if cls is NonlinearityCfg and "coefficients" in data and "name" not in data:
        kwargs["name"] = None
    if cls is Scenario:
        return _scenario(kwargs)
    return cls(**kwargs)


def _scenario(kwargs):
    try:
        return Scenario(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _coerce(hint, value, where):
    text = str(hint)
    optional = "None" in text
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{where}: value required")
    if text.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if text.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if text.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if text.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if text.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return _plain(value)
    return value


def _plain(x):
    if isinstance(x, list):
        return [_plain(v) for v in x]
    if isinstance(x, bool):
        return x
    if isinstance(x, int):
        return x
    if isinstance(x, float):
        return x
    raise ConfigError(f"unsupported list element {x!r}")


def validate(sc: Scenario) -> None:
    if sc.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {sc.experiment!r}")
    if not 0 <= sc.rho <= 4:
        raise ConfigError(f"rho must lie in [0, 4], got {sc.rho}")
    if not sc.horizon > 0:
        raise ConfigError("horizon must be positive")
    if sc.seed < 0 or sc.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    k = sc.kernel
    if k.type not in KERNEL_KEYS:
        raise ConfigError(f"kernel.type must be one of {sorted(KERNEL_KEYS)}")
    for name in KERNEL_KEYS:
        for key in KERNEL_KEYS[name] - KERNEL_KEYS[k.type]:
            if getattr(k, key) is not None:
                raise ConfigError(f"kernel.{key} is not a parameter of a {k.type} kernel")
    if sc.nonlinearity.name is not None and sc.nonlinearity.coefficients is not None:
        raise ConfigError("give either nonlinearity.name or nonlinearity.coefficients, not both")
    if sc.nonlinearity.name is None and sc.nonlinearity.coefficients is None:
        raise ConfigError("nonlinearity needs a name or a coefficient list")
    if sc.nonlinearity.name is not None and sc.nonlinearity.name not in NL.BUILTINS:
        raise ConfigError(f"unknown nonlinearity {sc.nonlinearity.name!r}; built-ins: {sorted(NL.BUILTINS)}")
    for where, fc in (("forcing", sc.forcing), ("initial.u0", sc.initial.u0), ("initial.v0", sc.initial.v0)):
        if fc.type not in ("zero", "modes", "random"):
            raise ConfigError(f"{where}.type must be zero, modes or random")
        if fc.type == "modes" and not fc.entries:
            raise ConfigError(f"{where}: modes field needs entries")
    if sc.initial.eta0.type not in ("zero", "volterra", "past"):
        raise ConfigError("initial.eta0.type must be zero, volterra or past")
    if sc.step.history not in ("auto", "exp_modes", "sgrid"):
        raise ConfigError("step.history must be auto, exp_modes or sgrid")
    if sc.step.dt is not None and not sc.step.dt > 0:
        raise ConfigError("step.dt must be positive")
    if sc.output.energy_every < 1:
        raise ConfigError("output.energy_every must be >= 1")
    if not 0 < sc.analysis.fit_window <= 1:
        raise ConfigError("analysis.fit_window must lie in (0, 1]")
    try:
        build_domain(sc)
        build_nonlinearity(sc)
        build_kernel(sc)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_scenario(text: str) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax error: {exc}") from exc
    return _build(Scenario, data, "")


def load_scenario(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_scenario(text)


def scenario_dict(sc: Scenario) -> dict:
    return asdict(sc)


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_dict(sc), sort_keys=False, default_flow_style=None)


# builders


def build_domain(sc: Scenario) -> DomainSpec:
    d = sc.domain
    return DomainSpec(d.dimension, tuple(d.edge_lengths), tuple(d.modes_per_axis), d.pad)


def build_kernel(sc: Scenario) -> K.MemoryKernel:
    k = sc.kernel
    if k.type == "zero":
        return K.zero_kernel()
    if k.type == "prony":
        terms = k.terms or []
        if any(not isinstance(t, list) or len(t) != 2 for t in terms):
            raise ConfigError("kernel.terms must be a list of [weight, rate] pairs")
        return K.PronySum(tuple((t[0], t[1]) for t in terms))
    if k.type == "piecewise_constant":
        if k.breakpoints is None or k.values is None:
            raise ConfigError("piecewise_constant kernel needs breakpoints and values")
        return K.PiecewiseConstant(np.array(k.breakpoints, float), np.array(k.values, float))
    if k.type == "geometric_steps":
        return K.GeometricSteps(ratio=0.5 if k.ratio is None else k.ratio,
                                width=1.0 if k.width is None else k.width)
    fn = TABULATED_FUNCTIONS.get(k.function or "")
    if fn is None:
        raise ConfigError(f"kernel.function must be one of {sorted(TABULATED_FUNCTIONS)}")
    return K.tabulate(fn, 1e-6 if k.s_min is None else k.s_min, 1e3 if k.s_max is None else k.s_max,
                      2000 if k.points is None else k.points, k.tail_kind or "power",
                      k.tail_param,
                      0.0 if k.origin_exponent is None else k.origin_exponent)


def build_nonlinearity(sc: Scenario) -> NL.Nonlinearity:
    c = sc.nonlinearity
    extra = dict(nu=c.nu, m_f=c.m_f, rho=sc.rho)
    if c.name is not None:
        return NL.BUILTINS[c.name](**extra)
    return NL.Nonlinearity.polynomial(c.coefficients, **extra)


def build_field(fc: FieldCfg, domain: DomainSpec, rng: np.random.Generator) -> SpectralField:
    if fc.type == "zero":
        return domain.zeros()
    if fc.type == "modes":
        return modes_field(domain, fc.entries)
    return random_field(domain, rng, 1.0 if fc.amplitude is None else fc.amplitude,
                        2.0 if fc.decay is None else fc.decay)


def build_history(sc: Scenario, kernel: K.MemoryKernel, domain: DomainSpec, dt: float,
                  u0: SpectralField) -> HistoryState:
    eta = make_history(kernel, domain, dt, sc.step.history, growth=sc.step.sgrid_growth)
    kind = sc.initial.eta0.type
    if kind == "zero" or (isinstance(eta, ExpModes) and eta.weights.size == 0):
        return eta
    profile = constant_profile() if kind == "volterra" else saturating_profile(
        1.0 if sc.initial.eta0.rate is None else sc.initial.eta0.rate)
    return with_profile(eta, profile, u0.coeffs)
