"""
Experiment orchestration and deterministic artifact output.

Each experiment returns a summary dict and a set of named CSV tables.
``emit_report`` writes them with every float rendered to 17 significant
digits, so equal inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels as K
from .config import (ConfigError, Scenario, build_domain, build_field, build_history, build_kernel,
                     build_nonlinearity)
from .diagnostics import (CSV_COLUMNS, EnergyRecorder, absorbing_radius, default_sigma, energy,
                          fit_decay)
from .equilibria import default_seeds, multi_start, stationarity_check
from .history import CFLViolation, HistoryState
from .integrator import (SolverError, StepConfig, SystemState, default_dt, evolve, linear_step, step,
                         step_sizes)
from .nonlinearity import Nonlinearity, decompose
from .spectral import DomainSpec, SpectralField, grid_project, random_field

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_STRICT = 0, 2, 3, 4


@dataclass
class RunContext:
    scenario: Scenario
    domain: DomainSpec
    kernel: K.MemoryKernel
    nl: Nonlinearity
    h: SpectralField
    cfg: StepConfig
    z0: SystemState
    theta: float | None
    seed: int


@dataclass
class RunResult:
    exit_code: int
    summary: dict
    tables: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


def prepare(sc: Scenario, seed: int | None = None) -> RunContext:
    """Build every numerical object of a scenario; the seed only drives random initial data."""
    seed = sc.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    try:
        dom = build_domain(sc)
        kernel = build_kernel(sc)
        nl = build_nonlinearity(sc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    h = build_field(sc.forcing, dom, rng)
    u0 = build_field(sc.initial.u0, dom, rng)
    v0 = build_field(sc.initial.v0, dom, rng)
    if sc.initial.perturbation:
        u0 = u0 + random_field(dom, rng, sc.initial.perturbation)
    dt = sc.step.dt if sc.step.dt is not None else default_dt(dom)
    cfg = StepConfig(dt, sc.rho, sc.step.tol, sc.step.max_iter, sc.step.scheme, sc.step.inner_tol,
                     sc.step.max_inner)
    eta0 = build_history(sc, kernel, dom, dt, u0)
    theta: float | None
    if kernel.total_mass == 0:
        theta = 0.0
    else:
        try:
            theta = K.certify_theta(kernel)
        except K.CertificationFailure:
            theta = None
    z0 = SystemState(0.0, u0, v0, eta0, dom.zeros())
    return RunContext(sc, dom, kernel, nl, h, cfg, z0, theta, seed)


def _recorder(ctx: RunContext) -> EnergyRecorder:
    a = ctx.scenario.analysis
    return EnergyRecorder(ctx.nl, ctx.h, ctx.cfg.rho, theta=ctx.theta, sigma=a.sigma, eps=a.eps,
                          delta=a.delta, kappa=ctx.kernel.total_mass, every=ctx.scenario.output.energy_every)


def _energy_table(rec: EnergyRecorder):
    return list(CSV_COLUMNS), [r.row() for r in rec.reports]


def _common(ctx: RunContext) -> dict:
    sc = ctx.scenario
    return {
        "name": sc.name,
        "experiment": sc.experiment,
        "seed": ctx.seed,
        "dt": ctx.cfg.dt,
        "rho": ctx.cfg.rho,
        "kappa": ctx.kernel.total_mass,
        "theta": ctx.theta,
    }


def _monitor_summary(rec: EnergyRecorder) -> tuple[dict, dict]:
    log = rec.log
    values = {
        "max_lyapunov_increase": log.lyapunov_increase,
        "max_t_dissipation": log.t_sign,
        "max_psi_excess": log.psi_bound,
        "max_sandwich_excess": log.sandwich,
        "max_psi_rate_excess": log.psi_rate,
        "max_dissipation_residual": log.max_residual,
    }
    checks = log.passed()
    if rec.theta is None:
        checks.pop("psi_bound")
        checks.pop("lambda_sandwich")
    return values, checks


def _try_fit(t, E, window, plateau=True):
    # too few recorded rows to fit counts as a failed check, not a crash
    try:
        return fit_decay(t, E, window, fit_plateau=plateau)
    except ValueError:
        return None


def run_evolution(ctx: RunContext) -> RunResult:
    sc = ctx.scenario
    rec = _recorder(ctx)
    res = evolve(ctx.z0, sc.horizon, ctx.cfg, ctx.nl, ctx.h, [rec])
    zT = res.final
    summary = _common(ctx)
    values, checks = _monitor_summary(rec)
    E = np.array([r.E for r in rec.reports])
    t = np.array([r.t for r in rec.reports])
    summary.update(values)
    summary.update({
        "steps": res.steps,
        "final_time": zT.t,
        "E_initial": float(E[0]),
        "E_final": float(E[-1]),
        "v_plus_eta_final": zT.v.norm(1) + math.sqrt(max(zT.eta.norm_sq(), 0.0)),
    })
    if sc.experiment == "decay_study":
        fit = _try_fit(t, E, sc.analysis.fit_window, plateau=False) if E[0] > 0 else None
        summary.update({"omega_fit": fit.omega if fit else None, "R_inf": fit.plateau if fit else None,
                        "E_ratio": float(E[-1] / E[0]) if E[0] > 0 else 0.0})
        checks["decay_rate_positive"] = E[0] == 0 or (fit is not None and fit.omega > 0)
    if sc.experiment == "absorbing_study":
        R0 = absorbing_radius(ctx.nl, ctx.h)
        tail = E[int(math.floor((1 - sc.analysis.fit_window) * E.size)):]
        fit = _try_fit(t, E, sc.analysis.fit_window)
        summary.update({"R0": R0, "tail_limsup_E": float(tail.max()), "R_inf": fit.plateau if fit else None,
                        "omega_fit": fit.omega if fit else None})
        checks["plateau_bound"] = float(tail.max()) <= (1 + sc.analysis.plateau_slack) * R0
    summary["checks"] = checks
    tables = {"energy": _energy_table(rec)}
    out = RunResult(EXIT_OK, summary, tables)
    if sc.output.snapshots:
        out.tables["final_state"] = _state_table(zT)
    return out


def _state_table(z: SystemState):
    cols = ["component", "index", "value"]
    rows = []
    for name, arr in (("u", z.u.coeffs), ("v", z.v.coeffs), ("eta", z.eta.data)):
        for i, x in enumerate(np.asarray(arr).ravel()):
            rows.append((name, i, float(x)))
    return cols, rows


def _finite_difference(fn, eps=1e-6):
    return lambda s: (fn(np.asarray(s) + eps) - fn(np.asarray(s) - eps)) / (2 * eps)


def run_splitting(ctx: RunContext) -> RunResult:
    """Full system alongside the decaying branch (f0, h = 0) and the remainder branch."""
    sc = ctx.scenario
    if ctx.cfg.rho >= 4:
        raise ConfigError("the splitting experiment needs rho < 4")
    dom = ctx.domain
    dec = decompose(ctx.nl, dom.lambda1, sc.analysis.beta, sc.analysis.k)
    nl0 = Nonlinearity(dec.f0, dec.F0, _finite_difference(dec.f0), nu=ctx.nl.nu, m_f=0.0,
                       rho=ctx.nl.rho, name="f0")
    zero_h = dom.zeros()
    sigma = default_sigma(ctx.cfg.rho) if sc.analysis.sigma is None else sc.analysis.sigma
    z = zv = ctx.z0
    zw = SystemState(0.0, dom.zeros(), dom.zeros(), ctx.z0.eta.zeros_like(), dom.zeros())
    every = sc.output.energy_every

    def row(z, zv, zw):
        du = z.u - zv.u - zw.u
        dv = z.v - zv.v - zw.v
        deta = z.eta - zv.eta - zw.eta
        gap = math.sqrt(du.norm(1) ** 2 + dv.norm(1) ** 2 + max(deta.norm_sq(), 0.0))
        return (z.t, energy(z), energy(zv), energy(zw, sigma), gap)

    rows = [row(z, zv, zw)]
    max_gap = 0.0
    sizes = step_sizes(sc.horizon, ctx.cfg.dt)
    for n, dt in enumerate(sizes, start=1):
        z1, iu = step(z, ctx.cfg, ctx.nl, ctx.h, dt=dt, return_info=True)
        zv1, iv = step(zv, ctx.cfg, nl0, zero_h, dt=dt, return_info=True)
        g = (ctx.h.coeffs - grid_project(dom, dec.f0(iu.u_mid_grid)) + iv.f_mid
             - grid_project(dom, dec.f1(iu.u_mid_grid)))
        zw1, _ = linear_step(zw, ctx.cfg, g - (iu.inertia - iv.inertia), dt=dt)
        z, zv, zw = z1, zv1, zw1
        r = row(z, zv, zw)
        max_gap = max(max_gap, r[4])
        if not all(math.isfinite(x) for x in r):
            raise SolverError(f"non-finite splitting state at step {n}")
        if n % every == 0 or n == len(sizes):
            rows.append(r)
    t = np.array([r[0] for r in rows])
    Ev = np.array([r[2] for r in rows])
    Ew = np.array([r[3] for r in rows])
    fit = _try_fit(t, Ev, sc.analysis.fit_window, plateau=False) if Ev[0] > 0 else None
    summary = _common(ctx)
    summary.update({
        "k": dec.k, "beta": dec.beta, "alpha": dec.alpha, "sigma": sigma,
        "steps": len(sizes),
        "max_sum_residual": max_gap,
        "omega_vhat": fit.omega if fit else None,
        "max_E_what_sigma": float(Ew.max()),
    })
    summary["checks"] = {
        "sum_identity": max_gap < 1e-8,
        "vhat_decay": Ev[0] == 0 or (fit is not None and fit.omega > 0),
        "what_energy_finite": bool(np.all(np.isfinite(Ew))),
    }
    cols = ["t", "E", "E_vhat", "E_what_sigma", "sum_residual"]
    return RunResult(EXIT_OK, summary, {"splitting": (cols, rows)})


def run_equilibria(ctx: RunContext) -> RunResult:
    sc = ctx.scenario
    rng = np.random.default_rng(ctx.seed)
    seeds = [ctx.z0.u] + default_seeds(ctx.domain, rng, random_count=sc.analysis.random_seeds)
    tol = sc.analysis.equilibrium_tol
    S = multi_start(seeds, ctx.nl, ctx.h, tol)
    cfg = StepConfig(ctx.cfg.dt, ctx.cfg.rho, max(ctx.cfg.tol, tol * 1e-2), ctx.cfg.max_iter,
                     ctx.cfg.scheme, ctx.cfg.inner_tol, ctx.cfg.max_inner)
    reports = [stationarity_check(e, ctx.nl, ctx.h, ctx.z0.eta, cfg) for e in S]
    summary = _common(ctx)
    summary["equilibria"] = [
        {"index": i, "norm_1": e.u_star.norm(1), "residual": e.residual, "basin_tag": e.basin_tag,
         "drift": r.drift, "lyapunov_change": r.lyapunov_change, "stationary": r.passed}
        for i, (e, r) in enumerate(zip(S, reports))]
    summary["count"] = len(S)
    summary["checks"] = {"all_stationary": all(r.passed for r in reports) and bool(S)}
    cols = ["equilibrium", "index", "coefficient"]
    rows = [(i, j, float(x)) for i, e in enumerate(S) for j, x in enumerate(e.u_star.coeffs.ravel())]
    return RunResult(EXIT_OK, summary, {"equilibria": (cols, rows)})


def run_kernel_certify(ctx: RunContext) -> RunResult:
    mu = ctx.kernel
    summary = _common(ctx)
    if mu.total_mass == 0:
        summary.update({"theta": 0.0, "note": "zero kernel, nothing to certify"})
        summary["checks"] = {"equivalence_agrees": True}
        return RunResult(EXIT_OK, summary)
    deltas = ctx.scenario.analysis.nece_deltas
    rep = K.cross_check_equivalence(mu, deltas)
    summary.update({
        "theta": rep.theta,
        "theta_witness": rep.theta_witness,
        "nece": [{"delta": d, "C": c} for d, c in rep.nece],
        "theta_ok": rep.theta_ok,
        "nece_ok": rep.nece_ok,
    })
    summary["checks"] = {"equivalence_agrees": rep.agree}
    return RunResult(EXIT_OK, summary)


EXPERIMENT_RUNNERS = {
    "evolve": run_evolution,
    "decay_study": run_evolution,
    "absorbing_study": run_evolution,
    "splitting": run_splitting,
    "equilibria": run_equilibria,
    "kernel_certify": run_kernel_certify,
}


def run_scenario(sc: Scenario, out_dir=None, strict: bool = False, seed: int | None = None,
                 experiment: str | None = None) -> RunResult:
    """Execute one scenario and, if ``out_dir`` is given, write its artifacts.

    Exit code 3 signals a solver failure, 4 a failed check in strict mode.
    """
    kind = experiment or sc.experiment
    try:
        ctx = prepare(sc, seed)
        ctx.scenario = _with_experiment(sc, kind)
        result = EXPERIMENT_RUNNERS[kind](ctx)
    except (SolverError, CFLViolation, FloatingPointError, np.linalg.LinAlgError) as exc:
        result = RunResult(EXIT_SOLVER, {"name": sc.name, "experiment": kind, "error": str(exc)})
    else:
        checks = result.summary.get("checks", {})
        result.summary["passed"] = all(checks.values())
        if strict and not result.summary["passed"]:
            result.exit_code = EXIT_STRICT
    result.summary["strict"] = strict
    if out_dir is not None:
        result.files = emit_report(result, out_dir)
    return result


def _with_experiment(sc: Scenario, kind: str) -> Scenario:
    if kind == sc.experiment:
        return sc
    return replace(sc, experiment=kind)


# serialization


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt(x) if math.isfinite(x) else f'"{fmt(x)}"'
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + _json(str(k)) + ": " + _json(v, indent + 1) for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def summary_json(summary: dict) -> str:
    return _json(summary) + "\n"


def table_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


def emit_report(result: RunResult, out_dir) -> list[str]:
    """Write ``<table>.csv`` per table and ``summary.json``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (cols, rows) in sorted(result.tables.items()):
        path = out / f"{name}.csv"
        path.write_text(table_csv(cols, rows), encoding="utf-8")
        written.append(str(path))
    path = out / "summary.json"
    path.write_text(summary_json(result.summary), encoding="utf-8")
    written.append(str(path))
    return written
