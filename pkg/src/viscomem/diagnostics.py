"""
Energy-type functionals along discrete trajectories, the monitored
inequalities between them, and decay-rate fitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import minimize_scalar

from .integrator import StepInfo, SystemState
from .nonlinearity import Nonlinearity
from .spectral import SpectralField, integrate

CSV_COLUMNS = ("t", "E", "L", "Psi", "Phi", "Lambda_sigma", "norm_u_1s", "norm_v_1s",
               "norm_eta_Ms", "diss_residual", "T_eta_eta")


def default_sigma(rho: float) -> float:
    return min(1.0 / 3.0, (4.0 - rho) / 2.0)


def default_eps_delta(theta: float, nu: float) -> tuple[float, float]:
    eps = 0.5 / theta if theta > 0 else 0.0
    return eps, min(0.25, nu / 8.0)


def energy(z: SystemState, r: float = 0.0) -> float:
    """Half the squared phase-space norm at regularity r (E for r = 0, E_r otherwise)."""
    return 0.5 * z.phase_norm_sq(r)


def lyapunov(z: SystemState, nl: Nonlinearity, h: SpectralField, rho: float) -> float:
    dom = z.domain
    vg = z.v.grid()
    inertia = integrate(dom, np.abs(vg) ** (rho + 2)) / (rho + 2)
    return inertia + energy(z) + integrate(dom, nl.F(z.u.grid())) - z.u.inner(h)


def t_dissipation_mid(z0: SystemState, z1: SystemState) -> float:
    return 0.5 * (z0.eta.t_dissipation() + z1.eta.t_dissipation())


def dissipation_residual(z0: SystemState, z1: SystemState, dt: float, nl: Nonlinearity,
                         h: SpectralField, rho: float) -> float:
    """|dL/dt + ||v_mid||_1^2 - <T eta, eta>_mid| for one step."""
    v_mid = 0.5 * (z0.v + z1.v)
    dL = (lyapunov(z1, nl, h, rho) - lyapunov(z0, nl, h, rho)) / dt
    return abs(dL + v_mid.norm(1) ** 2 - t_dissipation_mid(z0, z1))


@dataclass(frozen=True)
class AuxFunctionals:
    Psi: float
    Phi: float
    Psi_s: float
    Phi_s: float
    Lambda_s: float
    E_s: float


def aux_functionals(z: SystemState, rho: float, sigma: float, eps: float, delta: float) -> AuxFunctionals:
    """Psi, Phi and their sigma-versions, with Lambda_s = E_s + eps Psi_s + delta Phi_s."""
    u, v = z.u, z.v
    vg = v.grid()
    inertia_cross = integrate(z.domain, np.abs(vg) ** rho * vg * u.grid()) / (rho + 1)
    psi = z.eta.psi(0.0)
    phi = 0.5 * u.norm(1) ** 2 + v.inner(u, 1) + inertia_cross
    psi_s = z.eta.psi(sigma)
    phi_s = 0.5 * u.norm(1 + sigma) ** 2 + u.inner(v, 1 + sigma)
    e_s = energy(z, sigma)
    return AuxFunctionals(psi, phi, psi_s, phi_s, e_s + eps * psi_s + delta * phi_s, e_s)


@dataclass(frozen=True)
class EnergyReport:
    t: float
    E: float
    L: float
    Psi: float
    Phi: float
    Lambda_sigma: float
    norm_u_1s: float
    norm_v_1s: float
    norm_eta_Ms: float
    diss_residual: float
    T_eta_eta: float

    def row(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


assert tuple(f.name for f in fields(EnergyReport)) == CSV_COLUMNS


def make_report(z: SystemState, nl: Nonlinearity, h: SpectralField, rho: float, sigma: float,
                eps: float, delta: float, residual: float = 0.0) -> EnergyReport:
    aux = aux_functionals(z, rho, sigma, eps, delta)
    return EnergyReport(
        t=z.t, E=energy(z), L=lyapunov(z, nl, h, rho), Psi=aux.Psi, Phi=aux.Phi,
        Lambda_sigma=aux.Lambda_s, norm_u_1s=z.u.norm(1 + sigma), norm_v_1s=z.v.norm(1 + sigma),
        norm_eta_Ms=math.sqrt(max(z.eta.norm_sq(sigma), 0.0)), diss_residual=residual,
        T_eta_eta=z.eta.t_dissipation(),
    )


@dataclass
class InequalityLog:
    """Worst observed values of the monitored inequalities (nonpositive means satisfied)."""

    lyapunov_increase: float = -math.inf
    t_sign: float = -math.inf
    psi_bound: float = -math.inf
    sandwich: float = -math.inf
    psi_rate: float = -math.inf
    max_residual: float = 0.0

    def passed(self, lyap_tol: float = 1e-8, t_tol: float = 1e-10, bound_tol: float = 1e-12) -> dict[str, bool]:
        return {
            "lyapunov_monotone": self.lyapunov_increase <= lyap_tol,
            "t_dissipation_sign": self.t_sign <= t_tol,
            "psi_bound": self.psi_bound <= bound_tol,
            "lambda_sandwich": self.sandwich <= bound_tol,
        }


class EnergyRecorder:
    """Observer collecting EnergyReport rows and the inequality log.

    Every call updates the log; rows are kept every ``every`` calls. The
    Lyapunov increase is stored relative to 1 + |L_n|, the Psi and sandwich
    margins relative to 1 + E.
    """

    def __init__(self, nl: Nonlinearity, h: SpectralField, rho: float, theta: float | None = None,
                 sigma: float | None = None, eps: float | None = None, delta: float | None = None,
                 kappa: float = 0.0, every: int = 1):
        self.nl, self.h, self.rho = nl, h, rho
        self.theta = theta
        self.kappa = kappa
        self.sigma = default_sigma(rho) if sigma is None else sigma
        e0, d0 = default_eps_delta(theta or 0.0, nl.nu)
        self.eps = e0 if eps is None else eps
        self.delta = d0 if delta is None else delta
        self.every = every
        self.reports: list[EnergyReport] = []
        self.log = InequalityLog()
        self._last: tuple[SystemState, float, float] | None = None

    def __call__(self, n: int, z: SystemState, prev: SystemState | None, info: StepInfo | None):
        L = lyapunov(z, self.nl, self.h, self.rho)
        residual = 0.0
        log = self.log
        if prev is not None:
            dt = z.t - prev.t
            cached = self._last is not None and self._last[0] is prev
            L0 = self._last[1] if cached else lyapunov(prev, self.nl, self.h, self.rho)
            log.lyapunov_increase = max(log.lyapunov_increase, (L - L0) / (1 + abs(L0)))
            v_mid = 0.5 * (z.v + prev.v)
            residual = abs((L - L0) / dt + v_mid.norm(1) ** 2 - t_dissipation_mid(prev, z))
            log.max_residual = max(log.max_residual, residual)
            if self.theta is not None:
                psi0 = self._last[2] if cached else prev.eta.psi()
                eta_mid = prev.eta.average(z.eta)
                excess = ((z.eta.psi() - psi0) / dt + 0.5 * eta_mid.norm_sq()
                          - 2 * self.theta**2 * self.kappa * v_mid.norm(1) ** 2)
                log.psi_rate = max(log.psi_rate, excess / (1 + energy(z)))
        T = z.eta.t_dissipation()
        log.t_sign = max(log.t_sign, T)
        E = energy(z)
        aux = aux_functionals(z, self.rho, self.sigma, self.eps, self.delta)
        if self.theta is not None:
            log.psi_bound = max(log.psi_bound, (aux.Psi - self.theta * z.eta.norm_sq()) / (1 + E))
            log.sandwich = max(log.sandwich, (0.5 * aux.E_s - aux.Lambda_s) / (1 + aux.E_s),
                               (aux.Lambda_s - 2 * aux.E_s) / (1 + aux.E_s))
        self._last = (z, L, aux.Psi)
        if n % self.every == 0:
            self.reports.append(EnergyReport(
                t=z.t, E=E, L=L, Psi=aux.Psi, Phi=aux.Phi, Lambda_sigma=aux.Lambda_s,
                norm_u_1s=z.u.norm(1 + self.sigma), norm_v_1s=z.v.norm(1 + self.sigma),
                norm_eta_Ms=math.sqrt(max(z.eta.norm_sq(self.sigma), 0.0)), diss_residual=residual,
                T_eta_eta=T))


@dataclass(frozen=True)
class DecayFit:
    omega: float
    plateau: float
    log_amplitude: float
    points: int


def _linfit(t, y):
    A = np.vstack([t, np.ones_like(t)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return coef, float(resid @ resid)


def fit_decay(times, values, window: float = 1.0 / 3.0, fit_plateau: bool = True,
              floor_rel: float = 1e-13) -> DecayFit:
    """Fit values ~ exp(a - omega t) + R on the last ``window`` fraction of the series.

    Points below floor_rel * max|E| carry only round-off and are dropped before
    the window is taken. With ``fit_plateau`` a positive R is fitted jointly;
    if none improves on R = 0 the plain log-linear fit is returned. A window
    flat to 1e-9 relative is reported as a plateau with omega = 0.
    """
    t = np.asarray(times, dtype=float)
    E = np.asarray(values, dtype=float)
    if t.size != E.size:
        raise ValueError("times and values differ in length")
    scale = float(np.max(np.abs(E))) if E.size else 0.0
    if scale == 0.0:
        return DecayFit(0.0, 0.0, -math.inf, 0)
    floor = floor_rel * scale
    live = E > floor
    t, E = t[live], E[live]
    start = int(math.floor((1 - window) * t.size))
    tt, ee = t[start:], E[start:]
    if tt.size < 3:
        raise ValueError("series too short for the fitting window")
    if fit_plateau and ee.max() - ee.min() <= 1e-9 * ee.max():
        return DecayFit(0.0, float(ee[-1]), -math.inf, int(tt.size))

    # log-linear fit with no plateau
    (slope, icpt), _ = _linfit(tt, np.log(ee))
    plain = DecayFit(float(-slope), 0.0, float(icpt), int(tt.size))
    if not fit_plateau:
        return plain

    # variable projection: for fixed omega, (R, A) solve a linear least-squares
    # problem in relative residuals (E - R - A exp(-omega t)) / E
    w = 1.0 / ee
    t0 = tt[0]

    def solve(omega):
        basis = np.vstack([np.ones_like(tt), np.exp(-omega * (tt - t0))]).T * w[:, None]
        coef, *_ = np.linalg.lstsq(basis, np.ones_like(tt), rcond=None)
        r = np.ones_like(tt) - basis @ coef
        return coef, float(r @ r)

    span = max(tt[-1] - tt[0], np.finfo(float).tiny)
    grid = np.logspace(-3.0, 3.0, 121) / span
    costs = [solve(om)[1] for om in grid]
    k = int(np.argmin(costs))
    lo_, hi_ = math.log(grid[max(k - 1, 0)]), math.log(grid[min(k + 1, grid.size - 1)])
    best = minimize_scalar(lambda x: solve(math.exp(x))[1], bounds=(lo_, hi_), method="bounded",
                           options={"xatol": 1e-10})
    omega = math.exp(float(best.x))
    (R, A), _ = solve(omega)
    if not (R > 0 and A > 0 and R < ee.min()):
        return plain
    return DecayFit(omega, float(R), float(math.log(A) + omega * t0), int(tt.size))


def radius_from(nu: float, M_f: float, h_norm_m1: float) -> float:
    """R0 = (4/nu)(2 M_f + ||h||_{-1}^2 / nu)."""
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    return 4.0 / nu * (2.0 * M_f + h_norm_m1**2 / nu)


def absorbing_radius(nl: Nonlinearity, h: SpectralField, nu: float | None = None) -> float:
    nu = nl.nu if nu is None else nu
    return radius_from(nu, nl.m_f * h.domain.volume, h.norm(-1))
