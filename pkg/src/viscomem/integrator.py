"""
Time stepping for

    |v|^rho v' + A v' + A v + A u + int mu A eta + f(u) = h,   u' = v,
    eta' = -d/ds eta + v.

The implicit-midpoint step solves for w = v_{n+1} - v_n with

    c(v_n, v_{n+1}) w / dt + A w / dt + A v_mid + A u_mid + M_mid + P f(u_mid) = h,

where M_mid is the step-averaged memory force (affine in v_mid) and c is the
secant coefficient 2 (G(v1) - G(v0)) / (v1^2 - v0^2), G(v) = |v|^{rho+2}/(rho+2),
which equals |v|^rho when v0 = v1. With this choice the inertia part of the
Lyapunov functional changes by exactly <c w, v_mid>. The coefficient and f are
frozen inside a fixed-point loop; each frozen problem is symmetric positive
definite and is solved by preconditioned conjugate gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .history import HistoryState
from .nonlinearity import Nonlinearity
from .spectral import DomainSpec, SpectralField, grid_project, grid_values

SCHEMES = ("implicit-midpoint", "semi-implicit-theta")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SystemState:
    t: float
    u: SpectralField
    v: SpectralField
    eta: HistoryState
    a: SpectralField | None = None

    def __post_init__(self):
        dom = self.u.domain
        if self.v.domain != dom or self.eta.domain != dom or (self.a is not None and self.a.domain != dom):
            raise ValueError("state components live on different domains")

    @property
    def domain(self) -> DomainSpec:
        return self.u.domain

    def phase_norm_sq(self, r: float = 0.0) -> float:
        return self.u.norm(1 + r) ** 2 + self.v.norm(1 + r) ** 2 + self.eta.norm_sq(r)


def rest_state(u: SpectralField, eta: HistoryState, t: float = 0.0) -> SystemState:
    zero = u.domain.zeros()
    return SystemState(t, u, zero, eta.zeros_like(), zero)


@dataclass(frozen=True)
class StepConfig:
    dt: float
    rho: float = 0.0
    tol: float = 1e-12
    max_iter: int = 100
    scheme: str = "implicit-midpoint"
    inner_tol: float = 1e-13
    max_inner: int = 500

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tol > 0 or not self.inner_tol > 0:
            raise ValueError("tolerances must be positive")
        if not 0 <= self.rho <= 4:
            raise ValueError(f"rho must lie in [0, 4], got {self.rho}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")


def default_dt(domain: DomainSpec, cap: float = 0.1) -> float:
    """Largest dt with dt * max_k sqrt(lam_k / (1 + lam_k)) <= cap."""
    lam = domain.lam
    return cap / float(np.sqrt(lam / (1 + lam)).max())


def inertia_coefficient(rho: float, v: np.ndarray) -> np.ndarray:
    """|v|^rho pointwise, with 0^rho = 0 for rho > 0 and the constant 1 for rho = 0."""
    if rho == 0:
        return np.ones_like(v)
    return np.abs(v) ** rho


def secant_coefficient(rho: float, v0: np.ndarray, v1: np.ndarray) -> np.ndarray:
    """2 (G(v1) - G(v0)) / (v1^2 - v0^2) with G(v) = |v|^{rho+2}/(rho+2)."""
    if rho == 0:
        return np.ones_like(v0)
    a, b = v0 * v0, v1 * v1
    p = 0.5 * (rho + 2)
    m = 0.5 * (a + b)
    gap = b - a
    close = np.abs(gap) <= 1e-6 * m
    with np.errstate(divide="ignore", invalid="ignore"):
        sec = (b**p - a**p) / np.where(close, 1.0, gap)
    # second-order expansion around the mean when the secant is ill-conditioned
    near = p * m ** (p - 1) * (1 + (p - 1) * (p - 2) * (gap / np.where(m > 0, m, 1.0)) ** 2 / 24)
    out = np.where(close, near, sec)
    return np.where(m == 0, 0.0, out) * (2.0 / (rho + 2))


class MassOperator:
    """w -> P[c w] + s * lam * w on coefficient arrays; c >= 0 on the grid."""

    def __init__(self, domain: DomainSpec, c_grid: np.ndarray | None, shift: float):
        self.domain = domain
        self.c = c_grid
        self.shift = shift
        self.n = int(np.prod(domain.shape))

    @property
    def is_diagonal(self) -> bool:
        return self.c is None or bool(np.all(self.c == self.c.flat[0]))

    def diagonal(self) -> np.ndarray:
        base = 0.0 if self.c is None else float(self.c.flat[0])
        return base + self.shift * self.domain.lam

    def apply(self, w: np.ndarray) -> np.ndarray:
        out = self.shift * self.domain.lam * w
        if self.c is not None:
            out = out + grid_project(self.domain, self.c * grid_values(self.domain, w))
        return out

    def solve(self, rhs: np.ndarray, tol: float, maxiter: int) -> np.ndarray:
        if self.is_diagonal:
            return rhs / self.diagonal()
        shape = self.domain.shape
        op = LinearOperator((self.n, self.n), matvec=lambda x: self.apply(x.reshape(shape)).ravel(),
                            dtype=float)
        precond_diag = self.shift * self.domain.lam + float(np.mean(self.c))
        M = LinearOperator((self.n, self.n), matvec=lambda x: x / precond_diag.ravel(), dtype=float)
        b = rhs.ravel()
        if not np.any(b):
            return np.zeros(shape)
        x, info = cg(op, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info != 0:
            resid = np.linalg.norm(op.matvec(x) - b) / np.linalg.norm(b)
            if resid > 10 * tol:
                raise SolverError(f"conjugate gradients stalled, relative residual {resid:.3e}")
        return x.reshape(shape)


def nonlinear_force(nl: Nonlinearity, u_grid: np.ndarray, domain: DomainSpec) -> np.ndarray:
    return grid_project(domain, nl.f(u_grid))


def acceleration_solve(u: SpectralField, v: SpectralField, eta: HistoryState, nl: Nonlinearity,
                       h: SpectralField, rho: float, tol: float = 1e-13, maxiter: int = 500) -> SpectralField:
    """Solve (|v|^rho + A) a = h - f(u) - A v - A u - memory force."""
    dom = u.domain
    lam = dom.lam
    rhs = (h.coeffs - nonlinear_force(nl, u.grid(), dom) - lam * (v.coeffs + u.coeffs)
           - eta.memory_force().coeffs)
    op = MassOperator(dom, inertia_coefficient(rho, v.grid()), 1.0)
    return SpectralField(dom, op.solve(rhs, tol, maxiter))


@dataclass(frozen=True, eq=False)
class StepInfo:
    """Quantities of the accepted step: inertia term c w / dt, midpoint values, iteration count."""

    inertia: np.ndarray
    u_mid_grid: np.ndarray
    v_mid: np.ndarray
    f_mid: np.ndarray
    iterations: int


def _step_core(z: SystemState, dt: float, cfg: StepConfig, f_grid: Callable | None,
               h: np.ndarray, rho: float | None) -> tuple[SystemState, StepInfo]:
    """One step; ``rho=None`` drops the |v|^rho term, ``f_grid=None`` drops f."""
    dom = z.domain
    lam = dom.lam
    u0, v0 = z.u.coeffs, z.v.coeffs
    const, gain = z.eta.midpoint_force(v0, dt)
    shift = 1 + 0.5 * dt * (1 + gain) + 0.25 * dt * dt
    base = h - const - lam * ((1 + gain) * v0 + u0 + 0.5 * dt * v0)
    v0_grid = grid_values(dom, v0)
    implicit = cfg.scheme == "implicit-midpoint"

    def frozen(w):
        u_mid = u0 + 0.5 * dt * v0 + 0.25 * dt * w
        u_mid_grid = grid_values(dom, u_mid)
        f_mid = np.zeros(dom.shape) if f_grid is None else grid_project(dom, f_grid(u_mid_grid))
        if rho is None:
            c = None
        elif implicit:
            c = secant_coefficient(rho, v0_grid, v0_grid + grid_values(dom, w))
        else:
            c = inertia_coefficient(rho, v0_grid)
        return c, u_mid_grid, f_mid

    w = np.zeros(dom.shape)
    relax = 1.0
    prev_inc = math.inf
    it = 0
    while True:
        it += 1
        c, u_mid_grid, f_mid = frozen(w)
        op = MassOperator(dom, c, shift)
        w_new = op.solve(dt * (base - f_mid), cfg.inner_tol, cfg.max_inner)
        inc = float(np.linalg.norm(w_new - w))
        done = not implicit or inc <= cfg.tol * (1 + float(np.linalg.norm(w_new)))
        if done:
            w = w_new
            break
        if inc >= prev_inc:
            relax = 0.5
        prev_inc = inc
        w = w + relax * (w_new - w)
        if it >= cfg.max_iter:
            raise SolverError(f"fixed-point iteration did not converge in {cfg.max_iter} iterations "
                              f"(last increment {inc:.3e})")
    inertia = (np.zeros(dom.shape) if c is None
               else grid_project(dom, c * grid_values(dom, w)) / dt)
    v1 = v0 + w
    v_mid = v0 + 0.5 * w
    u1 = u0 + dt * v_mid
    eta1 = z.eta.advance(v1, dt, v_old=v0)
    new = SystemState(z.t + dt, SpectralField(dom, u1), SpectralField(dom, v1), eta1,
                      SpectralField(dom, w / dt))
    return new, StepInfo(inertia, u_mid_grid, v_mid, f_mid, it)


def step(z: SystemState, cfg: StepConfig, nl: Nonlinearity, h: SpectralField,
         dt: float | None = None, return_info: bool = False):
    """Advance one step of size ``dt`` (default ``cfg.dt``)."""
    dt = cfg.dt if dt is None else dt
    new, info = _step_core(z, dt, cfg, nl.f, h.coeffs, cfg.rho)
    return (new, info) if return_info else new


def linear_step(z: SystemState, cfg: StepConfig, forcing: np.ndarray, dt: float | None = None):
    """Step of the memory system without inertia coefficient and without f, driven by ``forcing``."""
    dt = cfg.dt if dt is None else dt
    return _step_core(z, dt, cfg, None, forcing, None)


Observer = Callable[[int, SystemState, SystemState | None, StepInfo | None], None]


@dataclass
class EvolveResult:
    final: SystemState
    steps: int
    observers: Sequence[Observer] = ()


def step_sizes(T: float, dt: float) -> list[float]:
    """Uniform steps covering [0, T]; the last one is shortened if dt does not divide T."""
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    if T == 0:
        return []
    n = int(round(T / dt))
    if n >= 1 and abs(n * dt - T) <= 1e-9 * T:
        return [dt] * n
    n = int(math.ceil(T / dt))
    return [dt] * (n - 1) + [T - (n - 1) * dt]


def evolve(z0: SystemState, T: float, cfg: StepConfig, nl: Nonlinearity, h: SpectralField,
           observers: Iterable[Observer] = (), stride: int = 1) -> EvolveResult:
    """Iterate ``step`` over [t0, t0 + T].

    Observers are called as obs(n, z_n, z_prev, info) at n = 0, every ``stride``
    steps, and at the final step.
    """
    if not T >= 0:
        raise ValueError("horizon must be nonnegative")
    observers = list(observers)
    for obs in observers:
        obs(0, z0, None, None)
    z = z0
    sizes = step_sizes(T, cfg.dt)
    for n, dt in enumerate(sizes, start=1):
        prev = z
        z, info = step(prev, cfg, nl, h, dt=dt, return_info=True)
        if not np.all(np.isfinite(z.u.coeffs)) or not np.all(np.isfinite(z.v.coeffs)):
            raise SolverError(f"non-finite state at step {n}")
        if n % stride == 0 or n == len(sizes):
            for obs in observers:
                obs(n, z, prev, info)
    return EvolveResult(z, len(sizes), observers)


def dense_mass_matrix(domain: DomainSpec, c_grid: np.ndarray, shift: float = 1.0) -> np.ndarray:
    """Assembled P[c .] + shift * A on the coefficient space (small domains only)."""
    n = int(np.prod(domain.shape))
    op = MassOperator(domain, c_grid, shift)
    cols = [op.apply(e.reshape(domain.shape)).ravel() for e in np.eye(n)]
    return np.array(cols).T
