"""Stationary states A u + f(u) = h and convergence of trajectories towards them."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .history import HistoryState
from .integrator import StepConfig, SystemState, evolve, rest_state
from .nonlinearity import Nonlinearity
from .spectral import DomainSpec, SpectralField, grid_project, grid_values, random_field


@dataclass(frozen=True, eq=False)
class Equilibrium:
    u_star: SpectralField
    residual: float
    converged: bool = True
    basin_tag: str | None = None
    iterations: int = 0


def residual_field(u: np.ndarray, nl: Nonlinearity, h: np.ndarray, domain: DomainSpec) -> np.ndarray:
    return domain.lam * u + grid_project(domain, nl.f(grid_values(domain, u))) - h


def residual_norm(u: np.ndarray, nl: Nonlinearity, h: np.ndarray, domain: DomainSpec) -> float:
    """||A u + f(u) - h||_{-1}."""
    r = residual_field(u, nl, h, domain)
    return float(np.sqrt(np.sum(r * r / domain.lam)))


def _newton_direction(u, r, nl, domain, tol):
    shape = domain.shape
    n = r.size
    dfg = nl.df(grid_values(domain, u))
    lam = domain.lam.ravel()
    J = LinearOperator((n, n), dtype=float, matvec=lambda x: (
        domain.lam * x.reshape(shape) + grid_project(domain, dfg * grid_values(domain, x.reshape(shape)))).ravel())
    # A^{-1} is positive definite, as MINRES requires of its preconditioner
    M = LinearOperator((n, n), dtype=float, matvec=lambda x: x / lam)
    dx, _ = minres(J, -r.ravel(), M=M, rtol=tol, maxiter=10 * n)
    return dx.reshape(shape)


def solve_equilibrium(guess: SpectralField, nl: Nonlinearity, h: SpectralField, tol: float = 1e-10,
                      max_iter: int = 200, basin_tag: str | None = None) -> Equilibrium:
    """Damped Newton on the residual in the H^{-1} norm.

    Backtracking halves the step up to 30 times. If Newton stalls, the best
    iterate is returned with ``converged=False``.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    dom = guess.domain
    hc = h.coeffs
    u = guess.coeffs.copy()
    res = residual_norm(u, nl, hc, dom)
    it = 0
    # keep polishing past tol until the Newton update itself is negligible, so
    # that seeds drawn to one (possibly degenerate) root land on the same point
    while it < max_iter:
        if res == 0.0:
            break
        it += 1
        r = residual_field(u, nl, hc, dom)
        du = _newton_direction(u, r, nl, dom, min(1e-12, 0.1 * tol))
        step = 1.0
        for _ in range(31):
            trial = u + step * du
            new_res = residual_norm(trial, nl, hc, dom)
            if new_res < res:
                break
            step *= 0.5
        else:
            break
        small = step * np.sqrt(np.sum(dom.lam * du * du)) <= 1e-13 * (1 + np.sqrt(np.sum(dom.lam * u * u)))
        u, res = trial, new_res
        if res <= tol and small:
            break
    return Equilibrium(SpectralField(dom, u), res, res <= tol, basin_tag, it)


def multi_start(seeds, nl: Nonlinearity, h: SpectralField, tol: float = 1e-10, jobs: int = 1,
                dedup_factor: float = 10.0) -> list[Equilibrium]:
    """Newton from every seed; converged roots are merged when they lie within
    dedup_factor * tol in H^1, or when the residual stays below tol along the
    segment joining them (a degenerate root is only located to about tol^(1/3)).

    The result is ordered by H^1 norm, then by the first coefficient.
    """
    seeds = list(seeds)
    tags = [f"seed{i}" for i in range(len(seeds))]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            sols = list(pool.map(lambda a: solve_equilibrium(a[0], nl, h, tol, basin_tag=a[1]),
                                 zip(seeds, tags)))
    else:
        sols = [solve_equilibrium(s, nl, h, tol, basin_tag=t) for s, t in zip(seeds, tags)]
    found: list[Equilibrium] = []
    for eq in sols:
        if not eq.converged:
            continue
        if not any(_same_root(eq, other, nl, h, tol, dedup_factor) for other in found):
            found.append(eq)
    found.sort(key=lambda e: (round(e.u_star.norm(1), 9), float(e.u_star.coeffs.flat[0])))
    return found


def _same_root(a: Equilibrium, b: Equilibrium, nl, h, tol, factor) -> bool:
    gap = b.u_star - a.u_star
    if gap.norm(1) < factor * tol:
        return True
    dom = gap.domain
    return all(residual_norm(a.u_star.coeffs + x * gap.coeffs, nl, h.coeffs, dom) <= tol
               for x in (0.25, 0.5, 0.75))


def default_seeds(domain: DomainSpec, rng: np.random.Generator, amplitudes=(0.0, 0.5, 2.0),
                  random_count: int = 4, random_amplitude: float = 1.0) -> list[SpectralField]:
    """Zero, +/- multiples of the first mode, and random smooth perturbations."""
    first = domain.mode((1,) * domain.dimension)
    seeds = [a * first for a in amplitudes] + [-a * first for a in amplitudes if a != 0]
    seeds += [random_field(domain, rng, random_amplitude) for _ in range(random_count)]
    return seeds


def distance_to_S(z: SystemState, S) -> float:
    """min over S of the phase-space distance from z to (u*, 0, 0)."""
    S = list(S)
    if not S:
        raise ValueError("equilibrium set is empty")
    tail = z.v.norm(1) ** 2 + z.eta.norm_sq()
    return math.sqrt(min((z.u - e.u_star).norm(1) ** 2 for e in S) + tail)


@dataclass(frozen=True)
class StationarityReport:
    drift: float
    lyapunov_change: float
    bound: float
    passed: bool


def stationarity_check(eq: Equilibrium, nl: Nonlinearity, h: SpectralField, eta: HistoryState,
                       cfg: StepConfig, steps: int = 100) -> StationarityReport:
    """Run (u*, 0, 0) for ``steps`` steps; drift and Lyapunov change must stay within steps * tol."""
    from .diagnostics import lyapunov

    z0 = rest_state(eq.u_star, eta)
    zT = evolve(z0, steps * cfg.dt, cfg, nl, h).final
    drift = math.sqrt((zT.u - z0.u).norm(1) ** 2 + zT.v.norm(1) ** 2 + zT.eta.norm_sq())
    dL = abs(lyapunov(zT, nl, h, cfg.rho) - lyapunov(z0, nl, h, cfg.rho))
    tol = max(eq.residual, cfg.tol)
    bound = steps * max(tol, 1e-12)
    L0 = lyapunov(z0, nl, h, cfg.rho)
    return StationarityReport(drift, dL, bound, drift <= bound and dL <= bound * (1 + abs(L0)))
