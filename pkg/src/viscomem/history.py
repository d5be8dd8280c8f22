"""
Discrete past histories eta^t(s) and their transport d/dt eta = -d/ds eta + v.

Two realizations share one interface:

* ``SGrid`` stores eta on positive ages s_1 < ... < s_n (eta(0) = 0 is implied)
  and moves it with first-order upwind transport. Kernel-weighted sums use
  one-sided trapezoid weights, so jumps of mu at nodes are integrated exactly.
* ``ExpModes`` is the finite realization of a Prony kernel sum_j c_j e^{-d_j s}.
  It keeps the averages zeta_j = int d_j e^{-d_j s} eta(s) ds, which obey
  zeta_j' = -d_j zeta_j + v and reproduce the memory force exactly, with term
  masses w_j = c_j / d_j. Quadratic forms (norm, dissipation, tail functional)
  are the ones of this realization, e.g. ||eta||^2 = sum_j w_j ||zeta_j||_1^2.

All field data are raw coefficient arrays with a leading node/mode axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate as spi

from .kernels import MemoryKernel, PronySum
from .spectral import DomainSpec, SpectralField


class CFLViolation(ValueError):
    pass


def _sq(data: np.ndarray, lam: np.ndarray, r: float) -> np.ndarray:
    """Per-node ||.||^2_{1+r}."""
    w = lam ** (1 + r)
    axes = tuple(range(1, data.ndim))
    return np.sum(w * data * data, axis=axes)


class HistoryState:
    domain: DomainSpec
    data: np.ndarray

    def with_data(self, data) -> "HistoryState":
        raise NotImplementedError

    def memory_force(self) -> SpectralField:
        """int mu(s) A eta(s) ds."""
        return SpectralField(self.domain, self.domain.lam * self._weighted_sum(self.data))

    def norm_sq(self, r: float = 0.0) -> float:
        raise NotImplementedError

    def t_dissipation(self, r: float = 0.0) -> float:
        raise NotImplementedError

    def psi(self, r: float = 0.0) -> float:
        """int I(s) ||eta(s)||^2_{1+r} ds."""
        raise NotImplementedError

    def cross_memory(self, u: np.ndarray, r: float = 0.0) -> float:
        """int mu(s) <eta(s), u>_{1+r} ds."""
        return float(np.sum(self.domain.lam ** (1 + r) * self._weighted_sum(self.data) * u))

    def _weighted_sum(self, data) -> np.ndarray:
        return np.tensordot(self.weights, data, axes=(0, 0))

    @property
    def kappa(self) -> float:
        return float(np.sum(self.weights))

    def average(self, other: "HistoryState") -> "HistoryState":
        return self.with_data(0.5 * (self.data + other.data))

    def __add__(self, other):
        return self.with_data(self.data + other.data)

    def __sub__(self, other):
        return self.with_data(self.data - other.data)

    def zeros_like(self) -> "HistoryState":
        return self.with_data(np.zeros_like(self.data))

    # time stepping
    def advance(self, v_new: np.ndarray, dt: float, v_old: np.ndarray | None = None) -> "HistoryState":
        raise NotImplementedError

    def midpoint_force(self, v0: np.ndarray, dt: float) -> tuple[np.ndarray, float]:
        """Affine form (c, g) of the step-averaged force: c + g * lam * v_mid."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ExpModes(HistoryState):
    domain: DomainSpec
    weights: np.ndarray
    rates: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        d = np.asarray(self.rates, dtype=float)
        data = np.asarray(self.data, dtype=float)
        if data.shape != (w.size, *self.domain.shape):
            raise ValueError("ExpModes data must have shape (n_terms, *domain.shape)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rates", d)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_kernel(cls, kernel: PronySum, domain: DomainSpec, zeta=None) -> "ExpModes":
        c, d = kernel.weights, kernel.rates
        if zeta is None:
            zeta = np.zeros((c.size, *domain.shape))
        return cls(domain, c / d if c.size else c, d, zeta)

    def with_data(self, data):
        return ExpModes(self.domain, self.weights, self.rates, data)

    def _per_mode(self, r):
        return _sq(self.data, self.domain.lam, r)

    def norm_sq(self, r=0.0):
        return float(self.weights @ self._per_mode(r)) if self.weights.size else 0.0

    def t_dissipation(self, r=0.0):
        return -float((self.weights * self.rates) @ self._per_mode(r)) if self.weights.size else 0.0

    def psi(self, r=0.0):
        return float((self.weights / self.rates) @ self._per_mode(r)) if self.weights.size else 0.0

    def advance(self, v_new, dt, v_old=None):
        """Exact propagation for v constant (= v_new) or linear (v_old -> v_new) over the step."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        if not self.weights.size:
            return self
        co = exp_coefficients(self.rates * dt)
        E, phi1, psi = (x.reshape(-1, *([1] * self.domain.dimension)) for x in co[:3])
        if v_old is None:
            new = E * self.data + dt * phi1 * v_new[None]
        else:
            new = E * self.data + dt * psi * v_old[None] + dt * (phi1 - psi) * v_new[None]
        return self.with_data(new)

    def midpoint_force(self, v0, dt):
        if not self.weights.size:
            return np.zeros(self.domain.shape), 0.0
        E, phi1, psi, chi0, chi1 = exp_coefficients(self.rates * dt)
        b0, b1 = dt * chi0, dt * chi1
        shape = (-1, *([1] * self.domain.dimension))
        avg0 = phi1.reshape(shape) * self.data + (b0 - b1).reshape(shape) * v0[None]
        const = self.domain.lam * self._weighted_sum(avg0)
        gain = float(np.sum(self.weights * 2 * b1))
        return const, gain

    def step_average(self, v0, v1, dt) -> "ExpModes":
        """Time average of the modes over one step with linear v."""
        E, phi1, psi, chi0, chi1 = exp_coefficients(self.rates * dt)
        shape = (-1, *([1] * self.domain.dimension))
        return self.with_data(phi1.reshape(shape) * self.data + (dt * chi0).reshape(shape) * v0[None]
                              + (dt * chi1).reshape(shape) * v1[None])


def exp_coefficients(z) -> tuple[np.ndarray, ...]:
    """E, phi1, psi, chi0, chi1 for z = d * dt.

    phi1 = int_0^1 e^{-zx} dx, psi = int_0^1 x e^{-zx} dx,
    chi0 = int_0^1 x (1 - e^{-zx}) / z dx, chi1 = int_0^1 (1-x)(1 - e^{-zx}) / z dx.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    E = np.exp(-z)
    small = z < 0.5
    zs = np.where(small, z, 0.0)
    zl = np.where(small, 1.0, z)
    n = np.arange(0, 30)[:, None]
    fact = np.array([math.factorial(int(k)) for k in n.ravel()], dtype=float)[:, None]
    pw = (-zs[None, :]) ** n
    phi1_s = np.sum(pw / (fact * (n + 1)), axis=0)
    psi_s = np.sum(pw / (fact * (n + 2)), axis=0)
    m = n[1:]
    pw1 = (-1.0) ** (m + 1) * zs[None, :] ** (m - 1)
    chi0_s = np.sum(pw1 / (fact[1:] * (m + 2)), axis=0)
    chi1_s = np.sum(pw1 / (fact[1:] * (m + 1) * (m + 2)), axis=0)
    em = -np.expm1(-zl)
    phi1_l = em / zl
    psi_l = (em - zl * np.exp(-zl)) / zl**2
    chi0_l = (0.5 - psi_l) / zl
    chi1_l = (0.5 - phi1_l + psi_l) / zl
    pick = lambda a, b: np.where(small, a, b)
    return E, pick(phi1_s, phi1_l), pick(psi_s, psi_l), pick(chi0_s, chi0_l), pick(chi1_s, chi1_l)


@dataclass(frozen=True, eq=False)
class SGrid(HistoryState):
    domain: DomainSpec
    nodes: np.ndarray
    weights: np.ndarray
    tail_weights: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.nodes, dtype=float)
        if s.ndim != 1 or s.size == 0 or s[0] <= 0 or np.any(np.diff(s) <= 0):
            raise ValueError("SGrid nodes must be positive and increasing")
        data = np.asarray(self.data, dtype=float)
        if data.shape != (s.size, *self.domain.shape):
            raise ValueError("SGrid data must have shape (n_nodes, *domain.shape)")
        object.__setattr__(self, "nodes", s)
        object.__setattr__(self, "data", data)

    @classmethod
    def build(cls, kernel: MemoryKernel, domain: DomainSpec, dt: float, growth: float = 1.02,
              s_max: float | None = None, spacing: float | None = None, data=None) -> "SGrid":
        """Nodes with first spacing ``spacing`` (default dt) growing geometrically up to s_max.

        Kernel jumps below s_max become nodes; neighbours closer than the first
        spacing are dropped so the transport CFL limit stays dt.
        """
        h0 = dt if spacing is None else spacing
        if h0 < dt:
            raise CFLViolation(f"node spacing {h0} is below dt={dt}")
        if s_max is None:
            s_max = kernel.memory_horizon(1e-8) if kernel.total_mass > 0 else h0
        nodes = [h0]
        step = h0
        while nodes[-1] < s_max:
            step *= growth
            nodes.append(nodes[-1] + step)
        s = np.array(nodes)
        jumps = np.asarray(kernel.breakpoints, dtype=float)
        jumps = jumps[(jumps > 0) & (jumps < s[-1])]
        if jumps.size:
            if np.any(np.diff(jumps) < h0) or jumps[0] < h0:
                raise CFLViolation("kernel jumps are closer than the node spacing")
            dist = np.min(np.abs(s[:, None] - jumps[None, :]), axis=1)
            s = np.union1d(s[dist >= h0 - 1e-12 * h0], jumps)
        w, wi = trapezoid_weights(kernel, s)
        if data is None:
            data = np.zeros((s.size, *domain.shape))
        return cls(domain, s, w, wi, data)

    def with_data(self, data):
        return SGrid(self.domain, self.nodes, self.weights, self.tail_weights, data)

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.nodes]))

    def norm_sq(self, r=0.0):
        return float(self.weights @ _sq(self.data, self.domain.lam, r))

    def psi(self, r=0.0):
        return float(self.tail_weights @ _sq(self.data, self.domain.lam, r))

    def t_dissipation(self, r=0.0):
        """-int mu <eta', eta>_{1+r} with backward differences, eta(0) = 0."""
        prev = np.concatenate([np.zeros((1, *self.domain.shape)), self.data[:-1]])
        shape = (-1, *([1] * self.domain.dimension))
        deriv = (self.data - prev) / self.spacing.reshape(shape)
        lamw = self.domain.lam ** (1 + r)
        per = np.sum(lamw * deriv * self.data, axis=tuple(range(1, self.data.ndim)))
        return -float(self.weights @ per)

    def transported(self, dt) -> np.ndarray:
        h = self.spacing
        if dt > h.min() * (1 + 1e-12):
            raise CFLViolation(f"dt={dt} exceeds the smallest age spacing {h.min()}")
        shape = (-1, *([1] * self.domain.dimension))
        prev = np.concatenate([np.zeros((1, *self.domain.shape)), self.data[:-1]])
        return self.data - (dt / h).reshape(shape) * (self.data - prev)

    def advance(self, v_new, dt, v_old=None):
        """Upwind step with inflow eta(0) = 0 and source dt * v (midpoint source if v_old given)."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        src = v_new if v_old is None else 0.5 * (v_old + v_new)
        return self.with_data(self.transported(dt) + dt * src[None])

    def midpoint_force(self, v0, dt):
        trans = self.transported(dt)
        const = self.domain.lam * self._weighted_sum(0.5 * (self.data + trans))
        return const, 0.5 * dt * self.kappa

    def values_at(self, s: np.ndarray) -> np.ndarray:
        """Linear interpolation in s, with eta(0) = 0 and constant extension past the last node."""
        s = np.asarray(s, dtype=float)
        xs = np.concatenate([[0.0], self.nodes])
        ys = np.concatenate([np.zeros((1, *self.domain.shape)), self.data])
        flat = ys.reshape(xs.size, -1)
        out = np.stack([np.interp(s, xs, flat[:, j]) for j in range(flat.shape[1])], axis=-1)
        return out.reshape(s.shape + self.domain.shape)


def trapezoid_weights(kernel: MemoryKernel, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-sided trapezoid weights of mu and of the tail I on nodes s (value 0 at s = 0)."""
    h = np.diff(np.concatenate([[0.0], s]))
    h_next = np.concatenate([h[1:], [0.0]])
    w = 0.5 * h * kernel.left(s) + 0.5 * h_next * kernel.right(s)
    wi = 0.5 * (h + h_next) * kernel.tail(s)
    return w, wi


def make_history(kernel: MemoryKernel, domain: DomainSpec, dt: float, variant: str = "auto",
                 **sgrid_opts) -> HistoryState:
    """Zero history; ``auto`` picks ExpModes for Prony kernels and SGrid otherwise."""
    if variant == "auto":
        variant = "exp_modes" if isinstance(kernel, PronySum) else "sgrid"
    if variant == "exp_modes":
        if not isinstance(kernel, PronySum):
            raise ValueError("ExpModes needs a Prony kernel")
        return ExpModes.from_kernel(kernel, domain)
    if variant == "sgrid":
        if kernel.total_mass == 0:
            return ExpModes.from_kernel(PronySum(()), domain)
        return SGrid.build(kernel, domain, dt, **sgrid_opts)
    raise ValueError(f"unknown history variant {variant!r}")


# initial histories of the separable form eta0(s) = p(s) * phi

@dataclass(frozen=True)
class SeparableProfile:
    """p(s) with its exponential averages int_0^inf d e^{-ds} p(s) ds."""

    p: Callable[[np.ndarray], np.ndarray]
    laplace: Callable[[np.ndarray], np.ndarray]


def constant_profile() -> SeparableProfile:
    """eta0 = u0 for every age (the Volterra setting)."""
    return SeparableProfile(lambda s: np.ones_like(np.asarray(s, dtype=float)),
                            lambda d: np.ones_like(np.asarray(d, dtype=float)))


def saturating_profile(rate: float) -> SeparableProfile:
    """p(s) = 1 - e^{-rate s}: the history of a past u(-s) = e^{-rate s} u0."""
    return SeparableProfile(lambda s: -np.expm1(-rate * np.asarray(s, dtype=float)),
                            lambda d: rate / (np.asarray(d, dtype=float) + rate))


def with_profile(eta: HistoryState, profile: SeparableProfile, phi: np.ndarray) -> HistoryState:
    if isinstance(eta, ExpModes):
        amp = profile.laplace(eta.rates)
    else:
        amp = profile.p(eta.nodes)
    shape = (-1, *([1] * eta.domain.dimension))
    return eta.with_data(np.asarray(amp).reshape(shape) * phi[None])


def memory_force(eta: HistoryState, kernel: MemoryKernel | None = None, r: float = 0.0) -> SpectralField:
    return eta.memory_force()


def advance_history(eta: HistoryState, v_new: SpectralField, dt: float,
                    v_old: SpectralField | None = None) -> HistoryState:
    return eta.advance(v_new.coeffs, dt, None if v_old is None else v_old.coeffs)


def t_dissipation(eta: HistoryState, kernel: MemoryKernel | None = None) -> float:
    return eta.t_dissipation()


class SnapshotTrajectory:
    """u(t) from stored snapshots, linear in time between them; u(t) = u(t_0) before t_0."""

    def __init__(self, times, coeffs):
        self.times = np.asarray(times, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.times.ndim != 1 or self.coeffs.shape[0] != self.times.size:
            raise ValueError("need one snapshot per time")

    def __call__(self, t) -> np.ndarray:
        t = float(t)
        if t > self.times[-1] * (1 + 1e-12) + 1e-12:
            raise ValueError(f"trajectory gap: t={t} beyond the last snapshot {self.times[-1]}")
        t = min(t, self.times[-1])
        if t <= self.times[0]:
            return self.coeffs[0]
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(i, self.times.size - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        a = (t - t0) / (t1 - t0)
        return (1 - a) * self.coeffs[i] + a * self.coeffs[i + 1]


def rep_formula_oracle(u_traj: Callable[[float], np.ndarray], eta0: SGrid, t: float,
                       t0: float = 0.0) -> SGrid:
    """History at time t from the stored path: u(t)-u(t-s) for s <= t, eta0(s-t)+u(t)-u0 beyond."""
    if t < t0:
        raise ValueError("t precedes the trajectory start")
    if t == t0:
        return eta0
    ut = u_traj(t)
    u0 = u_traj(t0)
    out = np.empty_like(eta0.data)
    el = t - t0
    for i, s in enumerate(eta0.nodes):
        if s <= el:
            out[i] = ut - u_traj(t - s)
        else:
            out[i] = eta0.values_at(np.array([s - el]))[0] + ut - u0
    return eta0.with_data(out)


def convolution_memory_force(kernel: MemoryKernel, u_fn: Callable[[float], np.ndarray],
                             domain: DomainSpec, t: float,
                             eta0_fn: Callable[[float], np.ndarray] | None = None,
                             epsabs: float = 1e-13) -> np.ndarray:
    """int mu(s) A [u(t) - u(t-s)] ds by adaptive quadrature (history from eta0 before 0)."""
    ut = np.asarray(u_fn(t))
    u0 = np.asarray(u_fn(0.0))
    pts = [b for b in np.asarray(kernel.breakpoints, dtype=float)[:1000] if 0 < b < t]
    recent, _ = spi.quad_vec(lambda s: kernel.left(np.array([s]))[0] * (ut - u_fn(t - s)),
                             0.0, t, epsabs=epsabs, epsrel=1e-12, points=pts or None)
    if eta0_fn is None:
        older = kernel.tail(np.array([t]))[0] * (ut - u0)
    else:
        horizon = max(kernel.memory_horizon(1e-14), t + 1.0)
        older, _ = spi.quad_vec(lambda s: kernel.left(np.array([s]))[0] * (eta0_fn(s - t) + ut - u0),
                                t, horizon, epsabs=epsabs, epsrel=1e-12)
    return domain.lam * (recent + older)
