"""
Scalar nonlinearities f with antiderivative F, sampled hypothesis checks, and
the splitting f = f0 + f1 into a part vanishing near the origin with the sign
structure f0(s) s >= F0(s) >= 0 and a globally Lipschitz remainder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .spectral import SpectralField, grid_values, integrate

DEFAULT_RANGE = 1e2
DEFAULT_SAMPLES = 100_000


class HypothesisFailure(Exception):
    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """f with F(0) = 0 and the constants nu, m_f of the dissipation bounds.

    ``rho`` is carried along for scenario bookkeeping only.
    """

    f: Callable[[np.ndarray], np.ndarray]
    F: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    nu: float = 1.0
    m_f: float = 0.0
    rho: float = 0.0
    growth_constant: float | None = None
    name: str = "custom"

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")
        if self.m_f < 0:
            raise ValueError("m_f must be nonnegative")
        f0 = float(np.asarray(self.f(np.array([0.0])))[0])
        if f0 != 0.0:
            raise ValueError(f"f(0) must vanish, got {f0}")

    @classmethod
    def polynomial(cls, coefficients: Sequence[float], name="polynomial", **kw) -> "Nonlinearity":
        """f(u) = sum_k a_k u^k with the constant term dropped so that f(0) = 0."""
        coef = np.array(coefficients, dtype=float)
        if coef.size == 0:
            coef = np.zeros(1)
        coef[0] = 0.0
        p = Polynomial(coef)
        P = p.integ(lbnd=0.0)
        dp = p.deriv()
        return cls(p, P, dp, name=name, **kw)

    def with_params(self, **kw) -> "Nonlinearity":
        args = dict(f=self.f, F=self.F, df=self.df, nu=self.nu, m_f=self.m_f, rho=self.rho,
                    growth_constant=self.growth_constant, name=self.name)
        args.update(kw)
        return Nonlinearity(**args)


def cubic(**kw) -> Nonlinearity:
    return Nonlinearity.polynomial([0, 0, 0, 1], name="cubic", **kw)


def quintic(**kw) -> Nonlinearity:
    return Nonlinearity.polynomial([0, 0, 0, 0, 0, 1], name="quintic", **kw)


def double_well(**kw) -> Nonlinearity:
    """f(u) = u^3 - u."""
    return Nonlinearity.polynomial([0, -1, 0, 1], name="double_well", **kw)


def linear(slope: float, **kw) -> Nonlinearity:
    return Nonlinearity.polynomial([0, slope], name="linear", **kw)


def zero(**kw) -> Nonlinearity:
    return Nonlinearity.polynomial([0.0], name="zero", **kw)


BUILTINS = {"cubic": cubic, "quintic": quintic, "double_well": double_well, "zero": zero}


def _growth_ratio_max(f, R, n_pairs, rng):
    u = rng.uniform(-R, R, n_pairs)
    v = rng.uniform(-R, R, n_pairs)
    # near-diagonal pairs probe the derivative bound
    w = u + rng.uniform(-1e-3, 1e-3, n_pairs) * max(1.0, R / 100)
    uu = np.concatenate([u, u])
    vv = np.concatenate([v, w])
    du = np.abs(uu - vv)
    keep = du > 0
    uu, vv, du = uu[keep], vv[keep], du[keep]
    ratio = np.abs(f(uu) - f(vv)) / (du * (1 + uu**4 + vv**4))
    k = int(np.argmax(ratio))
    return float(ratio[k]), (float(uu[k]), float(vv[k]))


def verify_growth(nl: Nonlinearity, range_: float = DEFAULT_RANGE, samples: int = DEFAULT_SAMPLES,
                  seed: int = 0, levels: int = 4) -> float:
    """Empirical least c in |f(u)-f(v)| <= c|u-v|(1+|u|^4+|v|^4).

    The scan is repeated on ranges R/2^j; a supremum that keeps doubling as the
    range grows means the growth exceeds the critical order and
    HypothesisFailure is raised with the worst pair.
    """
    if range_ <= 0:
        raise ValueError("range must be positive")
    rng = np.random.default_rng(seed)
    results = [_growth_ratio_max(nl.f, range_ / 2**j, samples, rng) for j in reversed(range(levels))]
    cs = [c for c, _ in results]
    c_max, witness = results[-1]
    growth = [b / a for a, b in zip(cs[:-1], cs[1:]) if a > 0]
    if growth and all(g > 1.5 for g in growth[-2:]):
        raise HypothesisFailure(f"growth ratio keeps increasing with the range: {cs}", witness)
    return max(cs)


@dataclass
class DissipationReport:
    diss1_ok: bool
    diss2_ok: bool
    margin1: float
    margin2: float
    witness1: float
    witness2: float

    @property
    def ok(self) -> bool:
        return self.diss1_ok and self.diss2_ok


def dissipation_margins(nl: Nonlinearity, lambda1: float, s: np.ndarray):
    q = 0.5 * lambda1 * (1 - nl.nu) * s**2 + nl.m_f
    F = nl.F(s)
    return nl.f(s) * s - F + q, F + q


def verify_dissipation(nl: Nonlinearity, lambda1: float, range_: float = DEFAULT_RANGE,
                       samples: int = DEFAULT_SAMPLES, atol: float = 1e-9) -> DissipationReport:
    """Worst sampled margins of the two dissipation bounds on [-range, range]."""
    s = np.linspace(-range_, range_, samples)
    m1, m2 = dissipation_margins(nl, lambda1, s)
    i1, i2 = int(np.argmin(m1)), int(np.argmin(m2))
    scale1 = atol * (1 + np.abs(nl.f(s[i1]) * s[i1]))
    scale2 = atol * (1 + np.abs(nl.F(s[i2])))
    return DissipationReport(bool(m1[i1] >= -scale1), bool(m2[i2] >= -scale2),
                             float(m1[i1]), float(m2[i2]), float(s[i1]), float(s[i2]))


def _psi(x):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)


def smooth_step(x):
    """C-infinity transition: 0 for x <= 0, 1 for x >= 1, nondecreasing."""
    x = np.asarray(x, dtype=float)
    a, b = _psi(x), _psi(1.0 - x)
    return a / (a + b)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(80)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """f0 = cutoff * (f + beta s), f1 = f - f0, cutoff = 0 on [-k, k], 1 off [-k-1, k+1]."""

    nl: Nonlinearity
    k: float
    beta: float
    alpha: float

    def cutoff(self, s):
        return smooth_step(np.abs(np.asarray(s, dtype=float)) - self.k)

    def f0(self, s):
        s = np.asarray(s, dtype=float)
        return self.cutoff(s) * (self.nl.f(s) + self.beta * s)

    def f1(self, s):
        s = np.asarray(s, dtype=float)
        return self.nl.f(s) - self.f0(s)

    def _F0_pos(self, a):
        # F0 for a >= 0, exploiting F0 = 0 on [0, k] and the closed form past k + 1
        a = np.asarray(a, dtype=float)
        out = np.zeros_like(a)
        k = self.k
        mid = (a > k) & (a < k + 1)
        if np.any(mid):
            out[mid] = self._quad(k, a[mid])
        far = a >= k + 1
        if np.any(far):
            base = self._quad(k, np.array([k + 1.0]))[0]
            G = lambda x: self.nl.F(x) + 0.5 * self.beta * x**2
            out[far] = base + G(a[far]) - G(k + 1.0)
        return out

    def _quad(self, lo, hi):
        hi = np.asarray(hi, dtype=float)
        half = 0.5 * (hi - lo)
        x = lo + half[:, None] * (_GL_NODES[None, :] + 1.0)
        return half * np.sum(_GL_WEIGHTS[None, :] * self.f0(x), axis=1)

    def F0(self, s):
        s = np.asarray(s, dtype=float)
        pos = s >= 0
        out = np.empty_like(s)
        out[pos] = self._F0_pos(s[pos])
        # F0(-a) = int_0^{-a} f0 = -int_0^a f0(-y) dy
        if np.any(~pos):
            mirror = Decomposition(self.nl.with_params(f=lambda y: -self.nl.f(-y),
                                                       F=lambda y: self.nl.F(-y),
                                                       df=lambda y: self.nl.df(-y)),
                                   self.k, self.beta, self.alpha)
            out[~pos] = mirror._F0_pos(-s[~pos])
        return out

    def lipschitz_f1(self, range_: float | None = None, samples: int = DEFAULT_SAMPLES) -> float:
        """Largest difference quotient of f1 on a uniform grid over [-range, range]."""
        R = 10 * (self.k + 1) if range_ is None else range_
        s = np.linspace(-R, R, samples)
        g = self.f1(s)
        return float(np.max(np.abs(np.diff(g)) / np.diff(s)))


def admissible_k(alpha: float, beta: float, m_f: float) -> float:
    """Least integer k >= 1 with (beta - alpha) s^2 - 2 m_f >= 0 for |s| >= k."""
    if beta <= alpha:
        raise ValueError("beta must exceed alpha")
    return float(max(1, math.ceil(math.sqrt(2 * m_f / (beta - alpha)))))


def decompose(nl: Nonlinearity, lambda1: float, beta: float | None = None,
              k: float | None = None) -> Decomposition:
    """Split f following the cutoff construction; ``k`` may be raised above its minimum."""
    alpha = lambda1 * (1 - nl.nu)
    if beta is None:
        beta = 0.5 * (alpha + lambda1)
    if not alpha < beta < lambda1:
        raise ValueError(f"beta={beta} must lie in (alpha, lambda1) = ({alpha}, {lambda1})")
    k_min = admissible_k(alpha, beta, nl.m_f)
    if k is None:
        k = k_min
    elif k < k_min:
        raise ValueError(f"k={k} is below the admissible minimum {k_min}")
    return Decomposition(nl, float(k), float(beta), float(alpha))


@dataclass
class ExtraBoundsReport:
    margin1: float
    margin2: float

    @property
    def ok(self) -> bool:
        return self.margin1 >= -1e-10 and self.margin2 >= -1e-10


def extra_bounds_check(nl: Nonlinearity, u: SpectralField) -> ExtraBoundsReport:
    """Integrated dissipation bounds for a field, by grid quadrature."""
    dom = u.domain
    g = grid_values(dom, u.coeffs)
    fu_u = integrate(dom, nl.f(g) * g)
    Fu = integrate(dom, nl.F(g))
    h1 = float(np.sum(dom.lam * u.coeffs**2))
    M_f = nl.m_f * dom.volume
    return ExtraBoundsReport(fu_u - Fu + 0.5 * (1 - nl.nu) * h1 + M_f,
                             Fu + 0.5 * (1 - nl.nu) * h1 + M_f)
