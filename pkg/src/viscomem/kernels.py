"""
Memory kernels and grid certification of the tail-domination hypotheses.

A kernel mu is nonnegative, nonincreasing and summable. Every variant exposes
point values with one-sided limits at jumps, the tail I(s) = int_s^inf mu and
the total mass kappa = I(0). Certification is sampled on a log grid spanning
[1e-6, 1e3] * s_scale, with s_scale = kappa / mu(s_med) and I(s_med) = kappa/2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

SCAN_LO = 1e-6
SCAN_HI = 1e3
SCAN_POINTS = 10_000
# a bounded ratio may still creep up by this much between the last two decades
GROWTH_SLACK = 0.01


class DivergentKernelError(ValueError):
    """Kernel mass or tail integral is infinite."""


class CertificationFailure(Exception):
    """Hypothesis violated on the scan; ``witness`` locates the violation."""

    def __init__(self, message, witness, value=math.inf):
        super().__init__(message)
        self.witness = witness
        self.value = value


class MemoryKernel:
    """Base class; subclasses define ``left``, ``right`` and ``tail``."""

    breakpoints: np.ndarray = np.empty(0)

    def __call__(self, s):
        return self.left(s)

    def left(self, s):
        raise NotImplementedError

    def right(self, s):
        raise NotImplementedError

    def tail(self, s):
        raise NotImplementedError

    @property
    def total_mass(self) -> float:
        return float(self.tail(np.array([0.0]))[0])

    @property
    def is_zero(self) -> bool:
        return self.total_mass == 0.0

    def tail_ratio(self, s, side="right"):
        """I(s) / mu(s^+) (or mu(s^-)); nan where both vanish, inf where only mu does."""
        s = np.asarray(s, dtype=float)
        mu = self.right(s) if side == "right" else self.left(s)
        tail = self.tail(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = tail / mu
        out = np.where((mu == 0) & (tail == 0), np.nan, out)
        return np.where((mu == 0) & (tail > 0), np.inf, out)

    def log_value(self, s):
        with np.errstate(divide="ignore"):
            return np.log(self.left(np.asarray(s, dtype=float)))

    def median_age(self) -> float:
        """Age s with I(s) = kappa / 2."""
        kappa = self.total_mass
        lo, hi = 0.0, 1.0
        while self.tail(np.array([hi]))[0] > kappa / 2:
            hi *= 2.0
            if hi > 1e300:
                raise DivergentKernelError("kernel tail never halves")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.tail(np.array([mid]))[0] > kappa / 2:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    @property
    def s_scale(self) -> float:
        kappa = self.total_mass
        if kappa <= 0:
            raise ValueError("s_scale is undefined for the zero kernel")
        s_med = self.median_age()
        mu = float(self.right(np.array([s_med]))[0])
        return kappa / mu if mu > 0 else s_med

    def memory_horizon(self, rel_tol: float = 1e-8) -> float:
        """Smallest age beyond which the tail mass is below rel_tol * kappa."""
        kappa = self.total_mass
        hi = 1.0
        while self.tail(np.array([hi]))[0] >= rel_tol * kappa:
            hi *= 2.0
            if hi > 1e12:
                raise DivergentKernelError("kernel tail decays too slowly for truncation")
        lo = 0.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if self.tail(np.array([mid]))[0] >= rel_tol * kappa:
                lo = mid
            else:
                hi = mid
        return hi


@dataclass(frozen=True, eq=False)
class PronySum(MemoryKernel):
    """mu(s) = sum_j c_j exp(-d_j s)."""

    terms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        terms = tuple((float(c), float(d)) for c, d in self.terms)
        for c, d in terms:
            if c <= 0 or d <= 0:
                raise ValueError(f"Prony term ({c}, {d}) must have positive weight and rate")
        object.__setattr__(self, "terms", terms)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms])

    @property
    def rates(self) -> np.ndarray:
        return np.array([d for _, d in self.terms])

    def left(self, s):
        s = np.asarray(s, dtype=float)
        if not self.terms:
            return np.zeros_like(s)
        return np.sum(self.weights[:, None] * np.exp(-np.outer(self.rates, s)), axis=0).reshape(s.shape)

    right = left

    def tail(self, s):
        s = np.asarray(s, dtype=float)
        if not self.terms:
            return np.zeros_like(s)
        c, d = self.weights, self.rates
        return np.sum((c / d)[:, None] * np.exp(-np.outer(d, s)), axis=0).reshape(s.shape)

    @property
    def total_mass(self) -> float:
        return float(sum(c / d for c, d in self.terms))

    def tail_ratio(self, s, side="right"):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if not self.terms:
            return np.full(s.shape, np.nan)
        c, d = self.weights, self.rates
        shift = np.exp(-np.outer(d - d.min(), s))
        return (c / d) @ shift / (c @ shift)

    def log_value(self, s):
        s = np.asarray(s, dtype=float)
        if not self.terms:
            return np.full(s.shape, -np.inf)
        return logsumexp(np.log(self.weights)[:, None] - np.outer(self.rates, s), axis=0).reshape(s.shape)

    def __add__(self, other: "PronySum") -> "PronySum":
        return PronySum(self.terms + other.terms)

    def scaled(self, factor: float) -> "PronySum":
        return PronySum(tuple((factor * c, d) for c, d in self.terms))


def zero_kernel() -> PronySum:
    return PronySum(())


def exponential(weight: float = 1.0, rate: float = 1.0) -> PronySum:
    return PronySum(((weight, rate),))


@dataclass(frozen=True, eq=False)
class PiecewiseConstant(MemoryKernel):
    """Value ``values[i]`` on (b_i, b_{i+1}]; zero beyond the last breakpoint.

    ``breakpoints`` lists b_1 < ... < b_n (b_0 = 0 is implicit).
    """

    breakpoints: np.ndarray = field(default_factory=lambda: np.empty(0))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if b.shape != v.shape or b.ndim != 1 or b.size == 0:
            raise ValueError("need one value per breakpoint")
        if np.any(np.diff(b) <= 0) or b[0] <= 0:
            raise ValueError("breakpoints must be positive and increasing")
        if np.any(v < 0) or np.any(np.diff(v) > 0):
            raise ValueError("piecewise-constant kernel must be nonnegative and nonincreasing")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)
        widths = np.diff(np.concatenate([[0.0], b]))
        # mass to the right of each breakpoint
        seg = widths * v
        right_mass = np.concatenate([np.cumsum(seg[::-1])[::-1][1:], [0.0]])
        object.__setattr__(self, "_right_mass", right_mass)

    def left(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="left")
        vals = np.concatenate([self.values, [0.0]])
        return vals[idx]

    def right(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="right")
        vals = np.concatenate([self.values, [0.0]])
        return vals[idx]

    def tail(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="left")
        b = np.concatenate([self.breakpoints, [np.inf]])
        vals = np.concatenate([self.values, [0.0]])
        rm = np.concatenate([self._right_mass, [0.0]])
        with np.errstate(invalid="ignore"):
            partial = np.where(vals[idx] > 0, (b[idx] - s) * vals[idx], 0.0)
        return partial + rm[idx]

    @property
    def total_mass(self) -> float:
        widths = np.diff(np.concatenate([[0.0], self.breakpoints]))
        return float(np.sum(widths * self.values))


def indicator(width: float = 1.0, height: float = 1.0) -> PiecewiseConstant:
    return PiecewiseConstant(np.array([width]), np.array([height]))


@dataclass(frozen=True, eq=False)
class GeometricSteps(MemoryKernel):
    """mu(s) = ratio^ceil(s/width): infinitely many jumps, handled in closed form."""

    ratio: float = 0.5
    width: float = 1.0
    # jump locations exposed to scans are capped; the kernel itself is not truncated
    max_listed_jumps: int = 100_000

    def __post_init__(self):
        if not 0 < self.ratio < 1 or self.width <= 0:
            raise ValueError("need 0 < ratio < 1 and positive width")

    @property
    def breakpoints(self) -> np.ndarray:
        return self.width * np.arange(1, self.max_listed_jumps + 1)

    def _index(self, s, side):
        q = np.asarray(s, dtype=float) / self.width
        n = np.ceil(q) if side == "left" else np.floor(q) + 1
        return np.maximum(n, 1.0)

    def left(self, s):
        return self.ratio ** self._index(s, "left")

    def right(self, s):
        return self.ratio ** self._index(s, "right")

    def log_value(self, s):
        return self._index(s, "left") * math.log(self.ratio)

    def tail(self, s):
        s = np.asarray(s, dtype=float)
        n = self._index(s, "left")
        r, w = self.ratio, self.width
        return r**n * ((n * w - s) + w * r / (1 - r))

    def tail_ratio(self, s, side="right"):
        s = np.asarray(s, dtype=float)
        n = self._index(s, "left")
        r, w = self.ratio, self.width
        # I(s) / mu(s^-); at a jump the right limit is smaller by one factor of r
        base = (n * w - s) + w * r / (1 - r)
        if side == "right":
            base = np.where(self._index(s, "right") > n, base / r, base)
        return base

    @property
    def total_mass(self) -> float:
        return self.width * self.ratio / (1 - self.ratio)


def geometric_steps(ratio: float = 0.5, width: float = 1.0) -> GeometricSteps:
    """The kernel ratio^ceil(s/width), e.g. 2^(-ceil(s)) for the defaults."""
    return GeometricSteps(ratio, width)


@dataclass(frozen=True, eq=False)
class TabulatedMonotone(MemoryKernel):
    """Positive samples joined by power laws (linear in log-log).

    Below the first node mu ~ s^(-origin_exponent) (0 <= exponent < 1 keeps
    the mass finite); past the last node an analytic tail takes over, either
    ``("exp", a)`` for exp(-a (s - s_n)) or ``("power", p)`` for (s/s_n)^(-p).
    """

    nodes: np.ndarray = field(default_factory=lambda: np.empty(0))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))
    tail_kind: str = "exp"
    tail_param: float = 1.0
    origin_exponent: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.nodes, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if s.shape != v.shape or s.ndim != 1 or s.size < 2:
            raise ValueError("need at least two tabulated samples")
        if s[0] <= 0 or np.any(np.diff(s) <= 0):
            raise ValueError("sample ages must be positive and increasing")
        if np.any(v <= 0) or np.any(np.diff(v) > 0):
            raise ValueError("tabulated values must be positive and nonincreasing")
        if self.tail_kind not in ("exp", "power"):
            raise ValueError(f"unknown tail kind {self.tail_kind!r}")
        if self.origin_exponent < 0:
            raise ValueError("origin exponent must be nonnegative")
        object.__setattr__(self, "nodes", s)
        object.__setattr__(self, "values", v)
        slopes = -np.log(v[1:] / v[:-1]) / np.log(s[1:] / s[:-1])
        object.__setattr__(self, "_slopes", slopes)
        seg = np.array([_power_integral(v[i], s[i], slopes[i], s[i], s[i + 1]) for i in range(s.size - 1)])
        tail_end = self._tail_integral(np.array([s[-1]]))[0]
        right = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]]) + tail_end
        object.__setattr__(self, "_right_mass", right)

    def _tail_integral(self, s):
        sn, vn = self.nodes[-1], self.values[-1]
        if self.tail_kind == "exp":
            if self.tail_param <= 0:
                raise DivergentKernelError("exponential tail needs a positive rate")
            return vn * np.exp(-self.tail_param * (s - sn)) / self.tail_param
        p = self.tail_param
        if p <= 1:
            raise DivergentKernelError(f"power tail with exponent {p} <= 1 has infinite mass")
        return vn * sn**p * s ** (1 - p) / (p - 1)

    def left(self, s):
        s = np.asarray(s, dtype=float)
        sn, vn = self.nodes[-1], self.values[-1]
        out = np.empty_like(s)
        lo = s < self.nodes[0]
        hi = s > sn
        mid = ~(lo | hi)
        with np.errstate(divide="ignore"):
            out[lo] = self.values[0] * (s[lo] / self.nodes[0]) ** (-self.origin_exponent)
        if self.tail_kind == "exp":
            out[hi] = vn * np.exp(-self.tail_param * (s[hi] - sn))
        else:
            out[hi] = vn * (s[hi] / sn) ** (-self.tail_param)
        i = np.clip(np.searchsorted(self.nodes, s[mid], side="right") - 1, 0, self.nodes.size - 2)
        out[mid] = self.values[i] * (s[mid] / self.nodes[i]) ** (-self._slopes[i])
        return out

    right = left

    def tail(self, s):
        s = np.asarray(s, dtype=float)
        if self.origin_exponent >= 1:
            raise DivergentKernelError("kernel is not integrable at the origin")
        out = np.empty_like(s)
        s0, v0 = self.nodes[0], self.values[0]
        lo = s < s0
        hi = s > self.nodes[-1]
        mid = ~(lo | hi)
        a = self.origin_exponent
        out[lo] = v0 * s0**a * (s0 ** (1 - a) - s[lo] ** (1 - a)) / (1 - a) + self._right_mass[0]
        out[hi] = self._tail_integral(s[hi])
        i = np.clip(np.searchsorted(self.nodes, s[mid], side="right") - 1, 0, self.nodes.size - 2)
        part = np.array([
            _power_integral(self.values[j], self.nodes[j], self._slopes[j], x, self.nodes[j + 1])
            for j, x in zip(i, s[mid])
        ])
        out[mid] = part + self._right_mass[i + 1] if part.size else part
        return out

    @property
    def total_mass(self) -> float:
        return float(self.tail(np.array([0.0]))[0])


def _power_integral(v, s_ref, p, a, b):
    """int_a^b v (s/s_ref)^(-p) ds."""
    if b <= a:
        return 0.0
    if abs(p - 1) < 1e-12:
        return v * s_ref * math.log(b / a)
    return v * s_ref**p * (b ** (1 - p) - a ** (1 - p)) / (1 - p)


def tabulate(fn, s_min: float, s_max: float, n: int = 200, tail_kind="exp", tail_param=None,
             origin_exponent: float = 0.0) -> TabulatedMonotone:
    """Sample a callable kernel on a log grid; tail parameter defaults to the local decay."""
    s = np.geomspace(s_min, s_max, n)
    v = np.asarray(fn(s), dtype=float)
    if tail_param is None:
        if tail_kind == "exp":
            tail_param = -math.log(v[-1] / v[-2]) / (s[-1] - s[-2])
        else:
            tail_param = -math.log(v[-1] / v[-2]) / math.log(s[-1] / s[-2])
    return TabulatedMonotone(s, v, tail_kind, float(tail_param), origin_exponent)


def total_mass(mu: MemoryKernel) -> float:
    return mu.total_mass


def scan_grid(mu: MemoryKernel, n: int = SCAN_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Log-spaced ages plus points bracketing every jump; returns (ages, side) pairs."""
    scale = mu.s_scale
    s = np.geomspace(SCAN_LO * scale, SCAN_HI * scale, n)
    b = np.asarray(mu.breakpoints, dtype=float)
    b = b[(b > s[0]) & (b < s[-1])]
    s = s[~np.isin(s, b)]
    eps = 1e-9
    extra = np.concatenate([b * (1 - eps), b * (1 + eps)])
    ages = np.concatenate([s, extra])
    order = np.argsort(ages, kind="stable")
    return ages[order], scale


def _unbounded(values: np.ndarray, ages: np.ndarray, cutoff: float) -> bool:
    inner = values[ages <= cutoff]
    if inner.size == 0:
        return False
    full_max = np.nanmax(values)
    inner_max = np.nanmax(inner)
    if not np.isfinite(full_max):
        return True
    return full_max > (1 + GROWTH_SLACK) * inner_max


def certify_theta(mu: MemoryKernel, n: int = SCAN_POINTS) -> float:
    """Least Theta with I(s) <= Theta mu(s) on the scan (grid supremum of I/mu).

    Raises CertificationFailure with the arg-sup age when the ratio keeps
    growing through the last scanned decade.
    """
    if mu.total_mass <= 0:
        raise ValueError("certification needs a kernel with positive mass")
    ages, scale = scan_grid(mu, n)
    ratio = mu.tail_ratio(ages, side="right")
    if np.all(np.isnan(ratio)):
        raise CertificationFailure("kernel vanishes on the whole scan", float(ages[0]))
    k = int(np.nanargmax(ratio))
    if _unbounded(ratio, ages, SCAN_HI * scale / 10):
        raise CertificationFailure(
            f"I(s)/mu(s) unbounded on the scan (reaches {ratio[k]:.4g} at s={ages[k]:.4g})",
            float(ages[k]), float(ratio[k]))
    return float(ratio[k])


def certify_nece(mu: MemoryKernel, delta: float, n_s: int = 400, n_sigma: int = 400,
                 sigma_decades: float = 4.0) -> float:
    """Least C >= 1 with mu(sigma+s) <= C exp(-delta sigma) mu(s) on a (sigma, s) scan.

    sigma runs over {0} and a log grid up to 10^sigma_decades * s_scale. Raises
    CertificationFailure with witness (sigma*, s*) when the supremum keeps
    growing through the last decade of sigma.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if mu.total_mass <= 0:
        raise ValueError("certification needs a kernel with positive mass")
    ages, scale = scan_grid(mu, n_s)
    ages = ages[mu.right(ages) > 0]
    sigma = np.concatenate([[0.0], np.geomspace(SCAN_LO * scale, 10**sigma_decades * scale, n_sigma)])
    log_den = mu.log_value(ages)
    best = np.full(sigma.size, -np.inf)
    where = np.zeros(sigma.size, dtype=int)
    for i, sg in enumerate(sigma):
        log_r = mu.log_value(ages + sg) + delta * sg - log_den
        j = int(np.argmax(log_r))
        best[i], where[i] = log_r[j], j
    k = int(np.argmax(best))
    cutoff = 10 ** (sigma_decades - 1) * scale
    inner = best[sigma <= cutoff].max()
    if best[k] > 700 or best[k] > inner + math.log1p(GROWTH_SLACK):
        raise CertificationFailure(
            f"mu(sigma+s) e^(delta sigma) / mu(s) unbounded for delta={delta:.4g}",
            (float(sigma[k]), float(ages[where[k]])), float(np.exp(min(best[k], 700))))
    return float(max(1.0, np.exp(best[k])))


@dataclass
class EquivalenceReport:
    theta: float | None
    theta_witness: float | None
    nece: list[tuple[float, float | None]]
    agree: bool

    @property
    def theta_ok(self) -> bool:
        return self.theta is not None

    @property
    def nece_ok(self) -> bool:
        return any(c is not None for _, c in self.nece)


def cross_check_equivalence(mu: MemoryKernel, deltas: Sequence[float] | None = None) -> EquivalenceReport:
    """Run both certifications; they should pass or fail together."""
    scale = mu.s_scale
    if deltas is None:
        deltas = np.geomspace(1e-2, 10.0, 13) / scale
    try:
        theta, witness = certify_theta(mu), None
    except CertificationFailure as exc:
        theta, witness = None, exc.witness
    pairs = []
    for d in deltas:
        try:
            pairs.append((float(d), certify_nece(mu, float(d))))
        except CertificationFailure:
            pairs.append((float(d), None))
    theta_ok = theta is not None
    nece_ok = any(c is not None for _, c in pairs)
    return EquivalenceReport(theta, witness, pairs, theta_ok == nece_ok)
