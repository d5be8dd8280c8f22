"""
Dirichlet-Laplacian eigenbasis on a box.

Fields are stored as coefficients against the L2-orthonormal sine functions

    phi_k(x) = prod_i sqrt(2 / L_i) sin(pi k_i x_i / L_i),   k_i = 1..N_i,

so that A = -Laplacian is diagonal with eigenvalues
lambda_k = sum_i (pi k_i / L_i)^2 and every Sobolev norm is a weighted l2 sum.

Pointwise nonlinearities are evaluated pseudospectrally on the interior
nodes x_j = j L / (M + 1), j = 1..M, with M = pad * N per axis. The DST-I pair
is exact on resolved modes and, with pad = 2, a product of three resolved
fields is projected back without aliasing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import fft

__all__ = [
    "DomainSpec",
    "SpectralField",
    "eigenvalues",
    "sobolev_norm",
    "inner",
    "apply_A_power",
    "to_grid",
    "from_grid",
    "grid_values",
    "grid_project",
    "integrate",
    "random_field",
    "from_function",
    "modes_field",
]


@dataclass(frozen=True)
class DomainSpec:
    """Box (0, L_1) x ... x (0, L_d) truncated to N_i sine modes per axis."""

    dimension: int
    edge_lengths: tuple[float, ...]
    modes_per_axis: tuple[int, ...]
    pad: int = 2

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        lengths = _per_axis(self.edge_lengths, self.dimension, float)
        modes = _per_axis(self.modes_per_axis, self.dimension, int)
        if any(L <= 0 for L in lengths):
            raise ValueError("edge lengths must be positive")
        if any(n < 1 for n in modes):
            raise ValueError("mode counts must be positive")
        if self.pad < 1:
            raise ValueError("grid padding factor must be >= 1")
        object.__setattr__(self, "edge_lengths", lengths)
        object.__setattr__(self, "modes_per_axis", modes)

    @classmethod
    def box(cls, lengths, modes, pad: int = 2) -> "DomainSpec":
        lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
        modes = np.atleast_1d(np.asarray(modes, dtype=int))
        d = max(lengths.size, modes.size)
        return cls(d, tuple(np.broadcast_to(lengths, d)), tuple(np.broadcast_to(modes, d)), pad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.modes_per_axis

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(self.pad * n for n in self.modes_per_axis)

    @property
    def volume(self) -> float:
        return float(np.prod(self.edge_lengths))

    @property
    def cell_volume(self) -> float:
        """Quadrature weight of one interior grid node."""
        return float(np.prod([L / (m + 1) for L, m in zip(self.edge_lengths, self.grid_shape)]))

    @cached_property
    def lam(self) -> np.ndarray:
        """Eigenvalues on the coefficient array layout."""
        axes = [
            (np.pi * np.arange(1, n + 1) / L) ** 2
            for L, n in zip(self.edge_lengths, self.modes_per_axis)
        ]
        out = np.zeros(self.shape)
        for i, ax in enumerate(axes):
            shape = [1] * self.dimension
            shape[i] = ax.size
            out = out + ax.reshape(shape)
        out.setflags(write=False)
        return out

    @property
    def lambda1(self) -> float:
        return float(self.lam.min())

    @cached_property
    def _grid_scale(self) -> float:
        # orthonormal DST-I times this factor gives point values of sum u_k phi_k
        return float(np.prod([np.sqrt((m + 1) / L) for L, m in zip(self.edge_lengths, self.grid_shape)]))

    def nodes(self) -> list[np.ndarray]:
        """Interior collocation nodes per axis."""
        return [L * np.arange(1, m + 1) / (m + 1) for L, m in zip(self.edge_lengths, self.grid_shape)]

    def zeros(self) -> "SpectralField":
        return SpectralField(self, np.zeros(self.shape))

    def mode(self, index, amplitude: float = 1.0) -> "SpectralField":
        """Field equal to ``amplitude`` times one eigenfunction (1-based multi-index)."""
        index = (index,) if np.isscalar(index) else tuple(index)
        if len(index) != self.dimension:
            raise ValueError("multi-index length must match the dimension")
        c = np.zeros(self.shape)
        c[tuple(i - 1 for i in index)] = amplitude
        return SpectralField(self, c)


def _per_axis(values, d, cast):
    vals = tuple(cast(v) for v in np.atleast_1d(np.asarray(values)).ravel())
    if len(vals) == 1:
        vals = vals * d
    if len(vals) != d:
        raise ValueError(f"expected {d} per-axis values, got {len(vals)}")
    return vals


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable field given by its sine-basis coefficients."""

    domain: DomainSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != self.domain.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match domain {self.domain.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def _wrap(self, c) -> "SpectralField":
        return SpectralField(self.domain, c)

    def __add__(self, other):
        return self._wrap(self.coeffs + _coeffs(other))

    def __sub__(self, other):
        return self._wrap(self.coeffs - _coeffs(other))

    def __neg__(self):
        return self._wrap(-self.coeffs)

    def __mul__(self, scalar):
        return self._wrap(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._wrap(self.coeffs / float(scalar))

    def norm(self, r: float = 0.0) -> float:
        return sobolev_norm(self, r)

    def inner(self, other, r: float = 0.0) -> float:
        return inner(self, other, r)

    def grid(self) -> np.ndarray:
        return to_grid(self)


def _coeffs(x) -> np.ndarray:
    return x.coeffs if isinstance(x, SpectralField) else np.asarray(x, dtype=float)


def eigenvalues(domain: DomainSpec) -> list[tuple[tuple[int, ...], float]]:
    """All (multi-index, eigenvalue) pairs sorted by eigenvalue."""
    lam = domain.lam
    order = np.argsort(lam, axis=None, kind="stable")
    out = []
    for flat in order:
        idx = np.unravel_index(flat, lam.shape)
        out.append((tuple(int(i) + 1 for i in idx), float(lam[idx])))
    return out


def weighted_sq(c: np.ndarray, lam: np.ndarray, r: float) -> float:
    if r == 0:
        return float(np.sum(c * c))
    return float(np.sum(lam**r * c * c))


def sobolev_norm(u: SpectralField, r: float = 0.0) -> float:
    """||u||_r = ||A^{r/2} u||; r may be negative."""
    return float(np.sqrt(weighted_sq(u.coeffs, u.domain.lam, r)))


def inner(u: SpectralField, v: SpectralField, r: float = 0.0) -> float:
    """<u, v>_r = <A^{r/2} u, A^{r/2} v>."""
    if u.domain != v.domain:
        raise ValueError("fields live on different domains")
    w = u.domain.lam**r if r != 0 else 1.0
    return float(np.sum(w * u.coeffs * v.coeffs))


def apply_A_power(u: SpectralField, p: float) -> SpectralField:
    return SpectralField(u.domain, u.domain.lam**p * u.coeffs)


def grid_values(domain: DomainSpec, c: np.ndarray) -> np.ndarray:
    """Point values on the padded grid from a raw coefficient array."""
    padded = np.zeros(domain.grid_shape)
    padded[tuple(slice(0, n) for n in domain.shape)] = c
    return fft.dstn(padded, type=1, norm="ortho") * domain._grid_scale


def grid_project(domain: DomainSpec, g: np.ndarray) -> np.ndarray:
    """L2 projection of grid values onto the resolved modes (discrete quadrature)."""
    full = fft.dstn(g, type=1, norm="ortho") / domain._grid_scale
    return full[tuple(slice(0, n) for n in domain.shape)]


def to_grid(u: SpectralField) -> np.ndarray:
    return grid_values(u.domain, u.coeffs)


def from_grid(domain: DomainSpec, values: np.ndarray) -> SpectralField:
    values = np.asarray(values, dtype=float)
    if values.shape != domain.grid_shape:
        raise ValueError(f"grid shape {values.shape} does not match {domain.grid_shape}")
    return SpectralField(domain, grid_project(domain, values))


def integrate(domain: DomainSpec, g: np.ndarray) -> float:
    """Quadrature of grid values over the box (exact for products of resolved fields)."""
    return float(np.sum(g) * domain.cell_volume)


def random_field(domain: DomainSpec, rng: np.random.Generator, amplitude: float = 1.0,
                 decay: float = 2.0) -> SpectralField:
    """Smooth random field with coefficients ~ amplitude * lambda^(-decay/2)."""
    c = rng.standard_normal(domain.shape) * (domain.lam / domain.lambda1) ** (-decay / 2)
    return SpectralField(domain, amplitude * c)


def from_function(domain: DomainSpec, fn) -> SpectralField:
    """Project a callable fn(*coords) sampled on the collocation grid."""
    mesh = np.meshgrid(*domain.nodes(), indexing="ij")
    return from_grid(domain, fn(*mesh))


def modes_field(domain: DomainSpec, entries: Sequence) -> SpectralField:
    """Field from ``[(multi_index..., value), ...]`` entries, 1-based indices."""
    c = np.zeros(domain.shape)
    for entry in entries:
        *idx, val = entry
        if len(idx) != domain.dimension:
            raise ValueError(f"mode entry {entry!r} needs {domain.dimension} indices")
        if any(i < 1 or i > n for i, n in zip(idx, domain.shape)):
            raise ValueError(f"mode index {tuple(idx)} outside the resolved range")
        c[tuple(int(i) - 1 for i in idx)] += float(val)
    return SpectralField(domain, c)
