"""Cosine eigenbasis of the Neumann Laplacian on the unit cube.

Fields are stored as coefficients of the orthonormal eigenfunctions

    e_k(x) = prod_i c_{k_i} cos(k_i pi x_i),   c_0 = 1, c_k = sqrt(2),

with eigenvalues lambda_k = pi^2 |k|^2.  The physical grid is the cell-centred
(midpoint) grid x_j = (j + 1/2) / M, M = oversample * n, on which the
orthonormal DCT-II/III pair is an exact change of basis.  The midpoint rule on
that grid integrates cos(m pi x) exactly for 0 <= m < 2M, which makes L^2 norms,
L^4 norms and the projection of a cubic exact at oversample 2.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft

__all__ = [
    "GridSpec",
    "SpectralField",
    "NormBundle",
    "eigenvalue",
    "eigenvalues",
    "to_physical",
    "to_spectral",
    "physical_nodes",
    "fractional_apply",
    "norm_sobolev",
    "norm_lp",
    "norm_sup",
    "mean",
    "norm_bundle",
    "laplacian",
    "write_snapshot",
    "read_snapshot",
]

SNAPSHOT_MAGIC = b"SCHF"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Spectral grid: ``n`` cosine modes per dimension in ``d`` dimensions."""

    d: int
    n: int
    quad_oversample: int = 2

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if self.n < 4:
            raise ValueError(f"n must be >= 4, got {self.n}")
        if self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two, got {self.n}")
        if self.quad_oversample < 2:
            raise ValueError("quad_oversample must be >= 2")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    def physical_shape(self, oversample: int = 1) -> tuple[int, ...]:
        return (oversample * self.n,) * self.d


_EIG_CACHE: dict[tuple[int, int], np.ndarray] = {}


def eigenvalues(grid: GridSpec) -> np.ndarray:
    """Tensor of lambda_k = pi^2 sum_i k_i^2 over all retained modes (read-only)."""
    key = (grid.d, grid.n)
    lam = _EIG_CACHE.get(key)
    if lam is None:
        k2 = np.arange(grid.n, dtype=float) ** 2
        lam = np.zeros(grid.shape)
        for axis in range(grid.d):
            shape = [1] * grid.d
            shape[axis] = grid.n
            lam = lam + k2.reshape(shape)
        lam = np.pi**2 * lam
        lam.setflags(write=False)
        _EIG_CACHE[key] = lam
    return lam


def eigenvalue(k: Sequence[int], grid: GridSpec) -> float:
    k = tuple(int(i) for i in k)
    if len(k) != grid.d:
        raise ValueError(f"multi-index {k} does not match d={grid.d}")
    if any(i < 0 or i >= grid.n for i in k):
        raise IndexError(f"multi-index {k} out of range for n={grid.n}")
    return math.pi**2 * sum(i * i for i in k)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real field on [0,1]^d stored as cosine-basis coefficients."""

    grid: GridSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != self.grid.shape:
            raise ValueError(f"coeffs shape {c.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "SpectralField":
        c = np.zeros(grid.shape)
        c[(0,) * grid.d] = value
        return cls(grid, c)

    @classmethod
    def mode(cls, grid: GridSpec, k: Sequence[int], amplitude: float = 1.0) -> "SpectralField":
        c = np.zeros(grid.shape)
        c[tuple(k)] = amplitude
        return cls(grid, c)

    @classmethod
    def from_physical(cls, grid: GridSpec, values: np.ndarray) -> "SpectralField":
        return cls(grid, to_spectral(values, grid))

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs + other.coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs - other.coeffs)
        return NotImplemented

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return SpectralField(self.grid, self.coeffs * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def physical(self, oversample: int = 1) -> np.ndarray:
        return to_physical(self, oversample)


def _pad(coeffs: np.ndarray, m: int) -> np.ndarray:
    n = coeffs.shape[-1]
    if m == n:
        return coeffs
    d = coeffs.ndim
    out = np.zeros((m,) * d)
    out[(slice(0, n),) * d] = coeffs
    return out


def coeffs_to_physical(coeffs: np.ndarray, oversample: int = 1, d: int | None = None) -> np.ndarray:
    """Cosine synthesis on the midpoint grid; leading axes beyond ``d`` are batch axes."""
    d = coeffs.ndim if d is None else d
    n = coeffs.shape[-1]
    m = oversample * n
    axes = tuple(range(coeffs.ndim - d, coeffs.ndim))
    if m != n:
        padded = np.zeros(coeffs.shape[: coeffs.ndim - d] + (m,) * d)
        padded[(Ellipsis,) + (slice(0, n),) * d] = coeffs
    else:
        padded = coeffs
    return fft.idctn(padded, type=2, norm="ortho", axes=axes) * m ** (d / 2)


def physical_to_coeffs(values: np.ndarray, n: int, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`coeffs_to_physical`, truncated to the first ``n`` modes."""
    d = values.ndim if d is None else d
    m = values.shape[-1]
    axes = tuple(range(values.ndim - d, values.ndim))
    c = fft.dctn(values, type=2, norm="ortho", axes=axes) / m ** (d / 2)
    if m != n:
        c = c[(Ellipsis,) + (slice(0, n),) * d]
    return c


def to_physical(f: SpectralField, oversample: int = 1) -> np.ndarray:
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    return coeffs_to_physical(f.coeffs, oversample, f.grid.d)


def to_spectral(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    if values.shape != (m,) * grid.d or m % grid.n:
        raise ValueError(f"physical array shape {values.shape} incompatible with {grid}")
    return physical_to_coeffs(values, grid.n, grid.d)


def physical_nodes(grid: GridSpec, oversample: int = 1) -> list[np.ndarray]:
    """Meshgrid (``ij`` indexing) of midpoint nodes for the oversampled grid."""
    m = oversample * grid.n
    x = (np.arange(m) + 0.5) / m
    return np.meshgrid(*([x] * grid.d), indexing="ij")


def _zero(d: int) -> tuple[int, ...]:
    return (0,) * d


def fractional_apply(f: SpectralField, s: float) -> SpectralField:
    """(-Delta)^s; for s != 0 the zero mode of the result is 0."""
    if s == 0:
        return f
    lam = eigenvalues(f.grid)
    c = np.zeros(f.grid.shape)
    nz = lam > 0
    c[nz] = lam[nz] ** s * f.coeffs[nz]
    return SpectralField(f.grid, c)


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, -eigenvalues(f.grid) * f.coeffs)


def _seminorm_sq(coeffs: np.ndarray, grid: GridSpec, s: float) -> float:
    lam = eigenvalues(grid)
    c = coeffs.copy()
    c[_zero(grid.d)] = 0.0
    if s == 0:
        return float(np.sum(c * c))
    w = np.zeros_like(lam)
    nz = lam > 0
    w[nz] = lam[nz] ** s
    return float(np.sum(w * c * c))


def norm_sobolev(f: SpectralField, s: float) -> float:
    """||v||_s = (|v|_s^2 + m(v)^2)^(1/2) with |v|_s = ||(-Delta)^(s/2) v||."""
    m0 = f.coeffs[_zero(f.grid.d)]
    return math.sqrt(_seminorm_sq(f.coeffs, f.grid, s) + m0 * m0)


def norm_lp(f: SpectralField, p: float, oversample: int | None = None) -> float:
    """L^p norm by midpoint quadrature on the oversampled grid."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    q = f.grid.quad_oversample if oversample is None else oversample
    u = to_physical(f, q)
    return lp_from_physical(u, p)


def lp_from_physical(u: np.ndarray, p: float) -> float:
    a = np.abs(u)
    if p == 2:
        return float(math.sqrt(np.mean(a * a)))
    if p == 4:
        a2 = a * a
        return float(np.mean(a2 * a2) ** 0.25)
    return float(np.mean(a**p) ** (1.0 / p))


def norm_sup(f: SpectralField, oversample: int | None = None) -> float:
    """Max of |u| over the oversampled grid nodes."""
    q = f.grid.quad_oversample if oversample is None else oversample
    return float(np.max(np.abs(to_physical(f, q))))


def mean(f: SpectralField) -> float:
    return float(f.coeffs[_zero(f.grid.d)])


@dataclass(frozen=True)
class NormBundle:
    h_minus1: float
    l2: float
    l3: float
    l4: float
    h1: float
    h_frac: float
    mean: float

    def as_dict(self) -> dict[str, float]:
        return {
            "h_minus1": self.h_minus1,
            "l2": self.l2,
            "l3": self.l3,
            "l4": self.l4,
            "h1": self.h1,
            "h_frac": self.h_frac,
            "mean": self.mean,
        }


def frac_order(d: int, theta: float) -> float:
    """Sobolev order 2 - d/2 - theta of the fractional error norm."""
    return 2.0 - d / 2.0 - theta


def norm_bundle(f: SpectralField, theta: float = 0.2, physical: np.ndarray | None = None) -> NormBundle:
    """All norms of ``f``; ``physical`` may pass precomputed values on the quadrature grid."""
    u = to_physical(f, f.grid.quad_oversample) if physical is None else physical
    a = np.abs(u)
    a2 = a * a
    return NormBundle(
        h_minus1=norm_sobolev(f, -1),
        l2=norm_sobolev(f, 0),
        l3=float(np.mean(a2 * a) ** (1 / 3)),
        l4=float(np.mean(a2 * a2) ** 0.25),
        h1=norm_sobolev(f, 1),
        h_frac=norm_sobolev(f, frac_order(f.grid.d, theta)),
        mean=mean(f),
    )


def write_snapshot(f: SpectralField, path: str | Path) -> None:
    """Binary snapshot: b"SCHF", u32 version, u32 d, u32 n, n^d little-endian f64 (row-major)."""
    header = SNAPSHOT_MAGIC + struct.pack("<III", SNAPSHOT_VERSION, f.grid.d, f.grid.n)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.coeffs, dtype="<f8").tobytes(order="C"))


def read_snapshot(path: str | Path, quad_oversample: int = 2) -> SpectralField:
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not an SCHF snapshot")
    version, d, n = struct.unpack("<III", data[4:16])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    count = n**d
    body = data[16:]
    if len(body) != 8 * count:
        raise ValueError("truncated snapshot")
    coeffs = np.frombuffer(body, dtype="<f8").reshape((n,) * d)
    return SpectralField(GridSpec(d, n, quad_oversample), coeffs.astype(float))
