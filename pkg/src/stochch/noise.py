"""Spectral noise, exact Ornstein-Uhlenbeck sampling of the stochastic convolution.

Each cosine mode k of the stochastic convolution

    Z(t) = eps^sigma int_0^t exp(-(t-s) eps Delta^2) dW(s)

is an independent OU process dz = -eps lam_k^2 z dt + eps^sigma q_k dbeta_k,
which is sampled with its exact Gaussian transition law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .spectral import (
    GridSpec,
    SpectralField,
    coeffs_to_physical,
    eigenvalues,
    frac_order,
)

__all__ = [
    "NoiseSpec",
    "RngStream",
    "OUState",
    "OUPropagator",
    "MCEstimate",
    "mix_seed",
    "noise_weights",
    "white_increment",
    "ou_step",
    "convolution_paths",
    "convolution_sup_stats",
    "convolution_frac_stats",
    "trace_partial_sum",
    "eigen_partial_sums",
]

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(base_seed: int, stream_id: int) -> int:
    """64-bit per-stream seed derived from (base_seed, stream_id)."""
    return _splitmix64((base_seed & _MASK64) ^ _splitmix64(stream_id & _MASK64))


class RngStream:
    """Independent normal-variate stream keyed by (base_seed, stream_id)."""

    def __init__(self, base_seed: int, stream_id: int = 0):
        if base_seed < 0 or stream_id < 0:
            raise ValueError("seeds must be unsigned")
        self.base_seed = int(base_seed)
        self.stream_id = int(stream_id)
        self.generator = np.random.Generator(np.random.PCG64(mix_seed(self.base_seed, self.stream_id)))

    def normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def __repr__(self):
        return f"RngStream(base_seed={self.base_seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family, amplitude exponent sigma and mean-mode exclusion.

    ``kind`` is ``"white"`` (q_k = 1) or ``"colored"`` with
    q_k = lam_k^(1/2 - d/4 - upsilon/2).
    """

    sigma: float = 1.0
    kind: str = "white"
    upsilon: float = 1.0
    exclude_mean_mode: bool = True

    def __post_init__(self):
        if self.kind not in ("white", "colored"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.kind == "colored" and not 0 < self.upsilon <= 1:
            raise ValueError("upsilon must lie in (0, 1]")

    def amplitude(self, epsilon: float) -> float:
        return epsilon**self.sigma

    def as_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "kind": self.kind,
            "upsilon": self.upsilon,
            "exclude_mean_mode": self.exclude_mean_mode,
        }


def noise_weights(grid: GridSpec, spec: NoiseSpec) -> np.ndarray:
    lam = eigenvalues(grid)
    q = np.ones(grid.shape)
    if spec.kind == "colored":
        expo = 0.5 - grid.d / 4.0 - spec.upsilon / 2.0
        nz = lam > 0
        q[nz] = lam[nz] ** expo
        # the zero-mode weight is irrelevant when excluded; keep 1 otherwise
    if spec.exclude_mean_mode:
        q[(0,) * grid.d] = 0.0
    return q


def white_increment(grid: GridSpec, dt: float, spec: NoiseSpec, rng: RngStream) -> SpectralField:
    """Increment of sum_k q_k beta_k(t) e_k over a step dt (no eps^sigma factor)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    q = noise_weights(grid, spec)
    return SpectralField(grid, q * math.sqrt(dt) * rng.normal(grid.shape))


class OUPropagator:
    """Per-mode exact OU transition factors for fixed (grid, spec, epsilon, dt)."""

    def __init__(self, grid: GridSpec, spec: NoiseSpec, epsilon: float, dt: float):
        if dt <= 0:
            raise ValueError("dt must be > 0")
        if epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        self.grid, self.spec, self.epsilon, self.dt = grid, spec, epsilon, dt
        lam = eigenvalues(grid)
        rate = epsilon * lam**2
        self.decay = np.exp(-rate * dt)
        var = np.empty(grid.shape)
        nz = rate > 0
        var[nz] = -np.expm1(-2.0 * rate[nz] * dt) / (2.0 * rate[nz])
        var[~nz] = dt
        self.std = spec.amplitude(epsilon) * noise_weights(grid, spec) * np.sqrt(var)

    def increment(self, xi: np.ndarray) -> np.ndarray:
        return self.std * xi

    def advance(self, z: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return self.decay * z + self.std * xi

    def stationary_variance(self) -> np.ndarray:
        """Per-mode limit eps^(2 sigma - 1) q_k^2 / (2 lam_k^2); inf on an unexcluded zero mode."""
        lam = eigenvalues(self.grid)
        q = noise_weights(self.grid, self.spec)
        out = np.full(self.grid.shape, np.inf)
        nz = lam > 0
        out[nz] = self.epsilon ** (2 * self.spec.sigma - 1) * q[nz] ** 2 / (2 * lam[nz] ** 2)
        if self.spec.exclude_mean_mode:
            out[(0,) * self.grid.d] = 0.0
        return out


@dataclass(frozen=True)
class OUState:
    z: SpectralField
    t: float
    spec: NoiseSpec
    epsilon: float

    @classmethod
    def initial(cls, grid: GridSpec, spec: NoiseSpec, epsilon: float) -> "OUState":
        return cls(SpectralField.zeros(grid), 0.0, spec, epsilon)


_PROP_CACHE: dict = {}


def _propagator(grid, spec, epsilon, dt) -> OUPropagator:
    key = (grid, spec, float(epsilon), float(dt))
    prop = _PROP_CACHE.get(key)
    if prop is None:
        if len(_PROP_CACHE) > 64:
            _PROP_CACHE.clear()
        prop = _PROP_CACHE[key] = OUPropagator(grid, spec, epsilon, dt)
    return prop


def ou_step(state: OUState, dt: float, rng: RngStream) -> OUState:
    """One exact transition of every mode of Z over a step dt."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    grid = state.z.grid
    prop = _propagator(grid, state.spec, state.epsilon, dt)
    z = prop.advance(state.z.coeffs, rng.normal(grid.shape))
    return replace(state, z=SpectralField(grid, z), t=state.t + dt)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    values: np.ndarray = field(repr=False)

    @classmethod
    def from_values(cls, values) -> "MCEstimate":
        v = np.asarray(values, dtype=float)
        if v.size < 2:
            raise ValueError("need at least 2 samples")
        return cls(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), v)


# Observables of a single convolution path, evaluated at every grid time.
Observable = Callable[[np.ndarray, GridSpec], float]


def convolution_paths(
    grid: GridSpec,
    spec: NoiseSpec,
    epsilon: float,
    T: float,
    dt: float,
    observables: dict[str, Observable],
    base_seed: int,
    sample_ids: Iterable[int],
) -> dict[str, np.ndarray]:
    """Simulate Z on the time grid 0, dt, ..., T for each sample and record observables.

    Returns arrays of shape (num_samples, num_times) keyed like ``observables``.
    """
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a positive integer multiple of dt")
    prop = OUPropagator(grid, spec, epsilon, dt)
    ids = list(sample_ids)
    out = {k: np.empty((len(ids), nsteps + 1)) for k in observables}
    for row, sid in enumerate(ids):
        rng = RngStream(base_seed, sid)
        z = np.zeros(grid.shape)
        for j in range(nsteps + 1):
            if j:
                z = prop.advance(z, rng.normal(grid.shape))
            for name, obs in observables.items():
                out[name][row, j] = obs(z, grid)
    return out


def _lp_power_observable(p: float, oversample: int | None = None) -> Observable:
    def obs(z, grid):
        if p == 2:
            return float(np.sum(z * z))
        u = coeffs_to_physical(z, oversample or grid.quad_oversample, grid.d)
        return float(np.mean(np.abs(u) ** p))

    return obs


def _frac_observable(theta: float, p: float) -> Observable:
    def obs(z, grid):
        s = 1.0 - grid.d / 4.0 - theta / 2.0
        lam = eigenvalues(grid)
        w = np.zeros(grid.shape)
        nz = lam > 0
        w[nz] = lam[nz] ** (2 * s)
        if s == 0:
            w[(0,) * grid.d] = 1.0
        return float(np.sum(w * z * z)) ** (p / 2)

    return obs


def convolution_sup_stats(
    grid: GridSpec,
    spec: NoiseSpec,
    epsilon: float,
    T: float,
    dt: float,
    p: float,
    num_samples: int,
    base_seed: int,
    first_sample: int = 0,
) -> MCEstimate:
    """Monte Carlo estimate of E[sup_t ||Z(t)||_{L^p}^p] (sup over the time grid)."""
    if num_samples < 2:
        raise ValueError("num_samples must be >= 2")
    paths = convolution_paths(
        grid, spec, epsilon, T, dt, {"v": _lp_power_observable(p)}, base_seed,
        range(first_sample, first_sample + num_samples),
    )
    return MCEstimate.from_values(paths["v"].max(axis=1))


def convolution_frac_stats(
    grid: GridSpec,
    spec: NoiseSpec,
    epsilon: float,
    T: float,
    dt: float,
    p: float,
    num_samples: int,
    base_seed: int,
    theta: float = 0.2,
    first_sample: int = 0,
) -> MCEstimate:
    """Monte Carlo estimate of E[sup_t ||(-Delta)^(1-d/4-theta/2) Z(t)||^p]."""
    if num_samples < 2:
        raise ValueError("num_samples must be >= 2")
    paths = convolution_paths(
        grid, spec, epsilon, T, dt, {"v": _frac_observable(theta, p)}, base_seed,
        range(first_sample, first_sample + num_samples),
    )
    return MCEstimate.from_values(paths["v"].max(axis=1))


def eigen_partial_sums(d: int, alpha: float, n_max: int) -> np.ndarray:
    """S(N) = sum of lam_k^alpha over 0 < |k|_inf <= N, for N = 1..n_max."""
    k = np.arange(n_max + 1)
    grids = np.meshgrid(*([k] * d), indexing="ij")
    k2 = sum(g.astype(float) ** 2 for g in grids)
    kinf = np.maximum.reduce([g for g in grids]) if d > 1 else grids[0]
    nz = k2 > 0
    terms = np.zeros_like(k2)
    terms[nz] = (np.pi**2 * k2[nz]) ** alpha
    by_shell = np.bincount(kinf.ravel(), weights=terms.ravel(), minlength=n_max + 1)
    return np.cumsum(by_shell)[1:]


def trace_partial_sum(d: int, upsilon: float, n_max: int) -> np.ndarray:
    """Partial sums of Tr((-Delta)^{-1} Q) ~ sum lam_k^(-1/2 - d/4 - upsilon/2)."""
    if not 0 < upsilon <= 1:
        raise ValueError("upsilon must lie in (0, 1]")
    return eigen_partial_sums(d, -0.5 - d / 4.0 - upsilon / 2.0, n_max)


def frac_power(d: int, theta: float) -> float:
    """Exponent 1 - d/4 - theta/2 of the smoothing estimate (half of ``frac_order``)."""
    return frac_order(d, theta) / 2.0
