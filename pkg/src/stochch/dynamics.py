"""Exponential-Euler time stepping for the (stochastic) Cahn-Hilliard equation.

Per mode k the update is

    u'_k = E_k u_k + phi_k dt N_k(u) + zeta_k,
    E_k = exp(-eps lam_k^2 dt),  phi_k dt = (1 - E_k) / (eps lam_k^2),
    N_k(u) = -(lam_k / eps) [f(u)]_k,

with zeta the exact OU increment of the stochastic convolution.  The zero
mode has E_0 = 1 and N_0 = 0, so the mean is conserved bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .noise import NoiseSpec, OUPropagator, OUState, RngStream
from .spectral import (
    GridSpec,
    NormBundle,
    SpectralField,
    coeffs_to_physical,
    eigenvalues,
    frac_order,
    physical_to_coeffs,
)

__all__ = [
    "BlowUpError",
    "ModelParams",
    "Trajectory",
    "f",
    "f_prime",
    "f_eval",
    "taylor_identity_check",
    "chemical_potential",
    "ginzburg_landau_energy",
    "step",
    "step_deterministic",
    "step_translated",
    "run",
    "run_translated",
    "write_norm_csv",
    "recommended_dt",
]


class BlowUpError(RuntimeError):
    """Non-finite state produced by a step."""

    def __init__(self, message: str = "blow-up", step: int | None = None):
        super().__init__(message if step is None else f"{message} at step {step}")
        self.step = step


def f(u):
    return u * u * u - u


def f_prime(u):
    return 3.0 * u * u - 1.0


def recommended_dt(epsilon: float, c: float = 0.1) -> float:
    """Explicit-nonlinearity stability default dt = c * eps^3."""
    return c * epsilon**3


@dataclass(frozen=True)
class ModelParams:
    epsilon: float
    grid: GridSpec
    dt: float
    T: float
    noise: NoiseSpec | None = None
    dealias_pad: int = 2
    theta: float = 0.2

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be > 0")
        if self.dt > self.T * (1 + 1e-12):
            raise ValueError("dt must not exceed T")
        if self.dealias_pad < 2:
            raise ValueError("dealias_pad must be >= 2 (aliased cubic)")

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.dt))

    def deterministic(self) -> "ModelParams":
        return ModelParams(self.epsilon, self.grid, self.dt, self.T, None, self.dealias_pad, self.theta)


def _require_pad(pad: int):
    if pad < 2:
        raise ValueError("pad must be >= 2 (aliased cubic)")


def f_eval(u: SpectralField, pad: int = 2) -> SpectralField:
    """Coefficients of u^3 - u, evaluated on the pad*n grid and truncated to n modes."""
    _require_pad(pad)
    phys = coeffs_to_physical(u.coeffs, pad, u.grid.d)
    return SpectralField(u.grid, physical_to_coeffs(f(phys), u.grid.n, u.grid.d))


def taylor_identity_check(a, b):
    """|f(a) - f(b) - [(a-b) f'(a) + (a-b)^3 - 3 (a-b)^2 a]|, elementwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = a - b
    res = np.abs(f(a) - f(b) - (h * f_prime(a) + h**3 - 3.0 * h * h * a))
    return float(res) if res.ndim == 0 else res


def chemical_potential(u: SpectralField, epsilon: float, pad: int = 2) -> SpectralField:
    """w = -eps Delta u + f(u) / eps."""
    lam = eigenvalues(u.grid)
    fu = f_eval(u, pad).coeffs
    return SpectralField(u.grid, epsilon * lam * u.coeffs + fu / epsilon)


def ginzburg_landau_energy(u: SpectralField, epsilon: float, pad: int = 2) -> float:
    """int eps |grad u|^2 / 2 + F(u) / eps with F(u) = (u^2 - 1)^2 / 4."""
    lam = eigenvalues(u.grid)
    grad_sq = float(np.sum(lam * u.coeffs**2))
    phys = coeffs_to_physical(u.coeffs, pad, u.grid.d)
    potential = float(np.mean(0.25 * (phys * phys - 1.0) ** 2))
    return 0.5 * epsilon * grad_sq + potential / epsilon


class _Kernel:
    """Precomputed per-mode factors of the exponential-Euler map."""

    def __init__(self, params: ModelParams):
        grid, eps, dt = params.grid, params.epsilon, params.dt
        self.grid, self.pad, self.eps = grid, params.dealias_pad, eps
        lam = eigenvalues(grid)
        rate = eps * lam**2
        self.lam = lam
        self.decay = np.exp(-rate * dt)
        phidt = np.empty(grid.shape)
        nz = rate > 0
        phidt[nz] = -np.expm1(-rate[nz] * dt) / rate[nz]
        phidt[~nz] = dt
        # N_k = -(lam_k / eps) [f(u)]_k folded into one factor
        self.nl_factor = -phidt * lam / eps
        self.rA_factor = phidt * lam
        self.noise = OUPropagator(grid, params.noise, eps, dt) if params.noise is not None else None

    def physical(self, c: np.ndarray) -> np.ndarray:
        return coeffs_to_physical(c, self.pad, self.grid.d)

    def spectral(self, phys: np.ndarray) -> np.ndarray:
        return physical_to_coeffs(phys, self.grid.n, self.grid.d)

    def deterministic(self, u: np.ndarray, phys: np.ndarray | None = None) -> np.ndarray:
        if phys is None:
            phys = self.physical(u)
        return self.decay * u + self.nl_factor * self.spectral(f(phys))


@lru_cache(maxsize=32)
def _kernel(params: ModelParams) -> _Kernel:
    return _Kernel(params)


def _finite(c: np.ndarray, step: int | None = None) -> np.ndarray:
    if not np.all(np.isfinite(c)):
        raise BlowUpError("blow-up", step)
    return c


def step(
    state: SpectralField, params: ModelParams, ou: OUState, rng: RngStream
) -> tuple[SpectralField, OUState]:
    """Stochastic step; the same OU increment advances ``ou`` so that Z stays on the path."""
    k = _kernel(params)
    _finite(state.coeffs)
    u = k.deterministic(state.coeffs)
    if k.noise is not None:
        zeta = k.noise.increment(rng.normal(params.grid.shape))
        u = u + zeta
        z = k.noise.decay * ou.z.coeffs + zeta
    else:
        z = ou.z.coeffs
    _finite(u)
    return (
        SpectralField(params.grid, u),
        OUState(SpectralField(params.grid, z), ou.t + params.dt, ou.spec, ou.epsilon),
    )


def step_deterministic(state: SpectralField, params: ModelParams) -> SpectralField:
    k = _kernel(params.deterministic())
    _finite(state.coeffs)
    return SpectralField(params.grid, _finite(k.deterministic(state.coeffs)))


def _translated_update(k: _Kernel, Y, uA_phys, fA, rA, Z) -> np.ndarray:
    phys = uA_phys + k.physical(Y + Z)
    nl = k.spectral(f(phys)) - fA
    return k.decay * Y + k.nl_factor * nl + k.rA_factor * rA


def step_translated(
    Y: SpectralField,
    params: ModelParams,
    uA: SpectralField,
    rA: SpectralField,
    Z: SpectralField,
) -> SpectralField:
    """Exponential-Euler step of the random PDE for Y = u - uA - Z."""
    for other in (uA, rA, Z):
        if other.grid != Y.grid:
            raise ValueError("uA, rA, Z must share Y's grid")
    k = _kernel(params.deterministic())
    _finite(Y.coeffs)
    uA_phys = k.physical(uA.coeffs)
    fA = k.spectral(f(uA_phys))
    return SpectralField(params.grid, _finite(_translated_update(k, Y.coeffs, uA_phys, fA, rA.coeffs, Z.coeffs)))


# ---------------------------------------------------------------------------
# trajectories

INTEGRAL_KEYS = ("l3_cubed", "l4_fourth", "grad_sq", "l43", "l2_sq", "l83")
NORM_KEYS = ("h_minus1", "l2", "l3", "l4", "h1", "h_frac", "mean")


class _NormWeights:
    def __init__(self, grid: GridSpec, theta: float):
        lam = eigenvalues(grid)
        nz = lam > 0
        self.zero = (0,) * grid.d
        self.w_m1 = np.zeros(grid.shape)
        self.w_m1[nz] = 1.0 / lam[nz]
        self.w_1 = lam.copy()
        s = frac_order(grid.d, theta)
        self.w_s = np.zeros(grid.shape)
        self.w_s[nz] = lam[nz] ** s

    def measure(self, c: np.ndarray, phys: np.ndarray) -> tuple[dict, dict]:
        c2 = c * c
        m = float(c[self.zero])
        a = np.abs(phys)
        a2 = a * a
        l3c = float(np.mean(a2 * a))
        l4f = float(np.mean(a2 * a2))
        l2sq = float(np.sum(c2))
        grad = float(np.sum(self.w_1 * c2))
        norms = {
            "h_minus1": math.sqrt(float(np.sum(self.w_m1 * c2)) + m * m),
            "l2": math.sqrt(l2sq),
            "l3": l3c ** (1 / 3),
            "l4": l4f**0.25,
            "h1": math.sqrt(grad + m * m),
            "h_frac": math.sqrt(float(np.sum(self.w_s * c2)) + m * m),
            "mean": m,
        }
        a13 = np.cbrt(a)
        a43 = a * a13
        powers = {
            "l3_cubed": l3c,
            "l4_fourth": l4f,
            "grad_sq": grad,
            "l43": float(np.mean(a43)),
            "l2_sq": l2sq,
            "l83": float(np.mean(a43 * a43)),
        }
        return norms, powers


@dataclass
class Trajectory:
    """Time series of a run.

    ``times`` holds every step time; norms and running integrals are recorded at
    every step, states only every ``stride`` steps (``state_times``).  Running
    integrals use the left-endpoint rule, so ``integrals[key][j]`` covers [0, t_j].
    """

    times: np.ndarray
    norms: dict[str, np.ndarray]
    integrals: dict[str, np.ndarray]
    states: list[SpectralField] = field(default_factory=list)
    state_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    instant: dict[str, np.ndarray] = field(default_factory=dict)
    epsilon: float = float("nan")

    @property
    def norm_series(self) -> list[NormBundle]:
        return [NormBundle(**{k: float(self.norms[k][j]) for k in NORM_KEYS}) for j in range(len(self.times))]

    @property
    def running_integrals(self) -> dict[str, np.ndarray]:
        return self.integrals

    @property
    def T(self) -> float:
        return float(self.times[-1])


class _Recorder:
    def __init__(self, grid: GridSpec, theta: float, nsteps: int, dt: float, stride: int, keep_states: bool):
        self.weights = _NormWeights(grid, theta)
        self.grid, self.dt, self.stride, self.keep = grid, dt, stride, keep_states
        self.times = np.arange(nsteps + 1) * dt
        self.norms = {k: np.empty(nsteps + 1) for k in NORM_KEYS}
        self.inst = {k: np.empty(nsteps + 1) for k in INTEGRAL_KEYS}
        self.states: list[SpectralField] = []
        self.state_times: list[float] = []

    def record(self, j: int, c: np.ndarray, phys: np.ndarray):
        norms, powers = self.weights.measure(c, phys)
        for k, v in norms.items():
            self.norms[k][j] = v
        for k, v in powers.items():
            self.inst[k][j] = v
        if self.keep and (j % self.stride == 0 or j == len(self.times) - 1):
            self.states.append(SpectralField(self.grid, c))
            self.state_times.append(self.times[j])

    def finish(self, epsilon: float) -> Trajectory:
        integrals = {}
        for k, v in self.inst.items():
            acc = np.zeros_like(v)
            acc[1:] = np.cumsum(v[:-1]) * self.dt
            integrals[k] = acc
        return Trajectory(
            times=self.times,
            norms=self.norms,
            integrals=integrals,
            states=self.states,
            state_times=np.array(self.state_times),
            instant=self.inst,
            epsilon=epsilon,
        )


Observer = Callable[[int, float, SpectralField], None]


def run(
    params: ModelParams,
    initial: SpectralField,
    observers: Sequence[Observer] = (),
    rng: RngStream | None = None,
    stride: int = 1,
    keep_states: bool = True,
) -> Trajectory:
    """Integrate from ``initial`` over [0, T]; stochastic iff params.noise and rng are set.

    Observers are called as ``obs(j, t_j, u_j)`` at every grid time.
    """
    if initial.grid != params.grid:
        raise ValueError("initial field is not on params.grid")
    stochastic = params.noise is not None and rng is not None
    k = _kernel(params if stochastic else params.deterministic())
    n = params.nsteps
    rec = _Recorder(params.grid, params.theta, n, params.dt, stride, keep_states)
    q = params.grid.quad_oversample
    u = initial.coeffs.copy()
    for j in range(n + 1):
        phys = k.physical(u)
        if not np.all(np.isfinite(phys)):
            raise BlowUpError("blow-up", j)
        rec.record(j, u, phys if q == k.pad else coeffs_to_physical(u, q, params.grid.d))
        if observers:
            field_j = SpectralField(params.grid, u)
            for obs in observers:
                obs(j, rec.times[j], field_j)
        if j == n:
            break
        u = k.deterministic(u, phys)
        if stochastic:
            u = u + k.noise.increment(rng.normal(params.grid.shape))
    return rec.finish(params.epsilon)


def run_translated(
    params: ModelParams,
    uA: SpectralField,
    rA: SpectralField,
    rng: RngStream | None,
    stride: int = 1,
    keep_states: bool = True,
) -> tuple[Trajectory, Trajectory]:
    """Integrate Y (random PDE, Y(0) = 0) and Z (exact OU, Z(0) = 0) on one noise path.

    ``uA`` and ``rA`` are held fixed in time (stationary ansatz).  Returns
    (trajectory of Y, trajectory of Z); u = uA + Y + Z on the shared time grid.
    """
    grid = params.grid
    kd = _kernel(params.deterministic())
    prop = OUPropagator(grid, params.noise, params.epsilon, params.dt) if params.noise is not None else None
    n = params.nsteps
    rec_y = _Recorder(grid, params.theta, n, params.dt, stride, keep_states)
    rec_z = _Recorder(grid, params.theta, n, params.dt, stride, keep_states)
    q = grid.quad_oversample
    uA_phys = kd.physical(uA.coeffs)
    fA = kd.spectral(f(uA_phys))
    Y = np.zeros(grid.shape)
    Z = np.zeros(grid.shape)
    for j in range(n + 1):
        py = coeffs_to_physical(Y, q, grid.d)
        if not np.all(np.isfinite(py)):
            raise BlowUpError("blow-up", j)
        rec_y.record(j, Y, py)
        rec_z.record(j, Z, coeffs_to_physical(Z, q, grid.d))
        if j == n:
            break
        Y = _translated_update(kd, Y, uA_phys, fA, rA.coeffs, Z)
        if prop is not None and rng is not None:
            Z = prop.advance(Z, rng.normal(grid.shape))
    return rec_y.finish(params.epsilon), rec_z.finish(params.epsilon)


CSV_COLUMNS = ("t", "h_minus1", "l2", "l3", "l4", "h1", "h_frac", "mean", "int_l3_cubed", "int_l4_fourth")


def write_norm_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for j, t in enumerate(traj.times):
            w.writerow(
                [repr(float(t))]
                + [repr(float(traj.norms[k][j])) for k in NORM_KEYS]
                + [repr(float(traj.integrals["l3_cubed"][j])), repr(float(traj.integrals["l4_fourth"][j]))]
            )
