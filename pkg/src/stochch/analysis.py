"""Numerical checks: spectral lower bound, interpolation inequality, a priori
functional, stopping times, event probabilities, error norms and rate fits."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, lobpcg

from .dynamics import Trajectory, chemical_potential, f_prime
from .noise import NoiseSpec, convolution_paths
from .spectral import (
    GridSpec,
    SpectralField,
    coeffs_to_physical,
    eigenvalues,
    frac_order,
    lp_from_physical,
    norm_sobolev,
    physical_to_coeffs,
)

__all__ = [
    "RateFit",
    "rate_fit",
    "EventSpec",
    "PathStats",
    "ou_path_stats",
    "event_probability",
    "SpectralEstimate",
    "SpectralEstimateError",
    "spectral_estimate",
    "spectral_matrix",
    "diagonal_quotient",
    "InterpResult",
    "interp_check",
    "interp_ratio",
    "interp_ratio_sup",
    "calibrate_cd",
    "random_mean_zero_field",
    "AprioriSides",
    "apriori_sides",
    "apriori_series",
    "apriori_max_ratio",
    "stopping_time",
    "ERROR_KEYS",
    "error_norms",
    "ErrorAccumulator",
    "regularity_value",
    "regularity_functional",
    "VerificationRecord",
    "write_report",
]


# ---------------------------------------------------------------- rate fits


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: list[tuple[float, float]]
    dropped: int = 0
    slope_stderr: float = float("nan")

    def predict(self, eps) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(eps, dtype=float) ** self.slope


def rate_fit(points: Iterable[tuple[float, float]]) -> RateFit:
    """Least-squares line through (log eps, log value); non-positive values are dropped."""
    pts = [(float(e), float(v)) for e, v in points]
    if any(e <= 0 for e, _ in pts):
        raise ValueError("epsilon values must be positive")
    if len({e for e, _ in pts}) != len(pts):
        raise ValueError("epsilon values must be distinct")
    usable = [(e, v) for e, v in pts if v > 0 and math.isfinite(v)]
    if len(usable) < 3:
        raise ValueError(f"rate fit needs at least 3 positive points, got {len(usable)}")
    x = np.log([e for e, _ in usable])
    y = np.log([v for _, v in usable])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, intercept])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    dof = len(usable) - 2
    sxx = float(np.sum((x - x.mean()) ** 2))
    se = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else float("nan")
    return RateFit(float(slope), float(intercept), r2, usable, len(pts) - len(usable), se)


# ---------------------------------------------------------------- events


@dataclass(frozen=True)
class EventSpec:
    """Thresholds of the good-noise events.

    ``tilde_exponent`` selects the exponent variable in the fractional-norm
    event: "gamma" gives C1 eps^(2 gamma - theta - kappa - 1), "sigma" uses
    2 sigma instead.
    """

    C1: float
    delta: float
    eta: float = 0.0
    theta: float = 0.2
    kappa: float = 0.0
    gamma: float = 1.0
    sigma: float = 1.0
    tilde_exponent: str = "gamma"

    def __post_init__(self):
        if self.C1 <= 0 or self.delta <= 0 or self.theta <= 0 or self.gamma <= 0:
            raise ValueError("C1, delta, theta and gamma must be positive")
        if self.eta < 0 or self.kappa < 0:
            raise ValueError("eta and kappa must be non-negative")
        if self.tilde_exponent not in ("gamma", "sigma"):
            raise ValueError("tilde_exponent must be 'gamma' or 'sigma'")

    @property
    def sigma_star(self) -> float:
        return self.sigma - 0.25

    def omega_threshold(self, epsilon: float) -> float:
        return self.C1 * epsilon ** (self.sigma_star - 2 * self.delta - 2 * self.eta)

    def omega_tilde_threshold(self, epsilon: float) -> float:
        x = self.gamma if self.tilde_exponent == "gamma" else self.sigma
        return self.C1 * epsilon ** (2 * x - self.theta - self.kappa - 1)

    def with_C1(self, C1: float) -> "EventSpec":
        return EventSpec(**{**asdict(self), "C1": C1})


@dataclass
class PathStats:
    """Per-sample maxima over the stored space-time grid."""

    sup_abs: float
    frac_sq_max: float


def ou_path_stats(
    grid: GridSpec,
    spec: NoiseSpec,
    epsilon: float,
    T: float,
    dt: float,
    theta: float,
    base_seed: int,
    sample_ids: Iterable[int],
    oversample: int | None = None,
) -> list[PathStats]:
    """max |Z| over grid points and times, and max_t |Z(t)|^2_s with s = 2 - d/2 - theta."""
    q = grid.quad_oversample if oversample is None else oversample
    lam = eigenvalues(grid)
    w = np.zeros(grid.shape)
    nz = lam > 0
    w[nz] = lam[nz] ** frac_order(grid.d, theta)

    obs = {
        "sup": lambda z, g: float(np.max(np.abs(coeffs_to_physical(z, q, g.d)))),
        "frac": lambda z, g: float(np.sum(w * z * z) + z[(0,) * g.d] ** 2),
    }
    out = convolution_paths(grid, spec, epsilon, T, dt, obs, base_seed, sample_ids)
    return [PathStats(float(s), float(fr)) for s, fr in zip(out["sup"].max(axis=1), out["frac"].max(axis=1))]


def event_probability(samples: Sequence[PathStats], event: EventSpec, epsilon: float, which: str = "omega"):
    """Empirical frequency of the event and its binomial standard error."""
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    if which == "omega":
        thr = event.omega_threshold(epsilon)
        hits = np.array([s.sup_abs <= thr for s in samples])
    elif which == "omega_tilde":
        thr = event.omega_tilde_threshold(epsilon)
        hits = np.array([s.frac_sq_max <= thr for s in samples])
    else:
        raise ValueError(f"unknown event {which!r}")
    p = float(hits.mean())
    return p, math.sqrt(p * (1 - p) / len(samples))


# ---------------------------------------------------------------- spectral estimate


class SpectralEstimateError(RuntimeError):
    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


@dataclass
class SpectralEstimate:
    lambda_min: float
    witness: SpectralField
    iterations: int = 0
    residual: float = 0.0


class _QuotientOperator:
    """z -> eps lam^2 z + (1/eps) lam^{1/2} P[f'(uA) * (lam^{1/2} z)] on mean-zero modes."""

    def __init__(self, uA: SpectralField, epsilon: float, pad: int = 2):
        grid = uA.grid
        self.grid, self.eps, self.pad = grid, epsilon, pad
        lam = eigenvalues(grid)
        self.mask = lam.ravel() > 0
        self.lam = lam.ravel()[self.mask]
        self.sqrt_lam = np.sqrt(self.lam)
        self.fp = f_prime(coeffs_to_physical(uA.coeffs, pad, grid.d))
        self.size = int(self.mask.sum())

    def _embed(self, z: np.ndarray) -> np.ndarray:
        # z: (size, k) -> (k, *grid.shape)
        k = z.shape[1]
        full = np.zeros((k, self.mask.size))
        full[:, self.mask] = (self.sqrt_lam[:, None] * z).T
        return full.reshape((k,) + self.grid.shape)

    def matmat(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return self.matmat(z[:, None])[:, 0]
        phys = coeffs_to_physical(self._embed(z), self.pad, self.grid.d)
        proj = physical_to_coeffs(self.fp * phys, self.grid.n, self.grid.d)
        proj = proj.reshape(z.shape[1], -1)[:, self.mask].T
        return self.eps * self.lam[:, None] ** 2 * z + self.sqrt_lam[:, None] * proj / self.eps

    def diag_guess(self) -> np.ndarray:
        return self.eps * self.lam**2 + float(np.mean(self.fp)) * self.lam / self.eps

    def witness(self, z: np.ndarray) -> SpectralField:
        full = np.zeros(self.mask.size)
        full[self.mask] = self.sqrt_lam * z
        return SpectralField(self.grid, full.reshape(self.grid.shape))


def spectral_matrix(uA: SpectralField, epsilon: float, pad: int = 2) -> np.ndarray:
    """Dense symmetric matrix of the quotient operator (small grids only)."""
    op = _QuotientOperator(uA, epsilon, pad)
    if op.size > 4096:
        raise ValueError("grid too large for a dense matrix")
    M = op.matmat(np.eye(op.size))
    return 0.5 * (M + M.T)


def diagonal_quotient(grid: GridSpec, c: float, epsilon: float) -> float:
    """Closed-form minimum over k != 0 of eps lam_k^2 + (3c^2 - 1) lam_k / eps for uA = c."""
    lam = eigenvalues(grid)
    lam = lam[lam > 0]
    return float(np.min(epsilon * lam**2 + (3 * c * c - 1) * lam / epsilon))


def spectral_estimate(
    uA: SpectralField,
    epsilon: float,
    tol: float = 1e-8,
    max_iter: int = 500,
    block: int = 4,
    seed: int = 0,
    pad: int = 2,
) -> SpectralEstimate:
    """Minimise (eps |grad w|^2 + (1/eps)(f'(uA) w, w)) / |w|_{H^-1}^2 over mean-zero w."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    op = _QuotientOperator(uA, epsilon, pad)
    n = op.size
    if n <= 2 * block + 8:
        M = spectral_matrix(uA, epsilon, pad)
        vals, vecs = np.linalg.eigh(M)
        return SpectralEstimate(float(vals[0]), op.witness(vecs[:, 0]), 0, 0.0)
    A = LinearOperator((n, n), matvec=op.matmat, matmat=op.matmat, dtype=float)
    d = op.diag_guess()
    shift = abs(float(np.min(d))) + 1.0
    precond = 1.0 / (d + shift)
    P = LinearOperator((n, n), matvec=lambda x: precond * np.ravel(x), matmat=lambda X: precond[:, None] * X, dtype=float)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, block)) * precond[:, None]
    order = np.argsort(d)[:block]
    X[order, np.arange(block)] += 1.0
    prev = None
    last = None
    it_total = 0
    chunk = 50
    while it_total < max_iter:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals, vecs = lobpcg(A, X, M=P, largest=False, tol=tol * 1e-2, maxiter=chunk)
        it_total += chunk
        i = int(np.argmin(vals))
        lam_min = float(vals[i])
        z = vecs[:, i]
        res = float(np.linalg.norm(op.matmat(z) - lam_min * z) / np.linalg.norm(z))
        last = SpectralEstimate(lam_min, op.witness(z / np.linalg.norm(z)), it_total, res)
        scale = max(abs(lam_min), 1.0)
        if prev is not None and abs(lam_min - prev) <= tol * scale and res <= math.sqrt(tol) * scale:
            return last
        prev = lam_min
        X = vecs
    raise SpectralEstimateError(f"no convergence after {max_iter} iterations", last)


# ---------------------------------------------------------------- interpolation inequality


@dataclass
class InterpResult:
    lhs: float
    rhs: float
    holds: bool


def _interp_parts(v: SpectralField, r: float, alpha: float, epsilon: float, Ctilde: float, oversample: int = 4):
    if not 2 < r <= 8 / 3 + 1e-12:
        raise ValueError("r must lie in (2, 8/3]")
    if abs(float(v.coeffs[(0,) * v.grid.d])) > 1e-10 * max(1.0, float(np.max(np.abs(v.coeffs)))):
        raise ValueError("v must have zero mean")
    phys = coeffs_to_physical(v.coeffs, oversample, v.grid.d)
    l3 = lp_from_physical(phys, 3)
    l4 = lp_from_physical(phys, 4)
    hm1 = norm_sobolev(v, -1)
    h1 = norm_sobolev(v, 1)
    lhs = Ctilde * l3**3
    quartic = epsilon**alpha * l4**4
    coupling = (Ctilde ** (4 - r) / (4 - r)) * epsilon ** (-alpha * (3 - r)) * hm1 ** ((4 - r) / 2) * h1 ** ((3 * r - 4) / 2)
    return lhs, quartic, coupling


def interp_check(v: SpectralField, r: float, alpha: float, epsilon: float, Ctilde: float, CD: float) -> InterpResult:
    """Ctilde |v|_3^3 <= eps^a |v|_4^4 + CD Ctilde^(4-r)/(4-r) eps^(-a(3-r)) |v|_{-1}^((4-r)/2) |v|_1^((3r-4)/2)."""
    lhs, quartic, coupling = _interp_parts(v, r, alpha, epsilon, Ctilde)
    rhs = quartic + CD * coupling
    return InterpResult(lhs, rhs, bool(lhs <= rhs))


def interp_ratio(v: SpectralField, r: float, alpha: float, epsilon: float, Ctilde: float = 1.0) -> float:
    """Smallest CD for which the inequality holds on v."""
    lhs, quartic, coupling = _interp_parts(v, r, alpha, epsilon, Ctilde)
    if lhs <= quartic:
        return 0.0
    return (lhs - quartic) / coupling


def interp_ratio_sup(v: SpectralField, r: float, alpha: float, epsilon: float, Ctilde: float = 1.0) -> float:
    """Largest CD demanded by any rescaling a*v, a > 0 (closed-form maximiser in a)."""
    lhs, quartic, coupling = _interp_parts(v, r, alpha, epsilon, Ctilde)
    if lhs == 0.0:
        return 0.0
    # (a^3 lhs - a^4 quartic) / (a^r coupling) peaks at a = (3-r) lhs / ((4-r) quartic)
    a = (3 - r) * lhs / ((4 - r) * quartic)
    return (a**3 * lhs - a**4 * quartic) / (a**r * coupling)


def random_mean_zero_field(grid: GridSpec, rng: np.random.Generator) -> SpectralField:
    """Band-limited mean-zero field with random bandwidth, spectral decay and amplitude."""
    lam = eigenvalues(grid)
    kmax = rng.integers(2, grid.n + 1)
    kk = np.sqrt(lam) / math.pi
    decay = rng.uniform(0.0, 3.0)
    coeffs = rng.standard_normal(grid.shape) * (1.0 + kk) ** (-decay)
    coeffs[kk > kmax] = 0.0
    coeffs[(0,) * grid.d] = 0.0
    phys = coeffs_to_physical(coeffs, 1, grid.d)
    amp = 10 ** rng.uniform(-2, 1) / max(float(np.max(np.abs(phys))), 1e-300)
    return SpectralField(grid, coeffs * amp)


def calibrate_cd(
    fields: Sequence[SpectralField], rs, alphas, epsilons, Ctilde: float = 1.0, safety: float = 1.1, over_scale: bool = True
):
    """CD = safety * max calibration ratio over all fields and parameter combinations.

    With ``over_scale`` each calibration field contributes its worst rescaling.
    """
    ratio = interp_ratio_sup if over_scale else interp_ratio
    worst = 0.0
    for v in fields:
        for r in rs:
            for a in alphas:
                for e in epsilons:
                    worst = max(worst, ratio(v, r, a, e, Ctilde))
    return safety * worst, worst


# ---------------------------------------------------------------- a priori functional


@dataclass
class AprioriSides:
    lhs: float
    rhs_terms: dict[str, float]

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))


def _check_matched(a: Trajectory, b: Trajectory):
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times):
        raise ValueError("trajectories live on different time grids")


def apriori_series(traj_Y: Trajectory, traj_Z: Trajectory, rA_sup: float, epsilon: float):
    """Both sides at every grid time; returns (lhs array, dict of rhs-term arrays)."""
    _check_matched(traj_Y, traj_Z)
    e = epsilon
    iy, iz = traj_Y.integrals, traj_Z.integrals
    lhs = traj_Y.norms["h_minus1"] ** 2 + e**4 * iy["grad_sq"] + 13.0 / (8.0 * e) * iy["l4_fourth"]
    terms = {
        "y_l3": iy["l3_cubed"] / e,
        "z_l43": iz["l43"] / e,
        "z_l2": iz["l2_sq"] / e,
        "z_l83": iz["l83"] / e,
        "z_l4": iz["l4_fourth"] / e,
        "r_A": math.sqrt(e) * traj_Y.times * rA_sup**1.5,
    }
    return lhs, terms


def apriori_sides(traj_Y: Trajectory, traj_Z: Trajectory, rA_sup: float, epsilon: float, t: float | None = None) -> AprioriSides:
    """Left side and labelled right-side terms (without the constant C) at time t (default T)."""
    lhs, terms = apriori_series(traj_Y, traj_Z, rA_sup, epsilon)
    j = len(traj_Y.times) - 1 if t is None else int(np.argmin(np.abs(traj_Y.times - t)))
    return AprioriSides(float(lhs[j]), {k: float(v[j]) for k, v in terms.items()})


def apriori_max_ratio(traj_Y: Trajectory, traj_Z: Trajectory, rA_sup: float, epsilon: float) -> float:
    """max_t lhs(t) / rhs(t); +inf if lhs > 0 where rhs vanishes."""
    lhs, terms = apriori_series(traj_Y, traj_Z, rA_sup, epsilon)
    rhs = sum(terms.values())
    pos = rhs > 0
    if np.any((~pos) & (lhs > 0)):
        return math.inf
    return float(np.max(lhs[pos] / rhs[pos])) if np.any(pos) else 0.0


# ---------------------------------------------------------------- stopping time


def stopping_time(traj_Y: Trajectory, gamma: float, epsilon: float) -> float:
    """First grid time the running integral of |Y|_3^3 strictly exceeds eps^gamma, else T."""
    thr = epsilon**gamma
    acc = traj_Y.integrals["l3_cubed"]
    idx = np.flatnonzero(acc > thr)
    return float(traj_Y.times[idx[0]]) if idx.size else traj_Y.T


# ---------------------------------------------------------------- error norms

ERROR_KEYS = ("linf_hm1", "l3", "l4", "l1_hm2", "l2_hs")


class ErrorAccumulator:
    """Observer accumulating the five error functionals against a reference.

    ``reference(t)`` returns (uA(t), wA(t)); the accumulator is called as
    ``acc(j, t, u)`` at every grid time and integrates with the left-endpoint rule.
    """

    def __init__(self, reference, epsilon: float, theta: float = 0.2, oversample: int = 2):
        self.reference = reference
        self.eps, self.theta, self.q = epsilon, theta, oversample
        self.last_t = None
        self.sums = dict(linf_hm1=0.0, l3=0.0, l4=0.0, l1_hm2=0.0, l2_hs=0.0)
        self._pending = None

    def _instant(self, u: SpectralField, t: float):
        uA, wA = self.reference(t)
        e = u - uA
        w = chemical_potential(u, self.eps)
        phys = coeffs_to_physical(e.coeffs, self.q, e.grid.d)
        a = np.abs(phys)
        return dict(
            hm1=norm_sobolev(e, -1),
            l3=float(np.mean(a**3)),
            l4=float(np.mean(a**4)),
            hm2=norm_sobolev(w - wA, -2),
            hs=norm_sobolev(e, frac_order(e.grid.d, self.theta)) ** 2,
        )

    def __call__(self, j: int, t: float, u: SpectralField):
        inst = self._instant(u, t)
        if self._pending is not None:
            dt = t - self.last_t
            p = self._pending
            self.sums["l3"] += p["l3"] * dt
            self.sums["l4"] += p["l4"] * dt
            self.sums["l1_hm2"] += p["hm2"] * dt
            self.sums["l2_hs"] += p["hs"] * dt
        self.sums["linf_hm1"] = max(self.sums["linf_hm1"], inst["hm1"])
        self._pending, self.last_t = inst, t

    def result(self) -> dict[str, float]:
        s = self.sums
        return {
            "linf_hm1": s["linf_hm1"],
            "l3": s["l3"] ** (1 / 3),
            "l4": s["l4"] ** 0.25,
            "l1_hm2": s["l1_hm2"],
            "l2_hs": math.sqrt(s["l2_hs"]),
        }


def error_norms(
    u_states: Sequence[SpectralField],
    uA_states: Sequence[SpectralField],
    times: Sequence[float],
    epsilon: float,
    theta: float = 0.2,
    wA_states: Sequence[SpectralField] | None = None,
) -> dict[str, float]:
    """sup_t |e|_{-1}, |e|_{L3(D_T)}, |e|_{L4(D_T)}, int |w - wA|_{-2} dt, (int |e|_s^2 dt)^(1/2).

    e = u - uA; w is the chemical potential of u and wA defaults to that of uA.
    Time integrals use the left-endpoint rule on ``times``.
    """
    if not (len(u_states) == len(uA_states) == len(times)):
        raise ValueError("mismatched trajectories")
    if wA_states is not None and len(wA_states) != len(times):
        raise ValueError("mismatched chemical-potential reference")
    for a, b in zip(u_states, uA_states):
        if a.grid != b.grid:
            raise ValueError("mismatched grids")
    ref = {}
    for j, t in enumerate(times):
        wA = wA_states[j] if wA_states is not None else chemical_potential(uA_states[j], epsilon)
        ref[j] = (uA_states[j], wA)
    acc = ErrorAccumulator(None, epsilon, theta)
    for j, t in enumerate(times):
        acc.reference = lambda _t, j=j: ref[j]
        acc(j, float(t), u_states[j])
    return acc.result()


# ---------------------------------------------------------------- regularity functional


def regularity_value(traj: Trajectory, p: float, epsilon: float) -> float:
    """|u|^p_{L^inf H^-1} + eps^{p/2} |u|^p_{L2 H^s} + eps^{-p/2} |u|^{2p}_{L4 L4} for one path."""
    dt = np.diff(traj.times)
    frac_int = float(np.sum(traj.norms["h_frac"][:-1] ** 2 * dt))
    l4_int = float(traj.integrals["l4_fourth"][-1])
    return float(np.max(traj.norms["h_minus1"])) ** p + epsilon ** (p / 2) * frac_int ** (p / 2) + epsilon ** (-p / 2) * l4_int ** (p / 2)


def regularity_functional(trajs: Sequence[Trajectory], p: float, epsilon: float) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``regularity_value`` over sample paths."""
    vals = np.array([regularity_value(tr, p, epsilon) for tr in trajs])
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")
    return float(vals.mean()), se


# ---------------------------------------------------------------- reports


@dataclass
class VerificationRecord:
    name: str
    params: dict
    lhs: float | None
    rhs: float | None
    constant_used: float | None
    holds: bool
    samples: int = 1
    stderr: float | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        if not d["extra"]:
            d.pop("extra")
        return d


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_report(records: Sequence[VerificationRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump([r.as_dict() for r in records], fh, indent=2, default=_json_default)
