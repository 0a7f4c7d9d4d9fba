"""Leading-order sharp-interface ansatz and zero-level-set extraction."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from skimage import measure

from .dynamics import f
from .spectral import (
    GridSpec,
    SpectralField,
    coeffs_to_physical,
    eigenvalues,
    physical_nodes,
    physical_to_coeffs,
    to_physical,
)

__all__ = [
    "Interface",
    "ProfileParams",
    "NoInterfaceError",
    "InterfaceComponent",
    "ExtractedInterface",
    "signed_distance",
    "tanh_profile",
    "residual_rA",
    "interface_potential",
    "calibrate_gibbs_thomson",
    "band_values",
    "interface_extract",
    "fit_circle",
    "write_interface_csv",
]


class NoInterfaceError(ValueError):
    pass


@dataclass(frozen=True)
class Interface:
    """Union of disjoint circles (d=2) or spheres (d=3); D^- is the inside."""

    kind: str
    centers: tuple[tuple[float, ...], ...]
    radii: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("circle", "sphere", "union-of-disjoint-circles"):
            raise ValueError(f"unknown interface kind {self.kind!r}")
        centers = tuple(tuple(float(x) for x in c) for c in self.centers)
        radii = tuple(float(r) for r in self.radii)
        if len(centers) != len(radii) or not radii:
            raise ValueError("need one radius per center")
        if any(r <= 0 for r in radii):
            raise ValueError("radii must be positive")
        if self.kind in ("circle", "sphere") and len(radii) != 1:
            raise ValueError(f"{self.kind} takes exactly one center")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def circle(cls, center, radius) -> "Interface":
        return cls("circle", (tuple(center),), (radius,))

    @classmethod
    def sphere(cls, center, radius) -> "Interface":
        return cls("sphere", (tuple(center),), (radius,))

    @classmethod
    def circles(cls, centers, radii) -> "Interface":
        return cls("union-of-disjoint-circles", tuple(map(tuple, centers)), tuple(radii))

    @property
    def dim(self) -> int:
        return len(self.centers[0])

    def inner_volume(self) -> float:
        if self.dim == 2:
            return sum(math.pi * r * r for r in self.radii)
        if self.dim == 3:
            return sum(4.0 / 3.0 * math.pi * r**3 for r in self.radii)
        return sum(2 * r for r in self.radii)

    def mean_curvature(self) -> tuple[float, ...]:
        """Sum of principal curvatures (d-1)/R per component."""
        return tuple((self.dim - 1) / r for r in self.radii)

    def validate(self, epsilon: float, clearance_factor: float = 4.0) -> None:
        gap = clearance_factor * epsilon
        for c, r in zip(self.centers, self.radii):
            if min(min(x - r, 1.0 - x - r) for x in c) < gap - 1e-12:
                raise ValueError(f"ball at {c} with radius {r} is within {gap:g} of the boundary")
        for i in range(len(self.radii)):
            for j in range(i + 1, len(self.radii)):
                dist = math.dist(self.centers[i], self.centers[j])
                if dist - self.radii[i] - self.radii[j] < gap - 1e-12:
                    raise ValueError(f"balls {i} and {j} are closer than {gap:g}")


@dataclass(frozen=True)
class ProfileParams:
    epsilon: float
    interface: Interface
    grid: GridSpec

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.interface.dim != self.grid.d:
            raise ValueError("interface dimension does not match the grid")


def signed_distance(interface: Interface, points: Sequence[np.ndarray]) -> np.ndarray:
    """Distance to the nearest sphere, positive outside every ball."""
    best = None
    for c, r in zip(interface.centers, interface.radii):
        dist = np.sqrt(sum((x - ci) ** 2 for x, ci in zip(points, c))) - r
        best = dist if best is None else np.minimum(best, dist)
    return best


def tanh_profile(p: ProfileParams, clearance_factor: float = 4.0) -> SpectralField:
    """u_A = tanh(s(x) / (sqrt(2) eps)), s the signed distance; -1 inside, +1 outside."""
    p.interface.validate(p.epsilon, clearance_factor)
    nodes = physical_nodes(p.grid, 1)
    s = signed_distance(p.interface, nodes)
    values = np.tanh(s / (math.sqrt(2.0) * p.epsilon))
    return SpectralField(p.grid, physical_to_coeffs(values, p.grid.n, p.grid.d))


def residual_rA(uA: SpectralField, wA: SpectralField, epsilon: float, pad: int = 2) -> SpectralField:
    """r_A = w_A + eps Delta u_A - f(u_A) / eps."""
    if uA.grid != wA.grid:
        raise ValueError("uA and wA must share a grid")
    grid = uA.grid
    lam = eigenvalues(grid)
    fu = physical_to_coeffs(f(coeffs_to_physical(uA.coeffs, pad, grid.d)), grid.n, grid.d)
    return SpectralField(grid, wA.coeffs - epsilon * lam * uA.coeffs - fu / epsilon)


def interface_potential(grid: GridSpec, interface: Interface, lam_fit: float) -> SpectralField:
    """Constant chemical potential lam_fit * H of a single stationary sphere."""
    if len(interface.radii) != 1:
        raise ValueError("a constant interface potential needs a single component")
    return SpectralField.constant(grid, lam_fit * interface.mean_curvature()[0])


def band_values(w: SpectralField, u: SpectralField, band: float = 0.9, oversample: int = 2) -> np.ndarray:
    """Samples of w on the diffuse-interface band |u| < band."""
    uw = to_physical(u, oversample)
    ww = to_physical(w, oversample)
    return ww[np.abs(uw) < band]


def calibrate_gibbs_thomson(w: SpectralField, u: SpectralField, curvature: float, band: float = 0.9) -> float:
    """lam_fit = <w>_band / H from a relaxed reference state."""
    vals = band_values(w, u, band)
    if vals.size == 0:
        raise NoInterfaceError("empty interface band")
    return float(np.mean(vals) / curvature)


@dataclass
class InterfaceComponent:
    points: np.ndarray = field(repr=False)
    center: np.ndarray
    radius: float
    rms: float
    closed: bool = True


@dataclass
class ExtractedInterface:
    components: list[InterfaceComponent]

    @property
    def radii(self) -> list[float]:
        return [c.radius for c in self.components]


def fit_circle(points: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Algebraic least-squares circle/sphere fit; returns (center, radius, rms residual)."""
    pts = np.asarray(points, dtype=float)
    A = np.column_stack([2.0 * pts, np.ones(len(pts))])
    b = np.sum(pts * pts, axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    center = sol[:-1]
    radius = math.sqrt(sol[-1] + float(center @ center))
    rms = float(np.sqrt(np.mean((np.linalg.norm(pts - center, axis=1) - radius) ** 2)))
    return center, radius, rms


def interface_extract(u: SpectralField, oversample: int = 2, min_points: int = 8) -> ExtractedInterface:
    """Zero level set by marching squares (d=2) or marching cubes (d=3, one point cloud)."""
    grid = u.grid
    if grid.d not in (2, 3):
        raise ValueError("interface extraction needs d = 2 or 3")
    phys = to_physical(u, oversample)
    if phys.min() >= 0 or phys.max() <= 0:
        raise NoInterfaceError("no interface: field has no sign change")
    m = phys.shape[0]
    comps = []
    if grid.d == 2:
        for contour in measure.find_contours(phys, 0.0):
            if len(contour) < min_points:
                continue
            pts = (contour + 0.5) / m
            closed = bool(np.allclose(contour[0], contour[-1]))
            center, radius, rms = fit_circle(pts)
            comps.append(InterfaceComponent(pts, center, radius, rms, closed))
    else:
        verts, *_ = measure.marching_cubes(phys, 0.0)
        pts = (verts + 0.5) / m
        center, radius, rms = fit_circle(pts)
        comps.append(InterfaceComponent(pts, center, radius, rms, True))
    if not comps:
        raise NoInterfaceError("no interface: only degenerate contours")
    return ExtractedInterface(comps)


def write_interface_csv(extracted: ExtractedInterface, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component_id", "x", "y"])
        for i, comp in enumerate(extracted.components):
            for pt in comp.points:
                w.writerow([i, repr(float(pt[0])), repr(float(pt[1]))])
