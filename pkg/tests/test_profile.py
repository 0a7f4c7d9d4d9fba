import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from stochch.dynamics import ModelParams, chemical_potential, recommended_dt, run
from stochch.profile import (
    Interface,
    NoInterfaceError,
    ProfileParams,
    band_values,
    calibrate_gibbs_thomson,
    fit_circle,
    interface_extract,
    interface_potential,
    residual_rA,
    signed_distance,
    tanh_profile,
    write_interface_csv,
)
from stochch.spectral import GridSpec, SpectralField, coeffs_to_physical, mean, physical_nodes, physical_to_coeffs, to_physical


class TestInterface:
    def test_geometry(self):
        c = Interface.circle((0.5, 0.5), 0.25)
        assert c.dim == 2
        assert_allclose(c.inner_volume(), math.pi * 0.0625)
        assert c.mean_curvature() == (4.0,)
        s = Interface.sphere((0.5, 0.5, 0.5), 0.2)
        assert_allclose(s.mean_curvature()[0], 10.0)
        assert_allclose(s.inner_volume(), 4 / 3 * math.pi * 0.008)

    def test_clearance(self):
        c = Interface.circle((0.5, 0.5), 0.25)
        c.validate(0.05)
        with pytest.raises(ValueError):
            c.validate(0.1)
        c.validate(0.1, clearance_factor=2.5)
        two = Interface.circles([(0.3, 0.5), (0.7, 0.5)], [0.15, 0.15])
        with pytest.raises(ValueError):
            two.validate(0.05)

    def test_signed_distance(self):
        c = Interface.circle((0.5, 0.5), 0.25)
        d = signed_distance(c, [np.array([0.5, 0.75, 0.9]), np.array([0.5, 0.5, 0.5])])
        assert_allclose(d, [-0.25, 0.0, 0.15])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ProfileParams(0.05, Interface.sphere((0.5, 0.5, 0.5), 0.2), GridSpec(2, 16))


class TestTanhProfile:
    def setup_method(self):
        self.eps = 0.02
        self.grid = GridSpec(2, 128)
        self.circle = Interface.circle((0.5, 0.5), 0.25)
        self.uA = tanh_profile(ProfileParams(self.eps, self.circle, self.grid))

    def test_values(self):
        x, y = physical_nodes(self.grid, 1)
        u = to_physical(self.uA, 1)
        s = signed_distance(self.circle, [x, y])
        far = np.abs(s) >= 8 * self.eps
        assert np.all(np.abs(u[far]) >= 1 - 1e-4)
        assert np.all(u[s < -8 * self.eps] < 0)
        # interpolate the spectral field onto points of the circle
        theta = np.linspace(0, 2 * math.pi, 16, endpoint=False)
        px = 0.5 + 0.25 * np.cos(theta)
        py = 0.5 + 0.25 * np.sin(theta)
        k = np.arange(self.grid.n)
        w = np.where(k == 0, 1.0, math.sqrt(2.0))
        bx = w * np.cos(math.pi * np.outer(px, k))
        by = w * np.cos(math.pi * np.outer(py, k))
        vals = np.einsum("pi,ij,pj->p", bx, self.uA.coeffs, by)
        assert np.max(np.abs(vals)) < 2e-3

    def test_mean(self):
        assert_allclose(mean(self.uA), 1 - 2 * self.circle.inner_volume(), atol=5e-3)

    def test_one_dimensional_standing_wave(self):
        # the 1D tanh front solves eps u'' = f(u)/eps, so its residual is O(spectral error)
        eps = 0.05
        g = GridSpec(1, 128)
        x = physical_nodes(g, 1)[0]
        uA = SpectralField(g, physical_to_coeffs(np.tanh((x - 0.5) / (math.sqrt(2) * eps)), g.n, 1))
        rA = residual_rA(uA, SpectralField.zeros(g), eps)
        r = coeffs_to_physical(rA.coeffs, 2, 1)
        xs = physical_nodes(g, 2)[0]
        interior = np.abs(xs - 0.5) < 0.5 - 8 * eps
        assert np.max(np.abs(r[interior])) < 1e-3 / eps

    def test_residual_examples(self):
        g = self.grid
        one = SpectralField.constant(g, 1.0)
        assert_allclose(residual_rA(one, SpectralField.zeros(g), self.eps).coeffs, 0.0, atol=1e-12)
        w = SpectralField.constant(g, 0.7)
        assert_allclose(residual_rA(one, w, self.eps).coeffs[0, 0], 0.7)
        with pytest.raises(ValueError):
            residual_rA(one, SpectralField.zeros(GridSpec(2, 8)), self.eps)

    def test_interface_potential(self):
        w = interface_potential(self.grid, self.circle, -0.5)
        assert_allclose(w.coeffs[0, 0], -2.0)
        with pytest.raises(ValueError):
            interface_potential(self.grid, Interface.circles([(0.3, 0.3), (0.7, 0.7)], [0.1, 0.1]), -0.5)


class TestExtraction:
    def test_circle_radius(self):
        g = GridSpec(2, 64)
        c = Interface.circle((0.5, 0.5), 0.25)
        uA = tanh_profile(ProfileParams(0.03, c, g))
        ext = interface_extract(uA)
        assert len(ext.components) == 1
        comp = ext.components[0]
        assert abs(comp.radius - 0.25) <= 2 / (2 * g.n)
        assert_allclose(comp.center, [0.5, 0.5], atol=1e-3)
        assert comp.closed

    def test_two_circles(self):
        g = GridSpec(2, 64)
        c = Interface.circles([(0.3, 0.3), (0.68, 0.68)], [0.15, 0.1])
        uA = tanh_profile(ProfileParams(0.02, c, g))
        radii = sorted(interface_extract(uA).radii)
        assert_allclose(radii, [0.1, 0.15], atol=2 / 128)

    def test_no_interface(self):
        with pytest.raises(NoInterfaceError):
            interface_extract(SpectralField.constant(GridSpec(2, 16), 1.0))

    def test_sphere(self):
        g = GridSpec(3, 32)
        s = Interface.sphere((0.5, 0.5, 0.5), 0.25)
        uA = tanh_profile(ProfileParams(0.04, s, g), clearance_factor=2.0)
        assert abs(interface_extract(uA).components[0].radius - 0.25) <= 2 / 64

    def test_fit_circle_exact(self):
        t = np.linspace(0, 2 * math.pi, 50)
        pts = np.column_stack([0.2 + 0.3 * np.cos(t), -0.1 + 0.3 * np.sin(t)])
        center, radius, rms = fit_circle(pts)
        assert_allclose(center, [0.2, -0.1], atol=1e-12)
        assert_allclose(radius, 0.3) and rms < 1e-12

    def test_csv(self, tmp_path):
        g = GridSpec(2, 32)
        uA = tanh_profile(ProfileParams(0.05, Interface.circle((0.5, 0.5), 0.25), g))
        path = tmp_path / "iface.csv"
        write_interface_csv(interface_extract(uA), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "component_id,x,y" and len(lines) > 10


class TestGibbsThomson:
    def test_relaxed_circle_potential(self):
        # after a short relaxation the chemical potential on the interface is ~ lam * H with lam < 0
        eps = 0.05
        g = GridSpec(2, 64)
        c = Interface.circle((0.5, 0.5), 0.25)
        uA = tanh_profile(ProfileParams(eps, c, g))
        p = ModelParams(eps, g, recommended_dt(eps), 400 * recommended_dt(eps))
        u = run(p, uA, stride=400, keep_states=True).states[-1]
        w = chemical_potential(u, eps)
        lam = calibrate_gibbs_thomson(w, u, c.mean_curvature()[0])
        assert -0.6 < lam < -0.35
        vals = band_values(w, u)
        assert np.std(vals) < 0.05 * abs(np.mean(vals))

    def test_empty_band(self):
        g = GridSpec(2, 8)
        one = SpectralField.constant(g, 1.0)
        with pytest.raises(NoInterfaceError):
            calibrate_gibbs_thomson(one, one, 4.0)
