import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from stochch.noise import (
    MCEstimate,
    NoiseSpec,
    OUPropagator,
    OUState,
    RngStream,
    convolution_frac_stats,
    convolution_paths,
    convolution_sup_stats,
    eigen_partial_sums,
    mix_seed,
    noise_weights,
    ou_step,
    trace_partial_sum,
    white_increment,
)
from stochch.spectral import GridSpec, eigenvalues, mean


class TestRngStream:
    def test_reproducible(self):
        a = RngStream(123, 7).normal((5, 5))
        b = RngStream(123, 7).normal((5, 5))
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        assert not np.array_equal(RngStream(123, 7).normal(10), RngStream(123, 8).normal(10))
        assert not np.array_equal(RngStream(123, 7).normal(10), RngStream(124, 7).normal(10))

    @settings(max_examples=50)
    @given(base=st.integers(0, 2**64 - 1), stream=st.integers(0, 2**64 - 1))
    def test_mix_in_range(self, base, stream):
        assert 0 <= mix_seed(base, stream) < 2**64

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            RngStream(-1, 0)


class TestNoiseSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec(kind="pink")
        with pytest.raises(ValueError):
            NoiseSpec(sigma=0)
        with pytest.raises(ValueError):
            NoiseSpec(kind="colored", upsilon=1.5)

    def test_weights(self):
        g = GridSpec(2, 8)
        lam = eigenvalues(g)
        w = noise_weights(g, NoiseSpec())
        assert w[0, 0] == 0 and np.all(w.ravel()[1:] == 1)
        c = noise_weights(g, NoiseSpec(kind="colored", upsilon=0.5))
        assert_allclose(c[1, 2], lam[1, 2] ** (0.5 - 0.5 - 0.25))
        assert noise_weights(g, NoiseSpec(exclude_mean_mode=False))[0, 0] == 1


class TestWhiteIncrement:
    def test_variance(self):
        g = GridSpec(2, 4)
        rng = RngStream(1, 0)
        draws = np.array([white_increment(g, 1.0, NoiseSpec(), rng).coeffs[1, 0] for _ in range(20000)])
        est = MCEstimate.from_values(draws**2)
        assert abs(est.mean - 1.0) <= 3 * est.stderr

    def test_colored_variance(self):
        g = GridSpec(2, 4)
        rng = RngStream(2, 0)
        dt = 0.5
        spec = NoiseSpec(kind="colored", upsilon=1.0)
        draws = np.array([white_increment(g, dt, spec, rng).coeffs[1, 0] for _ in range(20000)])
        est = MCEstimate.from_values(draws**2 / dt)
        assert abs(est.mean - 1 / math.pi**2) <= 3 * est.stderr

    def test_mean_zero_and_dt(self):
        g = GridSpec(2, 8)
        assert mean(white_increment(g, 0.3, NoiseSpec(), RngStream(0))) == 0.0
        with pytest.raises(ValueError):
            white_increment(g, 0.0, NoiseSpec(), RngStream(0))


class TestOU:
    def test_one_step_variance_closed_form(self):
        g = GridSpec(2, 4)
        eps, sigma, dt = 0.3, 1.5, 0.01
        prop = OUPropagator(g, NoiseSpec(sigma=sigma), eps, dt)
        lam = math.pi**2
        expect = eps ** (2 * sigma) * (1 - math.exp(-2 * eps * lam**2 * dt)) / (2 * eps * lam**2)
        assert_allclose(prop.std[1, 0] ** 2, expect, rtol=1e-12)

    def test_stationary_limit(self):
        g = GridSpec(2, 4)
        eps, sigma = 0.2, 1.0
        prop = OUPropagator(g, NoiseSpec(sigma=sigma), eps, 1e6)
        lam = eigenvalues(g)
        assert_allclose(prop.std[1:, :] ** 2, eps ** (2 * sigma - 1) / (2 * lam[1:, :] ** 2), rtol=1e-12)
        assert_allclose(prop.stationary_variance()[1:, :], prop.std[1:, :] ** 2, rtol=1e-12)

    def test_initial_and_step(self):
        g = GridSpec(2, 8)
        st0 = OUState.initial(g, NoiseSpec(), 0.1)
        assert np.all(st0.z.coeffs == 0) and st0.t == 0
        st1 = ou_step(st0, 0.01, RngStream(3, 0))
        assert st1.t == pytest.approx(0.01)
        assert mean(st1.z) == 0.0
        with pytest.raises(ValueError):
            ou_step(st0, -1.0, RngStream(3, 0))

    def test_exact_vs_fine_euler(self):
        # one mode, exact transition vs Euler-Maruyama with dt/200 (smaller sample than the acceptance run)
        eps, dt, lam, N = 0.5, 0.05, math.pi**2, 4000
        a = eps * lam**2
        rng = np.random.default_rng(11)
        x = np.zeros(N)
        h = dt / 200
        for _ in range(200):
            x = x - a * x * h + eps * math.sqrt(h) * rng.standard_normal(N)
        prop = OUPropagator(GridSpec(1, 4), NoiseSpec(sigma=1.0), eps, dt)
        exact_var = prop.std[1] ** 2
        est = MCEstimate.from_values(x**2)
        assert abs(est.mean - exact_var) <= 3 * est.stderr


class TestConvolutionStats:
    def test_sigma_scaling_is_deterministic(self):
        g = GridSpec(2, 8)
        kw = dict(grid=g, epsilon=0.2, T=0.2, dt=0.02, p=2, num_samples=4, base_seed=5)
        a = convolution_sup_stats(spec=NoiseSpec(sigma=1.0), **kw)
        b = convolution_sup_stats(spec=NoiseSpec(sigma=2.0), **kw)
        assert_allclose(b.values, a.values * 0.2**2, rtol=1e-12)

    def test_frac_reduces_to_l2(self):
        g = GridSpec(2, 8)
        kw = dict(grid=g, spec=NoiseSpec(), epsilon=0.3, T=0.1, dt=0.01, p=2, num_samples=3, base_seed=2)
        a = convolution_sup_stats(**kw)
        b = convolution_frac_stats(theta=1.0, **kw)  # 2 - d/2 - theta = 0
        assert_allclose(a.values, b.values, rtol=1e-12)

    def test_single_mode_variance(self):
        g = GridSpec(1, 4)
        eps = 0.5
        prop = OUPropagator(g, NoiseSpec(), eps, 0.2)
        out = convolution_paths(g, NoiseSpec(), eps, 0.2, 0.2, {"z1": lambda z, gr: z[1]}, 9, range(5000))
        est = MCEstimate.from_values(out["z1"][:, -1] ** 2)
        assert abs(est.mean - prop.std[1] ** 2) <= 3 * est.stderr

    def test_T_multiple_of_dt(self):
        with pytest.raises(ValueError):
            convolution_paths(GridSpec(1, 4), NoiseSpec(), 0.5, 0.15, 0.1, {}, 0, [0])

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            convolution_sup_stats(GridSpec(1, 4), NoiseSpec(), 0.5, 0.1, 0.1, 2, 1, 0)


class TestTraceSums:
    def test_single_term(self):
        for d in (1, 2, 3):
            s = trace_partial_sum(d, 0.5, 1)
            # shell N=1 holds every k with entries in {0,1}; check the (1,0,...) term alone
            one = (math.pi**2) ** (-0.5 - d / 4 - 0.25)
            assert s[0] >= one
        assert_allclose(trace_partial_sum(1, 0.5, 1)[0], (math.pi**2) ** (-0.5 - 0.25 - 0.25))

    def test_dichotomy(self):
        div = trace_partial_sum(3, 0.1, 32)
        assert div[31] / div[7] - 1 >= 0.5
        conv = trace_partial_sum(2, 1.0, 64)
        assert abs(conv[63] / conv[31] - 1) < 0.05

    @pytest.mark.parametrize("d", [2, 3])
    def test_summability_boundary(self, d):
        ref = eigen_partial_sums(d, -2.0, 64)
        assert abs(ref[63] / ref[31] - 1) < 0.05
        # at alpha = -d/2 the sum diverges logarithmically: every doubling of N adds
        # about the same amount, while a convergent exponent's increments shrink geometrically
        crit = eigen_partial_sums(d, -d / 2, 64)
        inc = [crit[2 * m - 1] - crit[m - 1] for m in (8, 16, 32)]
        assert inc[2] / inc[1] > 0.9 and inc[1] / inc[0] > 0.9
        ref_inc = [ref[2 * m - 1] - ref[m - 1] for m in (8, 16, 32)]
        assert ref_inc[2] / ref_inc[1] < 0.5

    def test_upsilon_range(self):
        with pytest.raises(ValueError):
            trace_partial_sum(2, 0.0, 4)
