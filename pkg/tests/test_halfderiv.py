import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parreg.families import affine_graph, flat_graph, lacunary_graph, smooth_graph
from parreg.halfderiv import (
    BumpSpec,
    SpectralGrid,
    approx_identity_Pr,
    bmo_norm,
    calibrate_dhalf,
    cutoff_profile,
    dhalf_time_quadrature,
    dt_half_localized,
    dt_half_spectral,
    frac_integral_IP,
    inner_region,
    phi_profile,
    rlip_norm,
    tail_operator_ER,
    taper,
    zeta_profile,
)

# frozen one-mode oracles (worked out by hand from the multiplier definition):
#   |||(0,1)||| = 1, |||(1,0)||| = 1, |||(0,4)||| = 2, |||(1,1)||| as below
SMOOTH_NORM_X1_T1 = 1.2720196495140689


def unit_square_grid(nx=16, nt=512):
    # lateral span 1, time span 1 -> integer-frequency modes are exactly periodic
    hx, ht = 1.0 / nx, 1.0 / nt
    x = (np.arange(nx) * hx)[:, None]
    t = (np.arange(nt) * ht)[None, :]
    return x, t, hx, ht


def make_grid(values, hx, ht):
    return SpectralGrid(np.broadcast_to(values, values.shape).copy(), hx, ht)


class TestSpectralOperators:
    def test_frac_integral_zero(self):
        x, t, hx, ht = unit_square_grid()
        g = make_grid(0.0 * x * t, hx, ht)
        assert np.max(np.abs(frac_integral_IP(g).values)) == 0.0

    def test_frac_integral_fixed_points(self):
        x, t, hx, ht = unit_square_grid()
        for f in (np.cos(2 * np.pi * x) + 0 * t, np.cos(2 * np.pi * t) + 0 * x):
            g = make_grid(f, hx, ht)
            out = frac_integral_IP(g).values
            assert np.max(np.abs(out - f)) < 1e-10

    def test_frac_integral_mixed_mode(self):
        x, t, hx, ht = unit_square_grid()
        f = np.cos(2 * np.pi * (x + t))
        out = frac_integral_IP(make_grid(f, hx, ht)).values
        assert np.max(np.abs(out - f / SMOOTH_NORM_X1_T1)) < 1e-10

    def test_frac_integral_mean_zero(self):
        x, t, hx, ht = unit_square_grid()
        f = 3.7 + np.cos(2 * np.pi * t) + 0 * x
        out = frac_integral_IP(make_grid(f, hx, ht)).values
        assert abs(out.mean()) < 1e-12

    def test_dt_half_basic_modes(self):
        x, t, hx, ht = unit_square_grid()
        g1 = make_grid(np.cos(2 * np.pi * t) + 0 * x, hx, ht)
        want1 = -2 * np.pi * np.sin(2 * np.pi * t) + 0 * x
        assert np.max(np.abs(dt_half_spectral(g1).values - want1)) < 1e-10

        g4 = make_grid(np.cos(8 * np.pi * t) + 0 * x, hx, ht)
        want4 = -4 * np.pi * np.sin(8 * np.pi * t) + 0 * x
        assert np.max(np.abs(dt_half_spectral(g4).values - want4)) < 1e-10

    def test_dt_half_kills_time_constants(self):
        x, t, hx, ht = unit_square_grid()
        g = make_grid(np.sin(2 * np.pi * x) + 0 * t, hx, ht)
        assert np.max(np.abs(dt_half_spectral(g).values)) < 1e-12

    def test_dt_equals_ddt_of_frac_integral(self):
        # operator factorization: D_t = d/dt applied to the order-1 integral,
        # checked with an exact spectral d/dt as the oracle route
        x, t, hx, ht = unit_square_grid()
        rng = np.random.default_rng(11)
        f = np.zeros((16, 512))
        for k, m in [(1, 1), (2, 3), (0, 2), (3, 5)]:
            f += rng.normal() * np.cos(2 * np.pi * (k * x + m * t) + rng.normal())
        ip = frac_integral_IP(make_grid(f, hx, ht)).values
        tau = np.fft.fftfreq(512, d=ht)[None, :]
        ddt = np.real(np.fft.ifft(np.fft.fft(ip, axis=1) * (2j * np.pi * tau), axis=1))
        out = dt_half_spectral(make_grid(f, hx, ht)).values
        assert np.max(np.abs(out - ddt)) < 1e-8

    def test_plancherel_roundtrip(self):
        rng = np.random.default_rng(5)
        f = rng.normal(size=(32, 64))
        back = np.real(np.fft.ifft2(np.fft.fft2(f)))
        assert np.linalg.norm(back - f) < 1e-10 * np.linalg.norm(f)
        # Parseval with the same convention
        assert abs(np.linalg.norm(np.fft.fft2(f)) ** 2 / f.size
                   - np.linalg.norm(f) ** 2) < 1e-8 * np.linalg.norm(f) ** 2

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            SpectralGrid(np.zeros((12, 16)), 0.1, 0.01)

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5))
    def test_linearity(self, a, b):
        x, t, hx, ht = unit_square_grid(nx=8, nt=32)
        f = np.cos(2 * np.pi * (x + t))
        g = np.sin(2 * np.pi * (2 * x + 3 * t))
        lhs = dt_half_spectral(make_grid(a * f + b * g, hx, ht)).values
        rhs = (a * dt_half_spectral(make_grid(f, hx, ht)).values
               + b * dt_half_spectral(make_grid(g, hx, ht)).values)
        assert np.max(np.abs(lhs - rhs)) < 1e-9


class TestQuadratureRoute:
    NT, HT, TRUNC = 512, 1.0 / 512, 64.0

    def t_axis(self):
        return np.arange(self.NT) * self.HT

    def test_constant_annihilated(self):
        out = dhalf_time_quadrature(np.full(self.NT, 4.2), self.HT, self.TRUNC)
        assert np.max(np.abs(out)) < 1e-12

    def test_calibration_mode_exact(self):
        t = self.t_axis()
        f = np.cos(2 * np.pi * t)
        out = dhalf_time_quadrature(f, self.HT, self.TRUNC)
        assert np.linalg.norm(out - f) < 1e-6 * np.linalg.norm(f)

    def test_calibration_constant_properties(self):
        calib = calibrate_dhalf(self.NT, self.HT, self.TRUNC)
        assert calib.residual < 1e-6
        assert calib.c < 0  # difference kernel needs a negative constant

    @pytest.mark.parametrize("nu", [2, 3, 5, 8])
    def test_matches_sqrt_tau_multiplier(self, nu):
        t = self.t_axis()
        f = np.cos(2 * np.pi * nu * t)
        want = np.sqrt(nu) * f
        out = dhalf_time_quadrature(f, self.HT, self.TRUNC)
        assert np.linalg.norm(out - want) < 0.05 * np.linalg.norm(want)

    def test_matches_on_bandlimited_mixture(self):
        rng = np.random.default_rng(3)
        t = self.t_axis()
        f = np.zeros(self.NT)
        want = np.zeros(self.NT)
        for nu in range(1, 11):
            a, phase = rng.normal() / nu, rng.uniform(0, 2 * np.pi)
            f += a * np.cos(2 * np.pi * nu * t + phase)
            want += a * np.sqrt(nu) * np.cos(2 * np.pi * nu * t + phase)
        out = dhalf_time_quadrature(f, self.HT, self.TRUNC)
        assert np.linalg.norm(out - want) < 0.05 * np.linalg.norm(want)

    def test_odd_function_vanishes_at_center(self):
        # f(t) = t - T on [0, 2T): odd around the center sample; symmetric
        # truncation inside the half-span keeps the lag pairs mirror images
        t = self.t_axis()
        f = t - t[self.NT // 2]
        out = dhalf_time_quadrature(f, self.HT, trunc=0.45)
        assert abs(out[self.NT // 2]) < 1e-10

    def test_rejects_tiny_truncation(self):
        with pytest.raises(ValueError):
            dhalf_time_quadrature(np.zeros(self.NT), self.HT, 0.05)

    def test_acts_along_last_axis(self):
        t = self.t_axis()
        f = np.cos(2 * np.pi * t)
        stacked = np.stack([f, 2 * f])
        out = dhalf_time_quadrature(stacked, self.HT, self.TRUNC)
        assert np.allclose(out[1], 2 * out[0], atol=1e-12)


class TestLocalizedAndTail:
    def setup_method(self):
        nx, nt, hx = 64, 512, 1.0 / 64
        self.hx, self.ht = hx, hx * hx
        self.x = (np.arange(nx) * hx)[:, None]
        self.t = (np.arange(nt) * self.ht)[None, :]
        self.shape = (nx, nt)
        self.R = 0.02

    def grid(self, values):
        return SpectralGrid(values, self.hx, self.ht)

    def test_tail_annihilates_constants(self):
        ones = self.grid(np.ones(self.shape))
        assert np.max(np.abs(tail_operator_ER(ones, self.R).values)) < 1e-8

    def test_zero_maps_to_zero(self):
        z = self.grid(np.zeros(self.shape))
        assert np.max(np.abs(dt_half_localized(z, self.R).values)) == 0.0
        assert np.max(np.abs(tail_operator_ER(z, self.R).values)) == 0.0

    def test_linearity(self):
        rng = np.random.default_rng(17)
        f = rng.normal(size=self.shape)
        g = rng.normal(size=self.shape)
        lhs = tail_operator_ER(self.grid(2.0 * f - 3.0 * g), self.R).values
        rhs = (2.0 * tail_operator_ER(self.grid(f), self.R).values
               - 3.0 * tail_operator_ER(self.grid(g), self.R).values)
        scale = np.max(np.abs(rhs)) + 1.0
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * scale

    def test_window_must_fit_domain(self):
        z = self.grid(np.zeros(self.shape))
        with pytest.raises(ValueError):
            dt_half_localized(z, 0.2)

    def test_tail_oscillation_bounded_on_lipschitz_input(self):
        # f with parabolic Lipschitz constant 1 (half spatial, half temporal
        # budget); the tail output should oscillate by O(1) over offsets of
        # parabolic length <= R
        amp_t = 0.5 / (2.0 * np.sqrt(np.pi * 32.0))
        f = (0.5 * np.sin(2 * np.pi * self.x) / (2 * np.pi)
             + amp_t * np.sin(2 * np.pi * 32.0 * self.t))
        e = tail_operator_ER(self.grid(f + 0.0 * self.x * self.t), self.R).values
        osc = 0.0
        for axis in (0, 1):
            for shift in (1, -1):
                osc = max(osc, float(np.max(np.abs(e - np.roll(e, shift, axis)))))
        assert osc <= 10.0


class TestApproxIdentity:
    HX = 1.0 / 64
    HT = HX * HX

    def coords(self, nx=64, nt=512):
        x = ((np.arange(nx) - nx // 2) * self.HX)[:, None]
        t = (np.arange(nt) * self.HT)[None, :]
        return x, t

    def test_preserves_constants(self):
        f = np.full((64, 512), 2.5)
        out = approx_identity_Pr(f, 0.1, self.HX, self.HT)
        assert np.max(np.abs(out - 2.5)) < 1e-10

    def test_reproduces_affine_in_x(self):
        x, t = self.coords()
        f = 0.3 * x + 1.2 + 0.0 * t
        r = 4 * self.HX
        out = approx_identity_Pr(f, r, self.HX, self.HT)
        k = int(np.ceil(r / self.HX)) + 1
        assert np.max(np.abs(out[k:-k] - f[k:-k])) < 1e-12

    def test_preserves_mean(self):
        rng = np.random.default_rng(9)
        f = rng.normal(size=(64, 512))
        out = approx_identity_Pr(f, 0.08, self.HX, self.HT)
        assert abs(out.mean() - f.mean()) < 1e-13

    def test_uniform_error_linear_in_r_on_lipschitz(self):
        x, t = self.coords()
        # spatial tent, Lip constant 1 on the torus
        f = np.abs(x) + 0.0 * t
        for r in (0.05, 0.1, 0.2):
            out = approx_identity_Pr(f, r, self.HX, self.HT)
            assert np.max(np.abs(out - f)) <= 2.0 * r

    def test_rejects_subresolution_radius(self):
        with pytest.raises(ValueError):
            approx_identity_Pr(np.zeros((64, 512)), self.HX, self.HX, self.HT)

    def test_bump_spec_validates(self):
        spec = BumpSpec.build()
        assert spec.validate()
        assert spec.cn > 0

    def test_profiles_have_declared_plateaus(self):
        u = np.linspace(-3, 3, 1201)
        z = zeta_profile(u)
        assert np.all(z[np.abs(u) <= 0.5] == 1.0)
        assert np.all(z[np.abs(u) >= 1.0] == 0.0)
        p = phi_profile(u * 4)
        assert np.all(p[np.abs(4 * u) <= 9.0] == 1.0)
        assert np.all(p[np.abs(4 * u) >= 10.0] == 0.0)
        c = cutoff_profile(u)
        assert np.all(c[np.abs(u) <= 1.0] == 1.0)
        assert np.all(c[np.abs(u) >= 2.0] == 0.0)


class TestBMO:
    def test_constants_give_zero(self):
        assert bmo_norm(np.full((32, 256), 7.0), 1 / 16, 1 / 128) == 0.0

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        f = rng.normal(size=(32, 256))
        a = bmo_norm(f, 1 / 16, 1 / 128)
        b = bmo_norm(f + 123.0, 1 / 16, 1 / 128)
        assert abs(a - b) < 1e-10

    def test_homogeneity(self):
        rng = np.random.default_rng(4)
        f = rng.normal(size=(32, 256))
        assert abs(bmo_norm(3 * f, 1 / 16, 1 / 128) - 3 * bmo_norm(f, 1 / 16, 1 / 128)) < 1e-10

    def test_linear_profile_moment_oracle(self):
        # f(x,t) = x on the full cube: mean absolute deviation of the uniform
        # distribution on [-rho, rho] is rho/2; the symmetric sample offsets
        # make the discrete average exact
        nx, nt, hx, ht = 32, 256, 1 / 16, 1 / 128
        x = ((np.arange(nx) + 0.5 - nx / 2) * hx)[:, None]
        f = x + np.zeros((nx, nt))
        rho = nx * hx / 2
        assert abs(bmo_norm(f, hx, ht) - rho / 2) < 1e-12

    def test_parabolic_rescale_invariance(self):
        rng = np.random.default_rng(8)
        f = rng.normal(size=(32, 256))
        a = bmo_norm(f, 1 / 16, 1 / 128)
        b = bmo_norm(f, 2 / 16, 4 / 128)  # cube family rescales with the domain
        assert a == b


class TestRLip:
    def test_flat_graph_is_zero(self):
        assert rlip_norm(flat_graph()) == 0.0

    def test_affine_graph_exact(self):
        assert abs(rlip_norm(affine_graph(slope=1.0)) - 1.0) < 1e-12

    def test_smooth_graph_gradient_dominated(self):
        got = rlip_norm(smooth_graph(amp=0.1))
        assert 0.55 < got < 0.70  # ~ 2*pi*0.1 from the gradient term

    def test_lacunary_growth_in_J(self):
        vals = [rlip_norm(lacunary_graph(J=J)) for J in (2, 4, 6)]
        assert vals[0] < vals[1] < vals[2]
        assert vals[2] > 1.05 * vals[1]


def test_taper_plateau_preserves_interior():
    f = np.ones((32, 64))
    w = taper(f, 0.125)
    inner = inner_region(f.shape, 0.5)
    assert np.max(np.abs(w[inner] - 1.0)) == 0.0
    assert w[0, 0] < 0.1


def test_inner_region_shape():
    sl = inner_region((64, 512), 0.5)
    assert (sl[0].stop - sl[0].start, sl[1].stop - sl[1].start) == (32, 256)
