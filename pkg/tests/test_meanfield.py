import numpy as np
import pytest

from bdsampler.errors import ConfigError
from bdsampler.grids import GridDensity
from bdsampler.kernels import KernelSpec
from bdsampler.meanfield import (BoundParams, MeanFieldState, bd_exact,
                                 bound_chi2, bound_kl, bound_series,
                                 chi2_contraction_rate, energy_F, energy_Feps,
                                 kl_contraction_rate, simulate, step_bd,
                                 step_bd2, step_bde, step_bdls,
                                 _fokker_planck_half)
from bdsampler.metrics import chi2_grid, kl_grid
from bdsampler.targets import torus_bimodal_target, torus_uniform_target

PERIOD = 2.0 * np.pi


def uniform_state(target, kernel=None):
    return MeanFieldState(GridDensity.uniform(target.n, target.period), 0.0,
                          target, kernel)


class TestBdExact:
    def test_time_zero_is_identity(self, make_density, bimodal_target_256):
        rho0 = make_density(n=256)
        out = bd_exact(rho0, bimodal_target_256, 0.0)
        np.testing.assert_allclose(out.values, rho0.values, rtol=1e-12)

    def test_long_time_reaches_target(self, make_density, bimodal_target_256):
        rho0 = make_density(n=256)
        out = bd_exact(rho0, bimodal_target_256, 50.0)
        assert np.abs(out.values - bimodal_target_256.density.values).max() <= 1e-10

    def test_two_level_uniform_target_closed_form(self):
        # With a flat potential the two levels evolve by scalar powers.
        target = torus_uniform_target(128)
        n = 128
        a, b = 2.0, 1.0
        vals = np.where(np.arange(n) < n // 2, a, b)
        rho0 = GridDensity(vals / ((PERIOD / n) * vals.sum()), PERIOD)
        t = 0.7
        q = np.exp(-t)
        hi, lo = rho0.values.max(), rho0.values.min()
        levels = np.array([hi**q, lo**q]) * (1.0 / PERIOD) ** (1 - q)
        levels /= 0.5 * (levels[0] + levels[1]) * PERIOD
        out = bd_exact(rho0, target, t)
        np.testing.assert_allclose(out.values[: n // 2], levels[0], rtol=1e-12)
        np.testing.assert_allclose(out.values[n // 2 :], levels[1], rtol=1e-12)

    def test_kl_nonincreasing(self, make_density, bimodal_target_256):
        rho0 = make_density(n=256)
        kls = [kl_grid(bd_exact(rho0, bimodal_target_256, t),
                       bimodal_target_256.density)
               for t in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)]
        assert all(b <= a + 1e-12 for a, b in zip(kls, kls[1:]))

    def test_nonpositive_initial_rejected(self, bimodal_target_256):
        vals = np.full(256, 1.0 / PERIOD)
        vals[3] = 0.0
        with pytest.raises(ValueError):
            bd_exact(GridDensity(vals, PERIOD), bimodal_target_256, 1.0)


class TestStepBd:
    def test_target_is_fixed_point(self, bimodal_target_256):
        state = MeanFieldState(bimodal_target_256.density, 0.0,
                               bimodal_target_256)
        out = step_bd(state, 1e-3)
        assert np.abs(out.rho.values - state.rho.values).max() <= 1e-14

    def test_tracks_exact_solution_first_order(self, bimodal_target_256):
        rho0 = GridDensity.uniform(256, PERIOD)

        def sup_err(dt):
            state = MeanFieldState(rho0, 0.0, bimodal_target_256)
            steps = int(round(2.0 / dt))
            worst = 0.0
            for k in range(1, steps + 1):
                state = step_bd(state, dt)
                if k % 100 == 0 or k == steps:
                    exact = bd_exact(rho0, bimodal_target_256, k * dt)
                    worst = max(worst, np.abs(state.rho.values - exact.values).max())
            return worst

        e1, e2 = sup_err(2e-3), sup_err(1e-3)
        assert e1 <= 1e-3
        assert 1.7 <= e1 / e2 <= 2.3

    def test_kl_strictly_decreases(self, make_density, bimodal_target_256):
        state = MeanFieldState(make_density(n=256), 0.0, bimodal_target_256)
        prev = kl_grid(state.rho, bimodal_target_256.density)
        for _ in range(50):
            state = step_bd(state, 1e-3)
            cur = kl_grid(state.rho, bimodal_target_256.density)
            assert cur < prev
            prev = cur

    def test_ratio_lower_bound_along_flow(self, bimodal_target_256):
        # Grid analog of inf(rho_t/pi) >= exp(-M exp(-t)).
        rho0 = GridDensity.uniform(256, PERIOD)
        params = BoundParams.from_grid(rho0, bimodal_target_256.density)
        state = MeanFieldState(rho0, 0.0, bimodal_target_256)
        for k in range(1, 2001):
            state = step_bd(state, 1e-3)
            if k % 200 == 0:
                ratio = state.rho.values / bimodal_target_256.density.values
                floor = np.exp(-params.M * np.exp(-state.t))
                assert ratio.min() >= floor - 1e-8


class TestStepBd2:
    def test_target_is_fixed_point(self, bimodal_target_256):
        state = MeanFieldState(bimodal_target_256.density, 0.0,
                               bimodal_target_256)
        out = step_bd2(state, 1e-3)
        assert np.abs(out.rho.values - state.rho.values).max() <= 1e-14

    def test_chi2_monotone(self, make_density, bimodal_target_256):
        state = MeanFieldState(make_density(n=256), 0.0, bimodal_target_256)
        prev = chi2_grid(state.rho, bimodal_target_256.density)
        for _ in range(200):
            state = step_bd2(state, 1e-3)
            cur = chi2_grid(state.rho, bimodal_target_256.density)
            assert cur <= prev + 1e-12
            prev = cur


class TestStepBde:
    def test_uniform_flat_fixed_point(self):
        target = torus_uniform_target(256)
        state = uniform_state(target, KernelSpec(0.3, 1))
        out = step_bde(state, 1e-3)
        assert np.abs(out.rho.values - state.rho.values).max() <= 1e-14

    def test_energy_nonincreasing(self, make_density):
        target = torus_bimodal_target(256)
        kernel = KernelSpec(0.25, 1)
        dt = 1e-3
        for _ in range(3):
            state = MeanFieldState(make_density(n=256), 0.0, target, kernel)
            prev = energy_Feps(state.rho, target, kernel)
            for _ in range(100):
                state = step_bde(state, dt)
                cur = energy_Feps(state.rho, target, kernel)
                assert cur <= prev + 2.0 * dt * dt
                prev = cur

    def test_converges_to_pure_flow_as_bandwidth_shrinks(self,
                                                         bimodal_target_256):
        # Fixed horizon T=1: distance to the pure-flow trajectory shrinks
        # monotonically over the bandwidth ladder.
        rho0 = GridDensity.uniform(256, PERIOD)
        dt, steps = 1e-3, 1000
        pure = MeanFieldState(rho0, 0.0, bimodal_target_256)
        for _ in range(steps):
            pure = step_bd(pure, dt)
        sups = []
        for eps in (0.4, 0.2, 0.1, 0.05):
            state = MeanFieldState(rho0, 0.0, bimodal_target_256,
                                   KernelSpec(eps, 1))
            for _ in range(steps):
                state = step_bde(state, dt)
            sups.append(np.abs(state.rho.values - pure.rho.values).max())
        assert all(b < a for a, b in zip(sups, sups[1:]))

    def test_unresolvable_bandwidth_rejected(self, bimodal_target_256):
        h = PERIOD / 256
        with pytest.raises(ConfigError):
            uniform_state(bimodal_target_256, KernelSpec(1.5 * h, 1))

    def test_missing_kernel_rejected(self, bimodal_target_256):
        with pytest.raises(ConfigError):
            step_bde(uniform_state(bimodal_target_256), 1e-3)


class TestStepBdls:
    def setup_method(self):
        self.n = 128
        self.target = torus_bimodal_target(self.n)
        self.h = PERIOD / self.n
        self.kernel = KernelSpec(0.3, 1)

    def test_cfl_guard(self):
        state = uniform_state(self.target, self.kernel)
        with pytest.raises(ConfigError):
            step_bdls(state, 2.0 * self.h**2)

    def test_target_near_fixed_point(self):
        state = MeanFieldState(self.target.density, 0.0, self.target,
                               self.kernel)
        dt = 1e-3
        out = step_bdls(state, dt)
        # O(h^2) spatial truncation error per unit time, plus the kernel bias.
        drift = np.abs(out.rho.values - state.rho.values).max() / dt
        assert drift <= 10.0 * self.h

    def test_mass_conserved(self, make_density):
        state = MeanFieldState(make_density(n=self.n), 0.0, self.target,
                               self.kernel)
        for _ in range(50):
            state = step_bdls(state, 1e-3)
            assert abs(state.rho.mass() - 1.0) <= 1e-10

    def test_beats_plain_diffusion_on_bimodal_target(self):
        # Side-by-side from the same flat start: adding birth-death must
        # dissipate KL faster than pure Fokker-Planck at the same horizon.
        dt, steps = 1e-3, 2000
        bdls = uniform_state(self.target, self.kernel)
        fp_vals = np.array(bdls.rho.values)
        for _ in range(steps):
            bdls = step_bdls(bdls, dt)
            fp_vals = _fokker_planck_half(fp_vals, self.target, self.h, dt)
            fp_vals /= self.h * fp_vals.sum()
        kl_bdls = kl_grid(bdls.rho, self.target.density)
        kl_fp = kl_grid(GridDensity(fp_vals, PERIOD), self.target.density)
        assert kl_bdls < kl_fp


class TestEnergies:
    def test_energy_f_is_kl(self, make_density, bimodal_target_256):
        rho = make_density(n=256)
        assert energy_F(rho, bimodal_target_256) == pytest.approx(
            kl_grid(rho, bimodal_target_256.density), rel=1e-14)

    def test_regularized_energy_below_kl(self, make_density,
                                         bimodal_target_256):
        kernel = KernelSpec(0.3, 1)
        for _ in range(10):
            rho = make_density(n=256)
            feps = energy_Feps(rho, bimodal_target_256, kernel)
            assert feps <= kl_grid(rho, bimodal_target_256.density) + 1e-12

    def test_flat_case_zero(self):
        target = torus_uniform_target(256)
        rho = GridDensity.uniform(256, PERIOD)
        assert energy_Feps(rho, target, KernelSpec(0.3, 1)) == pytest.approx(
            0.0, abs=1e-12)

    def test_mollification_gap_quartic_in_bandwidth(self, bimodal_target_256):
        # F_eps(pi) = -KL(pi | K_eps * pi) ~ -(eps^4/8) * int (pi'')^2 / pi
        # for smooth periodic targets: the quadratic term integrates away.
        pi = bimodal_target_256.density
        d2 = (np.roll(pi.values, -1) - 2 * pi.values + np.roll(pi.values, 1)) / pi.h**2
        coeff = (pi.h * (d2**2 / pi.values).sum()) / 8.0
        ratios = []
        for eps in (0.2, 0.1, 0.05):
            feps = energy_Feps(pi, bimodal_target_256, KernelSpec(eps, 1))
            ratios.append(-feps / (coeff * eps**4))
        assert ratios[0] < ratios[1] < ratios[2]  # corrections vanish with eps
        assert ratios[-1] == pytest.approx(1.0, abs=0.05)


class TestBounds:
    def test_direct_bound_value(self):
        params = BoundParams(M=1.0, kl0=0.5, chi0=1.0)
        b1, _ = bound_kl(params, 0.0)
        assert b1 == pytest.approx(1.0 + np.e * 0.5, rel=1e-12)

    def test_rates_tend_to_two_ninths(self):
        assert kl_contraction_rate(1.0 * np.exp(-50.0)) == pytest.approx(
            2.0 / 9.0, abs=1e-6)
        assert chi2_contraction_rate(50.0, 1.0) == pytest.approx(
            2.0 / 9.0, abs=1e-6)
        assert kl_contraction_rate(0.0) == 2.0 / 9.0

    def test_rate_series_continuity(self):
        # The series branch must agree with the cancellation-free direct
        # evaluation (expm1-based) at the switch point.
        for u in (9e-5, 1.1e-4, 1e-3):
            direct = u * u / (9.0 * np.exp(u) * (np.expm1(u) - u))
            assert kl_contraction_rate(u) == pytest.approx(direct, rel=1e-9)

    def test_chi2_rate_at_zero(self):
        # 2 / ((9 + 8(e-1))(1 + (e-1))) for M = 1.
        expected = 2.0 / ((9.0 + 8.0 * (np.e - 1.0)) * np.e)
        assert chi2_contraction_rate(0.0, 1.0) == pytest.approx(expected,
                                                                rel=1e-12)
        assert expected == pytest.approx(0.032346, abs=5e-7)

    def test_zero_m_reduces_to_uniform_rate(self):
        params = BoundParams(M=0.0, kl0=0.7, chi0=1.0)
        _, b2 = bound_kl(params, 3.0)
        assert b2 == pytest.approx(0.7 * np.exp(-2.0 / 9.0 * 3.0), rel=1e-9)

    def test_bounds_finite_and_nonnegative(self):
        params = BoundParams(M=5.0, kl0=2.0, chi0=4.0)
        for t in (0.0, 0.1, 1.0, 10.0, 40.0):
            b1, b2 = bound_kl(params, t)
            bc = bound_chi2(params, t)
            assert np.isfinite([b1, b2, bc]).all()
            assert min(b1, b2, bc) >= 0.0

    def test_series_matches_pointwise(self):
        params = BoundParams(M=2.0, kl0=1.0, chi0=3.0)
        times = np.array([0.0, 0.5, 1.5, 4.0])
        b1s, b2s, bcs = bound_series(params, times)
        for i, t in enumerate(times):
            b1, b2 = bound_kl(params, t)
            assert b1s[i] == pytest.approx(b1, rel=1e-10)
            assert b2s[i] == pytest.approx(b2, rel=1e-9)
            assert bcs[i] == pytest.approx(bound_chi2(params, t), rel=1e-9)


class TestSimulate:
    def test_records_and_envelopes(self, bimodal_target_256):
        state = uniform_state(bimodal_target_256)
        out = simulate(state, "bd", 1e-3, 1.0, record_every=100,
                       with_bounds=True)
        assert out["t"][0] == 0.0 and out["t"][-1] == pytest.approx(1.0)
        assert np.all(out["kl"] <= np.minimum(out["bound_b1"],
                                              out["bound_b2"]) + 1e-8)
        assert np.all(out["mass_err"] <= 1e-8)

    def test_chi2_envelope(self, bimodal_target_256):
        state = uniform_state(bimodal_target_256)
        out = simulate(state, "bd2", 1e-3, 1.0, record_every=100,
                       with_bounds=True)
        assert np.all(out["chi2"] <= out["bound_chi2"] + 1e-8)
