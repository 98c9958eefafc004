import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from conftest import random_cauchy
from lightray.cosmo import make_flrw
from lightray.fields import CauchyData, ScalarField, SpacetimeField, SpatialGrid, make_bandlimited_random
from lightray.wave import (
    CFLViolation,
    DegenerateBackground,
    FLRWBackground,
    HalfWaveData,
    LowerOrderCoefficients,
    UnstableEvolution,
    energy,
    energy_drift,
    fd_adjoint_apply,
    merge_half_waves,
    propagate_half_waves,
    propagate_spectral,
    scalar_perturbation_coefficients,
    solve_bardeen,
    solve_cauchy_fd,
    solve_cauchy_spectral,
    solve_scalar_perturbation,
    spectral_adjoint_apply,
    split_half_waves,
)

seeds = st.integers(0, 2**16)
speeds = st.floats(0.1, 1.0)
G8 = SpatialGrid(8)


def plane(g, fn):
    x, y, z = g.mesh()
    return ScalarField(g, fn(x, y, z) + 0 * (x + y + z))


def smooth_data(g):
    return CauchyData(
        plane(g, lambda x, y, z: np.sin(x) * np.cos(y) + 0.5 * np.cos(z + x)),
        plane(g, lambda x, y, z: np.cos(2 * y) * np.sin(z)),
    )


class TestHalfWaves:
    def test_rejects_bad_speed(self):
        with pytest.raises(ValueError):
            HalfWaveData.zeros(G8, 1.5)

    def test_f2_zero_gives_equal_halves(self):
        d = CauchyData(make_bandlimited_random(G8, 3, 0), ScalarField.zeros(G8))
        hw = split_half_waves(d, 0.6)
        f1h = np.fft.fftn(d.f1.values)
        f1h[0, 0, 0] = 0
        assert np.allclose(hw.h1.coefficients, f1h / 2) and np.allclose(hw.h2.coefficients, f1h / 2)
        assert hw.zero_mode == pytest.approx((d.f1.mean(), 0.0))

    def test_single_mode_velocity(self):
        c = 0.5
        d = CauchyData(ScalarField.zeros(G8), plane(G8, lambda x, y, z: np.cos(x + 2 * y)))
        hw = split_half_waves(d, c)
        h1, h2 = hw.h1.coefficients, hw.h2.coefficients
        f2h = np.fft.fftn(d.f2.values)
        k = (1, 2, 0)
        assert np.allclose(h1, -h2, atol=1e-12)
        assert abs(h1[k]) == pytest.approx(abs(f2h[k]) / (2 * c * np.sqrt(5)), rel=1e-12)

    def test_single_mode_matches_ode(self):
        # u'' = -c^2 |xi|^2 u integrated numerically for the amplitude of cos(xi.x)
        c, t = 0.5, 1.3
        d = CauchyData(ScalarField.zeros(G8), plane(G8, lambda x, y, z: np.cos(x + 2 * y)))
        w2 = c**2 * 5
        sol = solve_ivp(lambda s, u: [u[1], -w2 * u[0]], (0, t), [0.0, 1.0], rtol=1e-12, atol=1e-14)
        amp = sol.y[0, -1]
        u = propagate_spectral(split_half_waves(d, c), t)
        assert np.abs(u.values - amp * d.f2.values).max() < 1e-9
        assert amp == pytest.approx(np.sin(c * np.sqrt(5) * t) / (c * np.sqrt(5)), abs=1e-9)
        assert amp == pytest.approx(0.8882754425, abs=1e-9)

    def test_merge_equal_halves_has_no_velocity(self):
        hw = split_half_waves(CauchyData(make_bandlimited_random(G8, 3, 1), ScalarField.zeros(G8)), 0.7)
        assert np.abs(merge_half_waves(hw).f2.values).max() < 1e-13

    @given(seeds, speeds)
    def test_split_merge_inverse(self, seed, c):
        d = random_cauchy(G8, 4, seed, mean_zero=False)
        back = merge_half_waves(split_half_waves(d, c))
        assert np.abs(back.stack() - d.stack()).max() < 1e-12 * (1 + np.abs(d.stack()).max()) / c

    @given(seeds, speeds, st.floats(0, 3), st.floats(0, 3))
    def test_semigroup(self, seed, c, t, s):
        hw = split_half_waves(random_cauchy(G8, 3, seed, mean_zero=False), c)
        direct = propagate_spectral(hw, t + s).values
        rebased = split_half_waves(merge_half_waves(propagate_half_waves(hw, t)), c)
        two_step = propagate_spectral(rebased, s).values
        assert np.abs(direct - two_step).max() < 1e-11 * (1 + np.abs(direct).max()) / c

    @given(seeds, st.floats(0, 10))
    def test_per_mode_amplitudes_unchanged(self, seed, t):
        hw = split_half_waves(random_cauchy(G8, 3, seed), 0.8)
        moved = propagate_half_waves(hw, t)
        assert np.allclose(np.abs(moved.h1.coefficients), np.abs(hw.h1.coefficients), atol=1e-12)
        assert np.allclose(np.abs(moved.h2.coefficients), np.abs(hw.h2.coefficients), atol=1e-12)

    def test_time_zero_returns_f1(self):
        d = random_cauchy(G8, 3, 5, mean_zero=False)
        assert np.abs(propagate_spectral(split_half_waves(d, 0.9), 0.0).values - d.f1.values).max() < 1e-13


class TestSpectralSolver:
    def test_zero_data(self):
        assert not np.any(solve_cauchy_spectral(CauchyData.zeros(G8), 0.7, 1.0, 5).slices)

    def test_centered_difference_recovers_velocity(self):
        d = random_cauchy(G8, 2, 3)
        errs = []
        for dt in (0.02, 0.01):
            hw = split_half_waves(d, 0.75)
            cd = (propagate_spectral(hw, dt).values - propagate_spectral(hw, -dt).values) / (2 * dt)
            errs.append(np.abs(cd - d.f2.values).max())
        assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.05)

    def test_adjoint_dot(self):
        g, c, nt = SpatialGrid(8), 0.8, 7
        rng = np.random.default_rng(0)
        x = random_cauchy(g, 4, 1)
        y = SpacetimeField(g, 1.0, rng.standard_normal((nt,) + g.shape))
        lhs = np.sum(solve_cauchy_spectral(x, c, 1.0, nt).slices * y.slices)
        rhs = np.sum(x.stack() * spectral_adjoint_apply(y, c).stack())
        assert abs(lhs - rhs) < 1e-12 * abs(lhs)


class TestFiniteDifference:
    def test_cfl_guard(self):
        with pytest.raises(CFLViolation):
            solve_cauchy_fd(random_cauchy(G8, 2, 0), 1.0, None, 2.0, 3)

    def test_constant_is_stationary(self):
        d = CauchyData(ScalarField(G8, np.full(G8.shape, 3.5)), ScalarField.zeros(G8))
        assert np.abs(solve_cauchy_fd(d, 0.9, None, 1.0, 9).slices - 3.5).max() < 1e-13

    @given(seeds, st.floats(-2, 2), st.floats(-2, 2))
    def test_linear(self, seed, a, b):
        low = LowerOrderCoefficients(b0=0.3, b1=0.1, p0=0.2)
        x, y = random_cauchy(G8, 3, seed), random_cauchy(G8, 3, seed + 11)
        combo = CauchyData(a * x.f1 + b * y.f1, a * x.f2 + b * y.f2)
        run = lambda d: solve_cauchy_fd(d, 0.7, low, 1.0, 9).slices
        lhs, rhs = run(combo), a * run(x) + b * run(y)
        assert np.abs(lhs - rhs).max() <= 1e-12 * (1 + np.abs(rhs).max())

    def test_damped_oscillator(self):
        # single cos(x) mode; the oracle uses the stencil eigenvalue so only time error remains
        g, gam, c, t1 = SpatialGrid(16), 0.7, 0.8, 3.0
        h = g.spacing
        d = CauchyData(plane(g, lambda x, y, z: np.cos(x)), ScalarField.zeros(g))
        w2 = c**2 * (2 - 2 * np.cos(h)) / h**2
        wd = np.sqrt(w2 - gam**2 / 4)
        errs = []
        for nt in (41, 81, 161):
            t = np.linspace(0, t1, nt)
            exact = np.exp(-gam * t / 2) * (np.cos(wd * t) + gam / (2 * wd) * np.sin(wd * t))
            u = solve_cauchy_fd(d, c, LowerOrderCoefficients(b0=gam), t1, nt).slices[:, :, 0, 0]
            errs.append(np.abs(u - exact[:, None] * np.cos(g.coords)[None]).max())
        # frozen from the refinement study
        assert errs[0] == pytest.approx(5.2235e-4, rel=1e-3)
        assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.05)
        assert np.log2(errs[1] / errs[2]) == pytest.approx(2.0, abs=0.05)

    def test_converges_to_spectral(self):
        errs = []
        for n in (8, 16, 32):
            g = SpatialGrid(n)
            d = smooth_data(g)
            a = solve_cauchy_fd(d, 0.75, None, 1.0, 2 * n + 1).slices
            b = solve_cauchy_spectral(d, 0.75, 1.0, 2 * n + 1).slices
            errs.append(np.abs(a - b).max())
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        # frozen: 1.958, 1.990
        assert np.all(orders >= 1.9)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_unstable_guard(self):
        d = random_cauchy(G8, 2, 0)
        with pytest.raises(UnstableEvolution):
            solve_cauchy_fd(d, 0.5, LowerOrderCoefficients(p0=-1e300), 1.0, 9)

    @pytest.mark.parametrize("laplacian", ["stencil", "spectral"])
    def test_adjoint_dot(self, laplacian):
        g, nt = SpatialGrid(16), 17
        rng = np.random.default_rng(3)
        low = LowerOrderCoefficients(
            b0=np.linspace(0.1, 0.5, nt), b1=0.2, b2=rng.standard_normal(g.shape) * 0.1, p0=0.3
        )
        x = random_cauchy(g, 5, 2, mean_zero=False)
        y = SpacetimeField(g, 1.0, rng.standard_normal((nt,) + g.shape))
        lhs = np.sum(solve_cauchy_fd(x, 0.7, low, 1.0, nt, laplacian).slices * y.slices)
        rhs = np.sum(x.stack() * fd_adjoint_apply(y, 0.7, low, laplacian).stack())
        assert abs(lhs - rhs) < 1e-10 * abs(lhs)

    def test_adjoint_of_zero(self):
        y = SpacetimeField.zeros(G8, 1.0, 9)
        assert not np.any(fd_adjoint_apply(y, 0.5, None).stack())


class TestCosmological:
    def test_matter_potential_identity(self):
        bg = make_flrw("matter", 1.0, 2.0).background
        assert np.abs(2 * bg.Hprime + bg.H**2).max() < 1e-8

    def test_matter_constant_potential(self):
        bg = make_flrw("matter", 1.0, 2.0).background
        u = solve_bardeen(bg, 0.0, ScalarField(G8, np.full(G8.shape, 2.0)), ScalarField.zeros(G8), 21)
        assert np.abs(u.slices - 2.0).max() < 1e-10

    def test_static_background_is_free_wave(self):
        bg = FLRWBackground(0.0, 1.0, np.ones(50), np.zeros(50), np.zeros(50))
        d = random_cauchy(G8, 2, 4)
        a = solve_bardeen(bg, 1.0, d.f1, d.f2, 9).slices
        b = solve_cauchy_fd(d, 1.0, None, 1.0, 9).slices
        assert np.array_equal(a, b)

    def test_bardeen_zero_data(self):
        bg = make_flrw("radiation", 1.0, 2.0).background
        assert not np.any(solve_bardeen(bg, 0.5, ScalarField.zeros(G8), ScalarField.zeros(G8), 9).slices)

    def test_bardeen_rejects_bad_sound_speed(self):
        bg = make_flrw("matter", 1.0, 2.0).background
        with pytest.raises(ValueError):
            solve_bardeen(bg, 1.5, ScalarField.zeros(G8), ScalarField.zeros(G8), 9)

    def test_scalar_linear_background_is_free_wave(self):
        bg = FLRWBackground(0.0, 1.0, np.ones(101), np.zeros(101), np.zeros(101))
        phi_bg = 2.0 + 3.0 * bg.s
        d = random_cauchy(G8, 2, 6)
        a = solve_scalar_perturbation(bg, phi_bg, d.f1, d.f2, 9).slices
        b = solve_cauchy_fd(d, 1.0, None, 1.0, 9).slices
        assert np.abs(a - b).max() < 1e-9

    def test_scalar_coefficients_against_differences(self):
        m = make_flrw("radiation", 1.0, 2.0, samples=4001)
        bg = m.background
        s = bg.s
        phi = np.exp(s)  # phi'' / phi' = 1
        b, p = scalar_perturbation_coefficients(bg, phi)
        assert np.abs(b - 2 * (bg.H - 1)).max() < 1e-5
        assert np.abs(p - 2 * (bg.Hprime - bg.H)).max() < 1e-5

    def test_scalar_degenerate_background(self):
        bg = FLRWBackground(-1.0, 1.0, np.ones(101), np.zeros(101), np.zeros(101))
        with pytest.raises(DegenerateBackground):
            scalar_perturbation_coefficients(bg, bg.s**2)

    def test_scalar_zero_data(self):
        bg = FLRWBackground(0.0, 1.0, np.ones(101), np.zeros(101), np.zeros(101))
        u = solve_scalar_perturbation(bg, 1.0 + bg.s, ScalarField.zeros(G8), ScalarField.zeros(G8), 9)
        assert not np.any(u.slices)


class TestEnergy:
    def test_zero_field(self):
        assert not np.any(energy(SpacetimeField.zeros(G8, 1.0, 5), 0.5))

    def test_needs_three_slices(self):
        with pytest.raises(ValueError):
            energy(SpacetimeField.zeros(G8, 1.0, 2), 0.5)

    @given(seeds, speeds)
    def test_spectral_conserved(self, seed, c):
        u = solve_cauchy_spectral(random_cauchy(G8, 3, seed, mean_zero=False), c, 2.0, 21)
        assert energy_drift(energy(u, c)) < 1e-10

    def test_matches_continuous_energy(self):
        # f1 = cos x, f2 = 0 on a 2pi box: E = c^2/2 int sin^2 x = 2 c^2 pi^3
        c = 0.5
        g = SpatialGrid(16)
        d = CauchyData(plane(g, lambda x, y, z: np.cos(x)), ScalarField.zeros(g))
        e = energy(solve_cauchy_spectral(d, c, 1.0, 201), c, method="centered")
        assert e[100] == pytest.approx(2 * c**2 * np.pi**3, rel=1e-4)

    def test_fd_drift_second_order(self):
        g = SpatialGrid(16)
        d = random_cauchy(g, 3, 80, mean_zero=False)
        drift = [energy_drift(energy(solve_cauchy_fd(d, 0.75, None, 2.0, nt, "spectral"), 0.75)) for nt in (41, 81, 161)]
        orders = np.log2(np.array(drift[:-1]) / np.array(drift[1:]))
        assert np.allclose(orders, 2.0, atol=0.05)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            energy(SpacetimeField.zeros(G8, 1.0, 5), 0.5, method="other")
