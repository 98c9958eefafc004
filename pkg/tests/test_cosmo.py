import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_cauchy
from lightray.cosmo import (
    ISWData,
    bardeen_map,
    isw_forward,
    isw_invert,
    isw_map,
    isw_visibility,
    make_flrw,
    time_derivative,
    time_derivative_transpose,
)
from lightray.fields import CauchyData, ScalarField, SpacetimeField, SpatialGrid
from lightray.invert import dot_test, relative_error
from lightray.xray import Sinogram, make_rayset

MATTER = make_flrw("matter", 1.0, 2.0)


def isw_data(model, cs, rays, nt, truth):
    op = isw_map(model, cs, rays, nt)
    return ISWData(Sinogram(rays, op.apply(truth.stack())), model)


class TestBackgrounds:
    def test_matter_identity(self):
        bg = MATTER.background
        assert np.abs(2 * bg.Hprime + bg.H**2).max() < 1e-14

    def test_radiation(self):
        bg = make_flrw("radiation", 0.5, 1.5).background
        assert np.allclose(bg.H * bg.s, 1.0) and np.allclose(bg.a, bg.s / 0.5)

    def test_custom_matches_matter(self):
        bg = make_flrw("custom", 1.0, 2.0, scale_factor=lambda s: s**2).background
        assert np.abs(bg.H - MATTER.background.H).max() < 1e-5
        assert np.abs(bg.Hprime - MATTER.background.Hprime).max() < 1e-4

    @pytest.mark.parametrize("args", [("matter", 0.0, 1.0), ("matter", 2.0, 1.0), ("dust", 1.0, 2.0), ("custom", 1.0, 2.0)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            make_flrw(*args)

    def test_dict(self):
        assert MATTER.to_dict() == {"tag": "matter", "s0": 1.0, "s1": 2.0, "samples": 2001}


class TestTimeDerivative:
    def test_quadratic_exact(self):
        t = np.linspace(0, 1, 9)
        d = time_derivative((3 * t**2 - t)[:, None], t[1])
        assert np.allclose(d[:, 0], 6 * t - 1, atol=1e-12)

    def test_constant_gives_exact_zero(self):
        assert np.all(time_derivative(np.full((7, 3), 0.1), 0.1) == 0)

    @given(st.integers(2, 12), st.integers(0, 2**16))
    def test_transpose(self, nt, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, nt, 5))
        lhs = np.sum(time_derivative(a, 0.3) * b)
        rhs = np.sum(a * time_derivative_transpose(b, 0.3))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


class TestForward:
    def setup_method(self):
        self.g = SpatialGrid(12)
        self.rays = make_rayset(self.g, 16, 1.0)
        rng = np.random.default_rng(0)
        self.phi = SpacetimeField(self.g, 1.0, rng.standard_normal((9,) + self.g.shape))

    def test_constant_shift_invisible(self):
        a = isw_forward(self.phi, self.phi, self.rays).sinogram.values
        s = SpacetimeField(self.g, 1.0, self.phi.slices + 0.7)
        b = isw_forward(s, s, self.rays).sinogram.values
        assert np.abs(a - b).max() < 1e-12 * np.abs(a).max()

    def test_zero(self):
        z = SpacetimeField(self.g, 1.0, np.zeros((9,) + self.g.shape))
        assert np.all(isw_forward(z, z, self.rays).sinogram.values == 0)

    def test_mismatched_sampling(self):
        other = SpacetimeField(self.g, 1.0, np.zeros((7,) + self.g.shape))
        with pytest.raises(ValueError):
            isw_forward(self.phi, other, self.rays)

    def test_ray_length_checked(self):
        with pytest.raises(ValueError):
            isw_map(make_flrw("matter", 1.0, 3.0), 1.0, self.rays, 9)

    @pytest.mark.parametrize("cs", [0.0, 1.0])
    def test_chains_adjoint(self, cs):
        assert dot_test(isw_map(MATTER, cs, self.rays, 9)) < 1e-8
        assert dot_test(bardeen_map(MATTER, cs, self.rays, 9)) < 1e-8

    def test_frozen_potential_invisible(self):
        # pressureless matter keeps Phi constant in time, so Phi0 produces no signal
        vis0, vis1 = isw_visibility(MATTER, 0.0, self.rays, 9)
        assert vis0 < 1e-12 and vis1 > 0.1
        vis0, _ = isw_visibility(MATTER, 1.0, self.rays, 9)
        assert vis0 > 1e-3


class TestInversion:
    def test_round_trip_with_pressure(self):
        g = SpatialGrid(24)
        rays = make_rayset(g, 64, 1.0)
        truth = random_cauchy(g, 3, 5)
        d = isw_data(MATTER, 1.0, rays, 11, truth)
        f1, f2, rep = isw_invert(d, MATTER, 1.0, tol=1e-8, maxiter=100, nt=11)
        assert rep.converged
        assert relative_error(truth, CauchyData(f1, f2)) < 1e-2

    def test_pressureless_recovers_velocity_only(self):
        g = SpatialGrid(16)
        rays = make_rayset(g, 32, 1.0)
        truth = random_cauchy(g, 2, 6)
        d = isw_data(MATTER, 0.0, rays, 11, truth)
        f1, f2, rep = isw_invert(d, MATTER, 0.0, tol=1e-8, nt=11)
        assert any("invisible" in n for n in rep.notes)
        assert np.linalg.norm(f2.values - truth.f2.values) < 1e-5 * np.linalg.norm(truth.f2.values)

    def test_gauge_shift_same_reconstruction(self):
        g = SpatialGrid(12)
        rays = make_rayset(g, 32, 1.0)
        truth = random_cauchy(g, 2, 7)
        shifted = CauchyData(ScalarField(g, truth.f1.values + 0.3), truth.f2)
        a = isw_invert(isw_data(MATTER, 0.0, rays, 9, truth), MATTER, 0.0, nt=9)
        b = isw_invert(isw_data(MATTER, 0.0, rays, 9, shifted), MATTER, 0.0, nt=9)
        for x, y in zip(a[:2], b[:2]):
            assert np.abs(x.values - y.values).max() < 1e-10

    def test_zero_data(self):
        rays = make_rayset(SpatialGrid(8), 16, 1.0)
        f1, f2, rep = isw_invert(ISWData(Sinogram.zeros(rays)), MATTER, 1.0, nt=9)
        assert rep.iterations == 0 and np.all(f1.values == 0) and np.all(f2.values == 0)

    def test_needs_slices(self):
        rays = make_rayset(SpatialGrid(8), 16, 1.0)
        with pytest.raises(ValueError):
            isw_invert(ISWData(Sinogram.zeros(rays)), MATTER, 1.0)

    def test_error_stable_in_direction_count(self):
        # smooth truth evaluated through the fine-time map, inverted on the coarse one
        g = SpatialGrid(12)
        x, y, z = g.mesh()
        truth = CauchyData(ScalarField(g, np.sin(x) * np.cos(y) + 0 * z), ScalarField(g, np.cos(z) + np.sin(x + y)))
        errs = []
        for nd in (64, 128):
            rays = make_rayset(g, nd, 1.0)
            d = isw_data(MATTER, 1.0, rays, 21, truth)
            f1, f2, rep = isw_invert(d, MATTER, 1.0, tol=1e-8, nt=11)
            errs.append(relative_error(truth, CauchyData(f1, f2)))
        assert errs[1] < 2 * errs[0] and errs[0] < 2 * errs[1]
