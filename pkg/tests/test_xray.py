import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import random_cauchy
from lightray.fields import CauchyData, ScalarField, SpacetimeField, SpatialGrid
from lightray.wave import solve_cauchy_spectral, split_half_waves
from lightray.xray import (
    RaySet,
    Sinogram,
    StridedBaseError,
    adjoint,
    fibonacci_directions,
    make_rayset,
    multiplier,
    quadrature_weights,
    ray_backprojection,
    ray_integrals,
    transform_physical,
    transform_spectral,
    weighted_inner,
)

seeds = st.integers(0, 2**16)
G8 = SpatialGrid(8)


def random_field(g, t1, nt, seed):
    return SpacetimeField(g, t1, np.random.default_rng(seed).standard_normal((nt,) + g.shape))


def random_sino(rays, seed):
    return Sinogram(rays, np.random.default_rng(seed).standard_normal(rays.base_shape + (rays.nd,)))


class TestRaySet:
    def test_axis_layout_for_six(self):
        r = make_rayset(G8, 6, 1.0)
        assert np.array_equal(np.abs(r.directions).sum(axis=0), [2, 2, 2])
        assert r.weights.sum() == pytest.approx(4 * np.pi)

    def test_rejects_too_few(self):
        with pytest.raises(ValueError):
            make_rayset(G8, 5, 1.0)

    @given(st.integers(7, 400))
    def test_fibonacci_unit_and_weights(self, nd):
        d = fibonacci_directions(nd)
        assert np.abs(np.linalg.norm(d, axis=1) - 1).max() < 1e-14
        r = make_rayset(G8, nd, 1.0)
        assert r.weights.sum() == pytest.approx(4 * np.pi)

    def test_fibonacci_is_balanced(self):
        # frozen: the equal-weight rule integrates z^2 over the sphere (4 pi / 3) to 1e-4 at nd = 256
        d = fibonacci_directions(256)
        assert abs(np.sum(d[:, 2] ** 2) * 4 * np.pi / 256 - 4 * np.pi / 3) < 1e-3
        assert np.abs(d.mean(axis=0)).max() < 1e-2

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(directions=np.ones((3, 3)), weights=np.ones(3)),
            dict(directions=np.eye(3), weights=-np.ones(3)),
            dict(directions=np.eye(3), weights=np.ones(2)),
            dict(directions=np.eye(3), weights=np.ones(3), stride=3),
            dict(directions=np.eye(3), weights=np.ones(3), t1=0.0),
        ],
    )
    def test_invalid(self, kwargs):
        args = dict(grid=G8, t1=1.0, stride=1) | kwargs
        with pytest.raises(ValueError):
            RaySet(**args)

    def test_geometry_round_trip(self):
        r = make_rayset(SpatialGrid(8, 3.0), 10, 0.7, stride=2)
        back = RaySet.from_geometry(r.geometry())
        assert back.grid == r.grid and back.t1 == r.t1 and back.stride == 2
        assert np.array_equal(back.directions, r.directions) and np.array_equal(back.weights, r.weights)

    def test_strided_base(self):
        r = make_rayset(G8, 6, 1.0, stride=4)
        assert r.base_shape == (2, 2, 2)
        assert r.base_indices.tolist()[:2] == [[0, 0, 0], [0, 0, 4]]


class TestSinogram:
    def test_shape_and_finiteness(self):
        r = make_rayset(G8, 6, 1.0)
        with pytest.raises(ValueError):
            Sinogram(r, np.zeros((8, 8, 8, 5)))
        bad = np.zeros((8, 8, 8, 6))
        bad[0, 0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            Sinogram(r, bad)

    def test_weighted_inner(self):
        a = np.ones((2, 3))
        assert weighted_inner(a, 2 * a, np.array([1.0, 2.0, 3.0])) == pytest.approx(24.0)


class TestQuadrature:
    @pytest.mark.parametrize("rule", ["trapezoid", "simpson"])
    def test_integrates_linear_exactly(self, rule):
        t = np.linspace(0, 2.0, 9)
        w = quadrature_weights(9, 2.0, rule)
        assert w.sum() == pytest.approx(2.0) and np.dot(w, t) == pytest.approx(2.0)

    def test_simpson_cubic_exact_and_odd(self):
        t = np.linspace(0, 1.0, 5)
        assert np.dot(quadrature_weights(5, 1.0, "simpson"), t**3) == pytest.approx(0.25)
        with pytest.raises(ValueError):
            quadrature_weights(4, 1.0, "simpson")
        with pytest.raises(ValueError):
            quadrature_weights(5, 1.0, "gauss")


class TestTransform:
    def test_constant_field(self):
        r = make_rayset(G8, 10, 1.5)
        f = SpacetimeField(G8, 1.5, np.full((7,) + G8.shape, 2.0))
        assert np.allclose(transform_physical(f, r).values, 3.0, atol=1e-13)

    def test_rejects_mismatched_time(self):
        r = make_rayset(G8, 6, 1.0)
        with pytest.raises(ValueError):
            transform_physical(SpacetimeField.zeros(G8, 2.0, 5), r)

    @given(seeds, st.floats(-3, 3), st.floats(-3, 3))
    def test_linear(self, seed, a, b):
        r = make_rayset(G8, 7, 1.0)
        f, h = random_field(G8, 1.0, 5, seed), random_field(G8, 1.0, 5, seed + 1)
        lhs = ray_integrals(a * f.slices + b * h.slices, r)
        rhs = a * ray_integrals(f.slices, r) + b * ray_integrals(h.slices, r)
        assert np.abs(lhs - rhs).max() <= 1e-12 * (1 + np.abs(rhs).max())

    @given(seeds, st.integers(0, 7), st.integers(0, 7), st.integers(0, 7))
    def test_translation_equivariant(self, seed, i, j, k):
        r = make_rayset(G8, 7, 1.0)
        f = random_field(G8, 1.0, 5, seed)
        shifted = np.roll(f.slices, (i, j, k), axis=(1, 2, 3))
        a = np.roll(ray_integrals(f.slices, r), (i, j, k), axis=(0, 1, 2))
        assert np.abs(ray_integrals(shifted, r) - a).max() < 1e-12

    def test_plane_wave_against_closed_form(self):
        # f = cos(xi.x + tau t): the closed-form line integral is Re(e^{i xi.y} m) with m = int e^{i t (v.xi + tau)}
        g = SpatialGrid(32)
        t1, nt, tau = 1.0, 129, 0.4
        xi = np.array([1.0, -1.0, 2.0])
        r = make_rayset(g, 12, t1)
        x, y, z = g.mesh()
        t = np.linspace(0, t1, nt)[:, None, None, None]
        f = np.cos(xi[0] * x + xi[1] * y + xi[2] * z + tau * t)
        sino = ray_integrals(f, r)
        phase = np.exp(1j * (xi[0] * x + xi[1] * y + xi[2] * z))
        errs = []
        for iv, v in enumerate(r.directions):
            alpha = v @ xi + tau
            m = (np.exp(1j * alpha * t1) - 1) / (1j * alpha)
            errs.append(np.abs(sino[..., iv] - (phase * m).real).max())
        # trilinear error ~ h^2 |xi|^2 / 8 per unit length
        assert max(errs) < 0.02

    @pytest.mark.parametrize("interp", ["linear", "cubic"])
    @pytest.mark.parametrize("quad_rule", ["trapezoid", "simpson"])
    @pytest.mark.parametrize("stride", [1, 2])
    def test_exact_transpose(self, interp, quad_rule, stride):
        g = SpatialGrid(8, 5.0)
        r = make_rayset(g, 9, 1.3, stride=stride)
        f = random_field(g, 1.3, 7, 0)
        s = random_sino(r, 1)
        lhs = Sinogram(r, ray_integrals(f.slices, r, None, interp, quad_rule)).inner(s)
        rhs = np.sum(f.slices * ray_backprojection(s.values, r, 7, None, interp, quad_rule))
        assert abs(lhs - rhs) < 1e-12 * abs(lhs)

    def test_adjoint_wrapper(self):
        r = make_rayset(G8, 6, 1.0)
        s = random_sino(r, 2)
        back = adjoint(s, G8, 5)
        assert back.nt == 5 and np.array_equal(back.slices, ray_backprojection(s.values, r, 5))

    def test_deterministic_backprojection(self):
        r = make_rayset(SpatialGrid(12), 20, 1.0)
        s = random_sino(r, 3)
        a = ray_backprojection(s.values, r, 9)
        assert np.array_equal(a, ray_backprojection(s.values, r, 9))

    def test_sample_weights_and_deviation(self):
        r = make_rayset(G8, 6, 1.0)
        f = random_field(G8, 1.0, 5, 4)
        nb = 8**3
        ones = np.ones((6, nb, 5))
        zero = np.zeros((6, nb, 5, 3), dtype=np.float32)
        assert np.array_equal(ray_integrals(f.slices, r, zero, sample_weights=ones), ray_integrals(f.slices, r))
        # a whole-cell shift along x equals rolling the field, up to the float32 storage of deviations
        shift = zero.copy()
        shift[..., 0] = G8.spacing
        rolled = np.roll(f.slices, -1, axis=1)
        assert np.abs(ray_integrals(f.slices, r, shift) - ray_integrals(rolled, r)).max() < 1e-6


class TestMultiplier:
    @given(st.floats(-20, 20), st.floats(0.1, 3))
    def test_matches_quadrature(self, alpha, t1):
        re = quad(lambda t: np.cos(alpha * t), 0, t1, epsabs=1e-13)[0]
        im = quad(lambda t: np.sin(alpha * t), 0, t1, epsabs=1e-13)[0]
        m = multiplier(np.array([alpha, 0, 0]), np.array([1.0, 0, 0]), 0.0, t1, 1)
        assert abs(m - (re + 1j * im)) < 1e-10

    def test_series_branch_continuous(self):
        v = np.array([1.0, 0, 0])
        below = multiplier(np.array([0.99e-4, 0, 0]), v, 0.0, 1.0, 1)
        above = multiplier(np.array([1.01e-4, 0, 0]), v, 0.0, 1.0, 1)
        assert abs(below - above) < 1e-5 and abs(below - 1) < 1e-4

    def test_resonant_direction(self):
        # v.xi = -c|xi| for the + branch: the integrand is 1
        xi = np.array([0.0, 0.0, 2.0])
        assert multiplier(xi, np.array([0, 0, -1.0]), 1.0, 0.8, 1) == pytest.approx(0.8)


class TestSpectralTransform:
    def test_null_vector_is_exactly_zero(self):
        g, t1, kappa = SpatialGrid(8), 1.7, 3.0
        d = CauchyData(ScalarField(g, np.full(g.shape, -kappa * t1 / 2)), ScalarField(g, np.full(g.shape, kappa)))
        r = make_rayset(g, 16, t1)
        s = transform_spectral(split_half_waves(d, 0.6), r)
        assert s.norm() < 1e-8 * kappa * t1 * np.sqrt(g.L**3)
        phys = transform_physical(solve_cauchy_spectral(d, 0.6, t1, 9), r)
        assert phys.norm() < 1e-12 * kappa * t1 * np.sqrt(g.L**3)

    def test_matches_physical_on_smooth_data(self):
        t1, c = 1.0, 0.75
        errs = []
        for n in (12, 24):
            g = SpatialGrid(n)
            xs, ys, zs = g.mesh()
            f1 = np.sin(xs + 2 * ys) * np.cos(zs) + 0 * xs
            d = CauchyData(ScalarField(g, f1), ScalarField(g, np.cos(ys - zs) + 0 * xs))
            r = make_rayset(g, 16, t1)
            exact = transform_spectral(split_half_waves(d, c), r).values
            approx = transform_physical(solve_cauchy_spectral(d, c, t1, 2 * n + 1), r).values
            errs.append(np.linalg.norm(approx - exact) / np.linalg.norm(exact))
        # frozen from the refinement study (n = 48 gives 5.6e-3)
        assert errs[1] == pytest.approx(2.1776e-2, rel=1e-3)
        assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)

    def test_needs_full_base(self):
        r = make_rayset(G8, 6, 1.0, stride=2)
        with pytest.raises(StridedBaseError):
            transform_spectral(split_half_waves(random_cauchy(G8, 2, 0), 0.5), r)

    @given(seeds)
    def test_linear_in_data(self, seed):
        r = make_rayset(G8, 7, 1.0)
        a, b = random_cauchy(G8, 3, seed), random_cauchy(G8, 3, seed + 5)
        s = CauchyData(a.f1 + b.f1, a.f2 + b.f2)
        lhs = transform_spectral(split_half_waves(s, 0.8), r).values
        rhs = transform_spectral(split_half_waves(a, 0.8), r).values + transform_spectral(split_half_waves(b, 0.8), r).values
        assert np.abs(lhs - rhs).max() < 1e-12 * (1 + np.abs(rhs).max())
