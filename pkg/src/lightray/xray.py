"""Light ray transform on the periodic slab, its spectral counterpart and its transpose.

A ray is labelled by a base point ``y`` on the grid and a unit direction ``v``;
it visits ``(t, y + t v)`` for ``0 <= t <= t1``. Sinogram inner products weight
each direction by its quadrature weight ``w_v``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numba
import numpy as np

from . import _kernels
from .fields import SpacetimeField, SpatialGrid
from .wave import HalfWaveData


class StridedBaseError(ValueError):
    """The operation needs sinogram values at every grid point."""


INTERPOLATION = {"linear": _kernels.LINEAR, "cubic": _kernels.CUBIC}


@dataclass(frozen=True, eq=False)
class RaySet:
    """Base points (every ``stride``-th grid point per axis) and weighted directions."""

    grid: SpatialGrid
    directions: np.ndarray
    weights: np.ndarray
    t1: float
    stride: int = 1

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3 or w.shape != (d.shape[0],):
            raise ValueError("directions must be (nd, 3) with nd weights")
        if np.max(np.abs(np.linalg.norm(d, axis=1) - 1.0)) > 1e-14:
            raise ValueError("directions must be unit vectors")
        if np.any(w <= 0):
            raise ValueError("direction weights must be positive")
        if self.grid.n % self.stride:
            raise ValueError("stride must divide the grid size")
        if not self.t1 > 0:
            raise ValueError("t1 must be positive")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "weights", w)

    @property
    def nd(self) -> int:
        return self.directions.shape[0]

    @property
    def base_shape(self) -> tuple[int, int, int]:
        m = self.grid.n // self.stride
        return (m, m, m)

    @property
    def full(self) -> bool:
        return self.stride == 1

    @cached_property
    def base_indices(self) -> np.ndarray:
        """Grid indices of the base points, shape (nb, 3), row-major over the base grid."""
        r = np.arange(0, self.grid.n, self.stride)
        i, j, k = np.meshgrid(r, r, r, indexing="ij")
        return np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1).astype(float)

    def base_points(self) -> np.ndarray:
        return self.base_indices * self.grid.spacing

    def geometry(self) -> dict:
        return {
            "n": self.grid.n,
            "L": self.grid.L,
            "t1": self.t1,
            "stride": self.stride,
            "directions": self.directions.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_geometry(cls, geo: dict) -> "RaySet":
        """Inverse of ``geometry``."""
        grid = SpatialGrid(int(geo["n"]), float(geo["L"]))
        return cls(grid, np.asarray(geo["directions"]), np.asarray(geo["weights"]), float(geo["t1"]), int(geo["stride"]))


def fibonacci_directions(nd: int) -> np.ndarray:
    i = np.arange(nd) + 0.5
    z = 1.0 - 2.0 * i / nd
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(nd)
    r = np.sqrt(1.0 - z**2)
    d = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def make_rayset(grid: SpatialGrid, nd: int, t1: float, stride: int = 1) -> RaySet:
    """Fibonacci-sphere directions with equal weights ``4*pi/nd``; six axis directions for nd = 6."""
    if nd < 6:
        raise ValueError(f"need at least 6 directions, got {nd}")
    if nd == 6:
        e = np.eye(3)
        dirs = np.concatenate([e, -e])
    else:
        dirs = fibonacci_directions(nd)
    return RaySet(grid, dirs, np.full(nd, 4.0 * np.pi / nd), float(t1), stride)


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Transform values with shape ``base_shape + (nd,)``."""

    rays: RaySet
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = self.rays.base_shape + (self.rays.nd,)
        if v.shape != shape:
            raise ValueError(f"expected sinogram shape {shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sinogram contains non-finite values")
        object.__setattr__(self, "values", v)

    def inner(self, other: "Sinogram") -> float:
        return weighted_inner(self.values, other.values, self.rays.weights)

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    @classmethod
    def zeros(cls, rays: RaySet) -> "Sinogram":
        return cls(rays, np.zeros(rays.base_shape + (rays.nd,)))


def weighted_inner(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> float:
    """``sum_{y,v} w_v a b`` for arrays whose last axis indexes directions."""
    return float(np.sum(np.sum(a * b, axis=tuple(range(a.ndim - 1))) * weights))


def quadrature_weights(nt: int, t1: float, rule: str = "trapezoid") -> np.ndarray:
    dt = t1 / (nt - 1)
    if rule == "trapezoid":
        w = np.full(nt, dt)
        w[0] = w[-1] = 0.5 * dt
        return w
    if rule == "simpson":
        if nt % 2 == 0:
            raise ValueError("Simpson's rule needs an odd number of slices")
        w = np.full(nt, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return w * dt / 3.0
    raise ValueError(f"unknown quadrature rule {rule!r}")


def _nchunk(nd: int) -> int:
    return max(1, min(nd, numba.get_num_threads()))


def _dev_args(deviation: Optional[np.ndarray], sample_weights: Optional[np.ndarray]):
    dev = (np.zeros((0, 0, 0, 3), dtype=np.float32), False) if deviation is None else (deviation, True)
    sw = (np.zeros((0, 0, 0)), False) if sample_weights is None else (sample_weights, True)
    return dev + sw


def ray_integrals(
    slices: np.ndarray,
    rays: RaySet,
    deviation: Optional[np.ndarray] = None,
    interp: str = "linear",
    quadrature: str = "trapezoid",
    sample_weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Raw gather: returns sinogram values shaped ``base_shape + (nd,)``.

    ``deviation`` (nd, nb, nt, 3) displaces samples off the straight rays and
    ``sample_weights`` (nd, nb, nt) rescales individual quadrature weights.
    """
    nt = slices.shape[0]
    g = rays.grid
    times = np.linspace(0.0, rays.t1, nt)
    tw = quadrature_weights(nt, rays.t1, quadrature)
    dev, has_dev, sw, has_sw = _dev_args(deviation, sample_weights)
    out = _kernels.gather(
        np.ascontiguousarray(slices, dtype=float),
        rays.directions,
        times,
        tw,
        rays.base_indices,
        dev,
        has_dev,
        sw,
        has_sw,
        1.0 / g.spacing,
        INTERPOLATION[interp],
        _nchunk(rays.nd),
    )
    return out.reshape(rays.base_shape + (rays.nd,))


def ray_backprojection(
    values: np.ndarray,
    rays: RaySet,
    nt: int,
    deviation: Optional[np.ndarray] = None,
    interp: str = "linear",
    quadrature: str = "trapezoid",
    sample_weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Raw scatter: exact transpose of ``ray_integrals`` under the weighted inner product."""
    g = rays.grid
    times = np.linspace(0.0, rays.t1, nt)
    tw = quadrature_weights(nt, rays.t1, quadrature)
    dev, has_dev, sw, has_sw = _dev_args(deviation, sample_weights)
    data = np.ascontiguousarray(values.reshape(-1, rays.nd), dtype=float)
    return _kernels.scatter(
        data,
        rays.directions,
        rays.weights,
        times,
        tw,
        rays.base_indices,
        dev,
        has_dev,
        sw,
        has_sw,
        1.0 / g.spacing,
        INTERPOLATION[interp],
        nt,
        g.n,
    )


def _check_time(f: SpacetimeField, rays: RaySet) -> None:
    if f.grid != rays.grid:
        raise ValueError("field and rays use different grids")
    if abs(f.t1 - rays.t1) > 1e-12 * rays.t1:
        raise ValueError(f"field covers t1={f.t1}, rays need t1={rays.t1}")


def transform_physical(
    f: SpacetimeField, rays: RaySet, interp: str = "linear", quadrature: str = "trapezoid"
) -> Sinogram:
    """``X f(y, v) = int_0^t1 f(t, y + t v) dt`` by quadrature over the slices."""
    _check_time(f, rays)
    return Sinogram(rays, ray_integrals(f.slices, rays, None, interp, quadrature))


def adjoint(
    sino: Sinogram, grid: SpatialGrid, nt: int, interp: str = "linear", quadrature: str = "trapezoid"
) -> SpacetimeField:
    """Backprojection: exact transpose of ``transform_physical`` with the same options."""
    if grid != sino.rays.grid:
        raise ValueError("sinogram and target grid differ")
    out = ray_backprojection(sino.values, sino.rays, nt, None, interp, quadrature)
    return SpacetimeField(grid, sino.rays.t1, out)


def multiplier(xi, v, c: float, t1: float, sign: int):
    """``int_0^t1 exp(i t (v.xi + sign*c|xi|)) dt`` in closed form.

    ``xi`` has shape (..., 3) and ``v`` shape (3,) or broadcastable.
    """
    xi = np.asarray(xi, dtype=float)
    v = np.asarray(v, dtype=float)
    alpha = np.sum(xi * v, axis=-1) + (1 if sign > 0 else -1) * c * np.linalg.norm(xi, axis=-1)
    return _phase_integral(alpha, t1)


def _phase_integral(alpha, t1: float):
    alpha = np.asarray(alpha, dtype=float)
    x = alpha * t1
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    big = np.expm1(1j * xs) / (1j * xs)
    series = 1.0 + 0.5j * x - x**2 / 6.0 - 1j * x**3 / 24.0
    out = t1 * np.where(small, series, big)
    return out if out.ndim else complex(out)


def multiplier_tables(grid: SpatialGrid, v: np.ndarray, c: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
    """``m+`` and ``m-`` on the full frequency lattice for one direction."""
    a, b, d = grid.xi
    dot = a * v[0] + b * v[1] + d * v[2]
    cw = c * grid.xi_norm
    return _phase_integral(dot + cw, t1), _phase_integral(dot - cw, t1)


def transform_spectral(hw: HalfWaveData, rays: RaySet) -> Sinogram:
    """Exact transform of the free wave with half-wave data ``hw`` (periodic model)."""
    if not rays.full:
        raise StridedBaseError("spectral transform needs the full base grid")
    g = hw.grid
    if g != rays.grid:
        raise ValueError("half-wave data and rays use different grids")
    t1 = rays.t1
    h1, h2 = hw.h1.coefficients, hw.h2.coefficients
    m0, m1 = hw.zero_mode
    dc = t1 * (m0 + (0.5 * t1) * m1) * g.n**3
    out = np.empty(g.shape + (rays.nd,))
    for i, v in enumerate(rays.directions):
        mp, mm = multiplier_tables(g, v, hw.c, t1)
        dh = h1 * mp + h2 * mm
        dh[0, 0, 0] = dc
        out[..., i] = np.fft.ifftn(dh).real
    return Sinogram(rays, out)

