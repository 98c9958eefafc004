"""Periodic grids, discrete Fourier transforms, Sobolev norms and field containers.

Fourier convention used across the package: ``dft3`` is an unnormalised forward
FFT, ``idft3`` carries the ``1/n^3`` factor, and the angular frequency attached to
lattice index ``k`` is ``xi_k = 2*pi*k/L``. A grid function therefore reads
``f(x) = n^-3 * sum_k fhat(k) exp(i xi_k . x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class NonzeroMeanError(ValueError):
    """A negative-order multiplier met a field whose mean does not vanish."""


@dataclass(frozen=True)
class SpatialGrid:
    """Cubic periodic grid with ``n`` points per axis on a box of side ``L``."""

    n: int
    L: float = 2.0 * np.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"grid needs an integer n >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")

    @property
    def spacing(self) -> float:
        return self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @cached_property
    def coords(self) -> np.ndarray:
        """Sample positions along one axis."""
        return np.arange(self.n) * self.spacing

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular frequencies ``2*pi*k/L`` along one axis in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)

    @cached_property
    def indices(self) -> np.ndarray:
        """Signed lattice indices along one axis in FFT order."""
        return np.rint(np.fft.fftfreq(self.n, d=1.0 / self.n)).astype(int)

    @cached_property
    def xi(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable frequency components (shapes (n,1,1), (1,n,1), (1,1,n))."""
        w = self.wavenumbers
        return (w[:, None, None], w[None, :, None], w[None, None, :])

    @cached_property
    def xi_norm(self) -> np.ndarray:
        """|xi| on the full frequency lattice."""
        a, b, c = self.xi
        return np.sqrt(a**2 + b**2 + c**2)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on lattice points with any index equal to -n/2."""
        ny = self.indices == -self.n // 2
        return ny[:, None, None] | ny[None, :, None] | ny[None, None, :]

    def linf_index(self) -> np.ndarray:
        """Max-norm of the signed lattice index at each frequency."""
        k = np.abs(self.indices)
        return np.maximum(np.maximum(k[:, None, None], k[None, :, None]), k[None, None, :])

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.coords
        return (x[:, None, None], x[None, :, None], x[None, None, :])


def _finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class ScalarField:
    """Real samples of a function on a ``SpatialGrid``."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {v.shape}")
        _finite(v, "field")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: SpatialGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    def mean(self) -> float:
        return float(self.values.mean())

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(self.values**2)))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "ScalarField":
        return ScalarField(self.grid, a * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpectralField:
    """Discrete Fourier coefficients in FFT index order."""

    grid: SpatialGrid
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {c.shape}")
        object.__setattr__(self, "coefficients", c)

    def hermitian_defect(self) -> float:
        """Max |c(-k) - conj c(k)| relative to max |c|; zero for real fields."""
        c = self.coefficients
        flipped = np.roll(c[::-1, ::-1, ::-1], 1, axis=(0, 1, 2))
        scale = max(np.abs(c).max(), 1e-300)
        return float(np.abs(flipped - np.conj(c)).max() / scale)


@dataclass(frozen=True)
class SpacetimeField:
    """A field sampled on ``nt`` uniformly spaced slices ``t_j = j*t1/(nt-1)``."""

    grid: SpatialGrid
    t1: float
    slices: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.slices, dtype=float)
        if s.ndim != 4 or s.shape[1:] != self.grid.shape:
            raise ValueError(f"expected shape (nt,{self.grid.n},{self.grid.n},{self.grid.n}), got {s.shape}")
        if s.shape[0] < 2:
            raise ValueError("need at least two time slices")
        if not self.t1 > 0:
            raise ValueError("t1 must be positive")
        _finite(s, "spacetime field")
        object.__setattr__(self, "slices", s)

    @property
    def nt(self) -> int:
        return self.slices.shape[0]

    @property
    def dt(self) -> float:
        return self.t1 / (self.nt - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t1, self.nt)

    def slice(self, j: int) -> ScalarField:
        return ScalarField(self.grid, self.slices[j])

    @classmethod
    def zeros(cls, grid: SpatialGrid, t1: float, nt: int) -> "SpacetimeField":
        return cls(grid, t1, np.zeros((nt,) + grid.shape))


@dataclass(frozen=True)
class CauchyData:
    """Initial value ``f1`` and initial time derivative ``f2``."""

    f1: ScalarField
    f2: ScalarField

    def __post_init__(self):
        if self.f1.grid != self.f2.grid:
            raise ValueError("f1 and f2 live on different grids")

    @property
    def grid(self) -> SpatialGrid:
        return self.f1.grid

    def stack(self) -> np.ndarray:
        return np.stack([self.f1.values, self.f2.values])

    @classmethod
    def from_stack(cls, grid: SpatialGrid, arr: np.ndarray) -> "CauchyData":
        return cls(ScalarField(grid, arr[0]), ScalarField(grid, arr[1]))

    @classmethod
    def zeros(cls, grid: SpatialGrid) -> "CauchyData":
        return cls(ScalarField.zeros(grid), ScalarField.zeros(grid))


@dataclass(frozen=True)
class SobolevIndex:
    s: float = 0.0

    def __float__(self) -> float:
        return float(self.s)


def dft3(f: ScalarField) -> SpectralField:
    return SpectralField(f.grid, np.fft.fftn(f.values))


def idft3(spec: SpectralField) -> ScalarField:
    return ScalarField(spec.grid, np.fft.ifftn(spec.coefficients).real)


def sobolev_weight(grid: SpatialGrid, s: float) -> np.ndarray:
    return (1.0 + grid.xi_norm**2) ** float(s)


def sobolev_norm(f: ScalarField, s: float | SobolevIndex = 0.0) -> float:
    """Spectral H^s norm: ``(dV * sum_k (1+|xi|^2)^s |fhat|^2 / n^3)^(1/2)``."""
    g = f.grid
    fh = np.fft.fftn(f.values)
    total = np.sum(sobolev_weight(g, float(s)) * np.abs(fh) ** 2) / g.n**3
    return float(np.sqrt(g.cell_volume * total))


def fractional_laplacian(f: ScalarField, power: float, mean_tol: float = 1e-10) -> ScalarField:
    """Apply the multiplier ``|xi|^(2*power)``; the zero mode maps to zero for negative powers."""
    g = f.grid
    fh = np.fft.fftn(f.values)
    if power == 0:
        return ScalarField(g, f.values.copy())
    if power < 0:
        scale = max(np.abs(fh).max(), 1e-300)
        if abs(fh[0, 0, 0]) > mean_tol * scale:
            raise NonzeroMeanError("negative power applied to a field with nonzero mean")
        mult = np.zeros_like(g.xi_norm)
        nz = g.xi_norm > 0
        mult[nz] = g.xi_norm[nz] ** (2.0 * power)
    else:
        mult = g.xi_norm ** (2.0 * power)
    return ScalarField(g, np.fft.ifftn(mult * fh).real)


def make_bandlimited_random(grid: SpatialGrid, kmax: int, seed: int, mean_zero: bool = False) -> ScalarField:
    """Random real field whose coefficients vanish for ``|k|_inf > kmax``; unit RMS."""
    if not 0 <= kmax <= grid.n // 2:
        raise ValueError(f"kmax must lie in [0, n/2], got {kmax}")
    rng = np.random.default_rng(seed)
    fh = np.fft.fftn(rng.standard_normal(grid.shape))
    fh[grid.linf_index() > kmax] = 0.0
    if mean_zero:
        fh[0, 0, 0] = 0.0
    v = np.fft.ifftn(fh).real
    rms = np.sqrt(np.mean(v**2))
    if rms > 0:
        v = v / rms
    return ScalarField(grid, v)


def resample(f: ScalarField, n_new: int) -> ScalarField:
    """Trigonometric interpolation onto an ``n_new`` grid of the same box.

    Nyquist planes of the coarser grid are dropped, so band-limited inputs are
    reproduced exactly.
    """
    g = f.grid
    g_new = SpatialGrid(n_new, g.L)
    fh = np.fft.fftn(f.values)
    m = min(g.n, n_new)
    keep = [i for i in range(-(m // 2) + 1, m // 2)]
    out = np.zeros(g_new.shape, dtype=complex)
    idx_old = np.array(keep) % g.n
    idx_new = np.array(keep) % n_new
    out[np.ix_(idx_new, idx_new, idx_new)] = fh[np.ix_(idx_old, idx_old, idx_old)]
    out *= (n_new / g.n) ** 3
    return ScalarField(g_new, np.fft.ifftn(out).real)


def _covering_arc(occupied: np.ndarray) -> int:
    """Length (in samples) of the shortest periodic arc containing all occupied indices."""
    idx = np.flatnonzero(occupied)
    n = occupied.size
    if idx.size == 0:
        return 0
    gaps = np.diff(np.concatenate([idx, [idx[0] + n]]))
    return n - int(gaps.max()) + 1


def support_check(data: CauchyData, c: float, t1: float) -> bool:
    """True when the data support, dilated by ``c*t1 + 2*spacing``, fits inside one period."""
    g = data.grid
    a = np.maximum(np.abs(data.f1.values), np.abs(data.f2.values))
    peak = a.max()
    if peak == 0:
        return True
    mask = a > 1e-10 * peak
    margin = c * t1 + 2.0 * g.spacing
    for axis in range(3):
        other = tuple(i for i in range(3) if i != axis)
        arc = _covering_arc(mask.any(axis=other)) * g.spacing
        if arc + 2.0 * margin >= g.L:
            return False
    return True
