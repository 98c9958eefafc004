"""Reconstruction of Cauchy data from sinograms.

Contents:

* ``slice_solve``: exact per-frequency least squares for the periodic free-wave model;
* symbol utilities: the cutoff ``chi1``, the reference normal symbol ``4 pi^2/|xi|``
  and a numerical estimate of it through the discrete transform;
* preconditioned CG on the normal equations for any linear forward map with an
  exact transpose;
* the Fourier slice evaluation of space-time Fourier coefficients;
* stability reporting in spectral Sobolev norms.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .fields import (
    CauchyData,
    ScalarField,
    SpacetimeField,
    SpatialGrid,
    SpectralField,
    sobolev_norm,
    sobolev_weight,
)
from .wave import (
    HalfWaveData,
    LowerOrderCoefficients,
    flat_operator,
    solve_cauchy_spectral,
    spectral_adjoint_apply,
)
from .xray import (
    RaySet,
    Sinogram,
    StridedBaseError,
    multiplier_tables,
    quadrature_weights,
    ray_backprojection,
    ray_integrals,
    weighted_inner,
)


class TooFewDirections(ValueError):
    """Not enough sampled directions for the per-frequency solve."""


class IllConditioned(np.linalg.LinAlgError):
    """A per-frequency system is numerically singular."""


class ZeroSpatialFrequency(ValueError):
    """The normal symbol is undefined at zero spatial frequency."""


class TimelikeFrequency(ValueError):
    """No light direction is orthogonal to a time-like covector."""


class AdjointMismatch(AssertionError):
    """The supplied transpose fails the dot-product test."""


class MaxIterReached(UserWarning):
    """CG stopped at the iteration cap before reaching the tolerance."""


# ---------------------------------------------------------------------------
# Per-frequency slice solver


@dataclass(frozen=True)
class SliceSolveOptions:
    tikhonov: Optional[float] = None
    min_directions: int = 16

    def __post_init__(self):
        if self.tikhonov is not None and self.tikhonov < 0:
            raise ValueError("tikhonov parameter must be nonnegative")

    def regularization(self, t1: float) -> float:
        return 1e-10 * t1**2 if self.tikhonov is None else self.tikhonov


@dataclass(frozen=True)
class GramDiagnostics:
    """Smallest Gram eigenvalue and smallest singular value of the weighted design matrix over k != 0."""

    min_eigenvalue: float
    min_singular_value: float
    worst_frequency: tuple[int, int, int]


def _slice_grams(rays: RaySet, c: float, values: Optional[np.ndarray] = None):
    """Accumulate per-frequency Gram entries (and right-hand sides when data is given)."""
    g = rays.grid
    t1 = rays.t1
    g11 = np.zeros(g.shape)
    g22 = np.zeros(g.shape)
    g12 = np.zeros(g.shape, dtype=complex)
    b1 = b2 = None
    if values is not None:
        b1 = np.zeros(g.shape, dtype=complex)
        b2 = np.zeros(g.shape, dtype=complex)
    for i, (v, w) in enumerate(zip(rays.directions, rays.weights)):
        mp, mm = multiplier_tables(g, v, c, t1)
        g11 += w * np.abs(mp) ** 2
        g22 += w * np.abs(mm) ** 2
        g12 += w * np.conj(mp) * mm
        if values is not None:
            dh = np.fft.fftn(values[..., i])
            b1 += w * np.conj(mp) * dh
            b2 += w * np.conj(mm) * dh
    return g11, g22, g12, b1, b2


def _eig_min(g11, g22, g12):
    tr = g11 + g22
    disc = np.sqrt((g11 - g22) ** 2 + 4.0 * np.abs(g12) ** 2)
    return 0.5 * (tr - disc)


def _interior_mask(grid: SpatialGrid) -> np.ndarray:
    m = ~grid.nyquist_mask
    m[0, 0, 0] = False
    return m


def gram_diagnostics(rays: RaySet, c: float) -> GramDiagnostics:
    g11, g22, g12, _, _ = _slice_grams(rays, c)
    lam = _eig_min(g11, g22, g12)
    mask = _interior_mask(rays.grid)
    lam_m = np.where(mask, lam, np.inf)
    idx = np.unravel_index(np.argmin(lam_m), lam.shape)
    k = tuple(int(rays.grid.indices[i]) for i in idx)
    lmin = float(lam_m[idx])
    return GramDiagnostics(lmin, float(np.sqrt(max(lmin, 0.0))), k)


def slice_solve(sino: Sinogram, c: float, opts: Optional[SliceSolveOptions] = None) -> HalfWaveData:
    """Recover half-wave data from a full-grid sinogram of a free wave of speed ``c``.

    Each lattice frequency ``k != 0`` solves the weighted, Tikhonov-regularised
    least-squares problem ``dhat(k, v) ~ h1(k) m+(k, v) + h2(k) m-(k, v)`` over the
    sampled directions. The zero mode is recovered in the gauge ``m1 = 0``;
    Nyquist planes are set to zero.
    """
    opts = opts or SliceSolveOptions()
    rays = sino.rays
    if rays.nd < opts.min_directions:
        raise TooFewDirections(f"{rays.nd} directions < required {opts.min_directions}")
    if not rays.full:
        raise StridedBaseError("slice solve needs the full base grid")
    g = rays.grid
    t1 = rays.t1
    lam = opts.regularization(t1)
    g11, g22, g12, b1, b2 = _slice_grams(rays, c, sino.values)
    mask = _interior_mask(g)
    smin = np.sqrt(np.maximum(_eig_min(g11, g22, g12), 0.0))
    if np.min(smin[mask]) < 1e-8 * t1:
        raise IllConditioned(f"smallest singular value {np.min(smin[mask]):.3e} below {1e-8 * t1:.3e}")
    a11 = g11 + lam
    a22 = g22 + lam
    det = a11 * a22 - np.abs(g12) ** 2
    det = np.where(mask, det, 1.0)
    h1 = (a22 * b1 - g12 * b2) / det
    h2 = (a11 * b2 - np.conj(g12) * b1) / det
    h1[~mask] = 0.0
    h2[~mask] = 0.0
    mean_per_dir = sino.values.mean(axis=(0, 1, 2))
    m0 = float(np.sum(rays.weights * mean_per_dir) / np.sum(rays.weights) / t1)
    return HalfWaveData(SpectralField(g, h1), SpectralField(g, h2), (m0, 0.0), c)


# ---------------------------------------------------------------------------
# Symbols


def _smootherstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def chi1_cutoff(xi0: float, xi, c: float) -> float:
    """``chi(xi0^2 / (c^2 |xi|^2))`` with ``chi`` = 1 below 1, 0 above ``1/c^2``, C^2 in between."""
    k = float(np.linalg.norm(np.asarray(xi, dtype=float)))
    if xi0 == 0:
        return 1.0
    if k == 0:
        return 0.0
    if c >= 1:
        return 1.0 if xi0**2 <= k**2 else 0.0
    s = xi0**2 / (c**2 * k**2)
    x = (s - 1.0) / (1.0 / c**2 - 1.0)
    return float(1.0 - _smootherstep(x))


def normal_symbol_reference(xi0: float, xi, c: float) -> float:
    """Reference symbol ``(4 pi^2/|xi|) chi1^2`` of the normal operator."""
    k = float(np.linalg.norm(np.asarray(xi, dtype=float)))
    if k == 0:
        raise ZeroSpatialFrequency("normal symbol needs a nonzero spatial frequency")
    return 4.0 * np.pi**2 / k * chi1_cutoff(xi0, xi, c) ** 2


def windowed_plane_wave(
    xi0: float, xi, width: float, grid: SpatialGrid, t1: float, nt: int, center: Optional[float] = None
) -> np.ndarray:
    """Complex samples of ``W(t) exp(i(t xi0 + x.xi))`` with a Gaussian window ``W``."""
    center = 0.5 * t1 if center is None else center
    t = np.linspace(0.0, t1, nt)
    w = np.exp(-0.5 * ((t - center) / width) ** 2)
    x, y, z = grid.mesh()
    xi = np.asarray(xi, dtype=float)
    spatial = np.exp(1j * (x * xi[0] + y * xi[1] + z * xi[2]))
    return (w * np.exp(1j * xi0 * t))[:, None, None, None] * spatial[None]


def _check_lattice(xi, grid: SpatialGrid) -> None:
    k = np.asarray(xi, dtype=float) * grid.L / (2.0 * np.pi)
    if np.max(np.abs(k - np.rint(k))) > 1e-9:
        raise ValueError("spatial frequency must lie on the grid lattice")


def estimate_normal_symbol(
    xi0: float,
    xi,
    width: float,
    grid: SpatialGrid,
    rays: RaySet,
    nt: Optional[int] = None,
    interp: str = "cubic",
) -> float:
    """Rayleigh quotient of the discrete normal operator on a windowed plane wave.

    Returns ``<X^T X f, f> / sum_j w_j sum_x |f_j|^2`` scaled by ``stride^3`` so
    strided base sets estimate the full-grid quotient (the quotient is
    translation invariant for plane waves).
    """
    _check_lattice(xi, grid)
    if nt is None:
        rate = abs(xi0) + float(np.linalg.norm(xi))
        dt = 2.0 * np.pi / (rate + 8.0 / width) / 2.0
        nt = int(np.ceil(rays.t1 / dt)) + 1
    f = windowed_plane_wave(xi0, xi, width, grid, rays.t1, nt)
    tw = quadrature_weights(nt, rays.t1)
    num = 0.0
    for part in (f.real, f.imag):
        sino = ray_integrals(part, rays, None, interp)
        back = ray_backprojection(sino, rays, nt, None, interp)
        num += float(np.sum(back * part))
    den = float(np.sum(tw[:, None, None, None] * np.abs(f) ** 2))
    return rays.stride**3 * num / den


def precondition_apply(hw: HalfWaveData, c: float) -> HalfWaveData:
    """Multiply half-wave coefficients by ``|xi|/(4 pi^2)``; the zero mode maps to zero."""
    g = hw.grid
    mult = g.xi_norm / (4.0 * np.pi**2)
    return HalfWaveData(
        SpectralField(g, mult * hw.h1.coefficients),
        SpectralField(g, mult * hw.h2.coefficients),
        (0.0, 0.0),
        c,
    )


# ---------------------------------------------------------------------------
# Linear maps and preconditioners on Cauchy data


@dataclass
class LinearMap:
    """Forward map on stacked Cauchy data ``x`` of shape (2, n, n, n) and its transpose.

    The data space carries the direction-weighted inner product of ``rays``.
    """

    rays: RaySet
    apply: Callable[[np.ndarray], np.ndarray]
    transpose: Callable[[np.ndarray], np.ndarray]

    @property
    def grid(self) -> SpatialGrid:
        return self.rays.grid

    def data_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return weighted_inner(a, b, self.rays.weights)


def minkowski_map(rays: RaySet, c: float, nt: int, interp: str = "linear") -> LinearMap:
    """Exact spectral propagation followed by the discrete transform."""
    g = rays.grid

    def fwd(x):
        f = solve_cauchy_spectral(CauchyData.from_stack(g, x), c, rays.t1, nt)
        return ray_integrals(f.slices, rays, None, interp)

    def adj(d):
        back = ray_backprojection(d, rays, nt, None, interp)
        return spectral_adjoint_apply(SpacetimeField(g, rays.t1, back), c).stack()

    return LinearMap(rays, fwd, adj)


def fd_map(
    rays: RaySet,
    c: float,
    lower: Optional[LowerOrderCoefficients],
    nt: int,
    interp: str = "linear",
    laplacian: str = "stencil",
) -> LinearMap:
    """Leapfrog propagation (with lower-order terms) followed by the discrete transform."""
    op = flat_operator(rays.grid, c, lower, rays.t1, nt, laplacian)

    def fwd(x):
        return ray_integrals(op.apply(x[0], x[1]), rays, None, interp)

    def adj(d):
        return np.stack(op.transpose(ray_backprojection(d, rays, nt, None, interp)))

    return LinearMap(rays, fwd, adj)


def dot_test(op: LinearMap, seed: int = 0) -> float:
    """Relative defect ``|<Ax,d> - <x,A^T d>| / max(|<Ax,d>|, |<x,A^T d>|)`` on random inputs."""
    rng = np.random.default_rng(seed)
    g = op.grid
    x = rng.standard_normal((2,) + g.shape)
    d = rng.standard_normal(op.rays.base_shape + (op.rays.nd,))
    a = op.data_inner(op.apply(x), d)
    b = float(np.sum(x * op.transpose(d)))
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _gauge_block(gauge: str, g_zero: np.ndarray) -> np.ndarray:
    """Inverse of the zero-mode Gram restricted to the component kept by the gauge."""
    out = np.zeros((2, 2))
    if gauge == "mean_f2":
        out[0, 0] = 1.0 / g_zero[0, 0]
    elif gauge == "mean_f1":
        out[1, 1] = 1.0 / g_zero[1, 1]
    else:
        raise ValueError(f"unknown gauge {gauge!r}")
    return out


def wave_profiles(c: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Time profiles of a free wave of speed ``c``: ``cos(w t)`` and ``sin(w t)/w`` with ``w = c|xi|``."""

    def prof(t, k):
        w = c * k[..., None]
        tt = t[None, :] + 0.0 * w
        p1 = np.cos(w * tt)
        safe = np.where(w > 0, w, 1.0)
        p2 = np.where(w > 0, np.sin(w * tt) / safe, tt)
        return p1, p2

    return prof


def derivative_profiles(c: float, scale: float = 1.0) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Time derivatives of the free-wave profiles, multiplied by ``scale``."""

    def prof(t, k):
        w = c * k[..., None]
        tt = t[None, :] + 0.0 * w
        return -scale * w * np.sin(w * tt), scale * np.cos(w * tt)

    return prof


def ode_profiles(
    c: float,
    b0: Callable[[np.ndarray], np.ndarray],
    p0: Callable[[np.ndarray], np.ndarray],
    derivative: bool = False,
    scale: float = 1.0,
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Profiles of ``u'' + b0(t) u' + (c^2 |xi|^2 + p0(t)) u = 0`` for unit Cauchy data.

    Each distinct ``|xi|`` is integrated once (DOP853). With ``derivative`` the
    time derivatives of the profiles are returned, multiplied by ``scale``.
    """

    def prof(t, k):
        t = np.asarray(t, dtype=float)
        ku, inv = np.unique(np.round(np.asarray(k, dtype=float), 12), return_inverse=True)
        nk = ku.size
        w2 = (c * ku) ** 2

        def rhs(s, y):
            y = y.reshape(4, nk)
            damp = b0(s)
            pot = w2 + p0(s)
            return np.concatenate([y[1], -damp * y[1] - pot * y[0], y[3], -damp * y[3] - pot * y[2]])

        y0 = np.concatenate([np.ones(nk), np.zeros(nk), np.zeros(nk), np.ones(nk)])
        order = np.argsort(t)
        sol = solve_ivp(rhs, (0.0, float(t.max())), y0, method="DOP853", t_eval=t[order], rtol=1e-11, atol=1e-13)
        if not sol.success:
            raise RuntimeError(f"profile integration failed: {sol.message}")
        y = np.empty((4, nk, t.size))
        y[..., order] = sol.y.reshape(4, nk, t.size)
        if derivative:
            return scale * y[1][inv], scale * y[3][inv]
        return y[0][inv], y[2][inv]

    return prof


@dataclass
class ModalPreconditioner:
    """Block-diagonal (per lattice frequency) 2x2 operator on stacked Cauchy data.

    ``blocks`` has shape (2, 2, n, n, n) and acts on Fourier coefficients of the
    two components; it must be Hermitian positive semidefinite per frequency and
    even in ``k`` so real inputs give real outputs.
    """

    grid: SpatialGrid
    blocks: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        xh = np.fft.fftn(x, axes=(1, 2, 3))
        yh = np.einsum("ij...,j...->i...", self.blocks, xh)
        return np.fft.ifftn(yh, axes=(1, 2, 3)).real


def symbol_preconditioner(grid: SpatialGrid, c: float, t1: float, gauge: str = "mean_f2") -> ModalPreconditioner:
    """Half-wave multiplier ``|xi|/(4 pi^2)`` expressed on Cauchy data.

    With the merge map ``M`` (half waves to Cauchy data) the operator is
    ``M D M^T``; for the free wave this is ``diag(|xi|/(2 pi^2), c^2 |xi|^3/(2 pi^2))``.
    The zero mode keeps only the mean of ``f1`` (scaled by the inverse of its
    exact normal operator), and Nyquist planes are dropped.
    """
    k = grid.xi_norm
    blocks = np.zeros((2, 2) + grid.shape)
    blocks[0, 0] = k / (2.0 * np.pi**2)
    blocks[1, 1] = c**2 * k**3 / (2.0 * np.pi**2)
    gz = np.array([[4.0 * np.pi * t1**2, 2.0 * np.pi * t1**3], [2.0 * np.pi * t1**3, np.pi * t1**4]])
    blocks[:, :, 0, 0, 0] = _gauge_block(gauge, gz)
    blocks[:, :, grid.nyquist_mask] = 0.0
    return ModalPreconditioner(grid, blocks)


def slice_gram_preconditioner(
    rays: RaySet,
    profiles: Callable,
    gauge: str = "mean_f2",
    quad_nodes: Optional[int] = None,
    rel_reg: float = 1e-10,
) -> ModalPreconditioner:
    """Inverse per-frequency Gram matrix of a model whose solutions are ``p1(t) f1 + p2(t) f2``.

    ``profiles(t, |xi|)`` returns the two time profiles on Gauss-Legendre nodes;
    their ray multipliers ``int p_i(t) exp(i t v.xi) dt`` give the 2x2 Gram per
    frequency, which is pseudo-inverted with relative eigenvalue cutoff ``rel_reg``.
    """
    g = rays.grid
    t1 = rays.t1
    kmax = float(g.xi_norm.max())
    if quad_nodes is None:
        quad_nodes = int(min(256, max(24, np.ceil(1.5 * 2.0 * kmax * t1 / np.pi) + 16)))
    xq, wq = np.polynomial.legendre.leggauss(quad_nodes)
    tq = 0.5 * t1 * (xq + 1.0)
    wq = 0.5 * t1 * wq
    knorm = g.xi_norm.ravel()
    p1, p2 = profiles(tq, knorm)
    p1 = p1 * wq
    p2 = p2 * wq
    a, b, d = g.xi
    gram = np.zeros((3, knorm.size), dtype=complex)
    for v, w in zip(rays.directions, rays.weights):
        dot = (a * v[0] + b * v[1] + d * v[2]).ravel()
        ph = np.exp(1j * dot[:, None] * tq[None, :])
        m1 = np.sum(p1 * ph, axis=1)
        m2 = np.sum(p2 * ph, axis=1)
        gram[0] += w * np.abs(m1) ** 2
        gram[1] += w * np.abs(m2) ** 2
        gram[2] += w * np.conj(m1) * m2
    g11 = gram[0].real.reshape(g.shape)
    g22 = gram[1].real.reshape(g.shape)
    g12 = gram[2].reshape(g.shape)
    blocks = hermitian_pinv_2x2(g11, g22, g12, rel_reg)
    gz = np.array([[g11[0, 0, 0], g12[0, 0, 0].real], [g12[0, 0, 0].real, g22[0, 0, 0]]])
    blocks[:, :, 0, 0, 0] = _gauge_block(gauge, gz)
    blocks[:, :, g.nyquist_mask] = 0.0
    return ModalPreconditioner(g, blocks)


def hermitian_pinv_2x2(g11: np.ndarray, g22: np.ndarray, g12: np.ndarray, rel_cut: float = 1e-10) -> np.ndarray:
    """Pseudo-inverse of Hermitian PSD 2x2 blocks ``[[g11, g12], [conj g12, g22]]``.

    Eigenvalues below ``rel_cut`` times the largest one are discarded, so
    directions the model cannot see are not amplified.
    """
    tr = g11 + g22
    disc = np.sqrt((g11 - g22) ** 2 + 4.0 * np.abs(g12) ** 2)
    lam_hi = 0.5 * (tr + disc)
    lam_lo = 0.5 * (tr - disc)
    # unit eigenvector of the larger eigenvalue
    u1 = g12.astype(complex)
    u2 = (lam_hi - g11).astype(complex)
    alt = np.abs(g12) <= 1e-300
    u1 = np.where(alt, np.where(g11 >= g22, 1.0, 0.0), u1)
    u2 = np.where(alt, np.where(g11 >= g22, 0.0, 1.0), u2)
    nrm = np.sqrt(np.abs(u1) ** 2 + np.abs(u2) ** 2)
    nrm = np.where(nrm > 0, nrm, 1.0)
    u1, u2 = u1 / nrm, u2 / nrm
    # orthogonal complement carries the smaller eigenvalue
    w1, w2 = -np.conj(u2), np.conj(u1)
    inv_hi = np.where(lam_hi > 0, 1.0 / np.where(lam_hi > 0, lam_hi, 1.0), 0.0)
    keep_lo = lam_lo > rel_cut * lam_hi
    inv_lo = np.where(keep_lo, 1.0 / np.where(keep_lo, lam_lo, 1.0), 0.0)
    out = np.empty((2, 2) + g11.shape, dtype=complex)
    out[0, 0] = inv_hi * np.abs(u1) ** 2 + inv_lo * np.abs(w1) ** 2
    out[1, 1] = inv_hi * np.abs(u2) ** 2 + inv_lo * np.abs(w2) ** 2
    out[0, 1] = inv_hi * u1 * np.conj(u2) + inv_lo * w1 * np.conj(w2)
    out[1, 0] = np.conj(out[0, 1])
    return out


# ---------------------------------------------------------------------------
# CG on the normal equations


@dataclass
class ReconstructionReport:
    """Errors, stability ratio and iteration history of one reconstruction."""

    rel_error_l2: Optional[tuple[float, float]] = None
    rel_error_hs: Optional[tuple[float, float]] = None
    rel_error_ns: Optional[float] = None
    stability_ratio: Optional[float] = None
    truth_norm: Optional[float] = None
    data_norm: Optional[float] = None
    s: float = 0.0
    iterations: int = 0
    converged: bool = True
    residual_history: list = field(default_factory=list)
    normal_residual_history: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def cg_normal_equations(
    forward: LinearMap,
    data: Sinogram,
    preconditioner: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    tol: float = 1e-8,
    maxiter: int = 100,
    x0: Optional[np.ndarray] = None,
    check_adjoint: bool = True,
    adjoint_tol: float = 1e-8,
) -> tuple[CauchyData, ReconstructionReport]:
    """Preconditioned CG on ``A^T A x = A^T d`` (CGLS form).

    Stops when ``|A^T r| <= tol |A^T d|``. The data residual ``|d - A x|`` is
    recorded each iteration; it decreases monotonically in exact arithmetic.
    """
    g = forward.grid
    if check_adjoint:
        defect = dot_test(forward)
        if defect > adjoint_tol:
            raise AdjointMismatch(f"dot-product defect {defect:.2e} exceeds {adjoint_tol:.1e}")
    prec = preconditioner if preconditioner is not None else (lambda s: s)
    d = data.values
    x = np.zeros((2,) + g.shape) if x0 is None else np.array(x0, dtype=float)
    r = d - forward.apply(x) if x0 is not None else d.copy()
    s = forward.transpose(r)
    ref = float(np.linalg.norm(forward.transpose(d))) if x0 is not None else float(np.linalg.norm(s))
    report = ReconstructionReport()
    report.residual_history.append(float(np.sqrt(max(forward.data_inner(r, r), 0.0))))
    report.normal_residual_history.append(1.0 if ref > 0 else 0.0)
    if ref == 0:
        return CauchyData.from_stack(g, x), report
    z = prec(s)
    p = z.copy()
    gamma = float(np.sum(s * z))
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        q = forward.apply(p)
        qq = forward.data_inner(q, q)
        if qq <= 0 or gamma <= 0:
            break
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        s = forward.transpose(r)
        rel = float(np.linalg.norm(s)) / ref
        report.residual_history.append(float(np.sqrt(max(forward.data_inner(r, r), 0.0))))
        report.normal_residual_history.append(rel)
        if rel <= tol:
            converged = True
            break
        z = prec(s)
        gamma_new = float(np.sum(s * z))
        p = z + (gamma_new / gamma) * p
        gamma = gamma_new
    report.iterations = it
    report.converged = converged
    if not converged:
        warnings.warn(f"CG stopped after {it} iterations above tolerance {tol:.1e}", MaxIterReached)
    return CauchyData.from_stack(g, x), report


# ---------------------------------------------------------------------------
# Fourier slice


def fourier_slice(sino: Sinogram, zeta, npoints: int = 12, degree: int = 5) -> complex:
    """Space-time Fourier coefficient ``int_0^t1 int exp(-i(t tau + x.xi)) f dx dt`` from a sinogram.

    For a direction ``v`` the plane integral ``dV sum_y exp(-i y.xi) Xf(y, v)``
    equals the coefficient at ``tau = -v.xi``. It depends on ``v`` only through
    ``mu = v.xi/|xi|``, so the sampled values are interpolated in ``mu`` at
    ``-tau/|xi|`` with a local least-squares polynomial.
    """
    tau = float(zeta[0])
    xi = np.asarray(zeta[1], dtype=float)
    k = float(np.linalg.norm(xi))
    if k == 0:
        raise ZeroSpatialFrequency("Fourier slice needs a nonzero spatial frequency")
    if abs(tau) > k * (1 + 1e-12):
        raise TimelikeFrequency(f"|tau| = {abs(tau):.4g} exceeds |xi| = {k:.4g}")
    rays = sino.rays
    if not rays.full:
        raise StridedBaseError("Fourier slice needs the full base grid")
    g = rays.grid
    x, y, z = g.mesh()
    phase = np.exp(-1j * (x * xi[0] + y * xi[1] + z * xi[2]))
    plane = g.cell_volume * np.tensordot(phase, sino.values, axes=([0, 1, 2], [0, 1, 2]))
    mu = rays.directions @ (xi / k)
    target = np.clip(-tau / k, -1.0, 1.0)
    order = np.argsort(np.abs(mu - target), kind="stable")[:npoints]
    dm = mu[order] - target
    scale = max(np.abs(dm).max(), 1e-300)
    deg = min(degree, len(order) - 1)
    vander = np.vander(dm / scale, deg + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(vander, plane[order], rcond=None)
    return complex(coef[0])


def spacetime_fourier_coefficient(f: SpacetimeField, tau: float, xi) -> complex:
    """Direct trapezoid-in-time, DFT-in-space coefficient of the stored field."""
    g = f.grid
    xi = np.asarray(xi, dtype=float)
    x, y, z = g.mesh()
    phase = np.exp(-1j * (x * xi[0] + y * xi[1] + z * xi[2]))
    spatial = g.cell_volume * np.tensordot(f.slices, phase, axes=([1, 2, 3], [0, 1, 2]))
    tw = quadrature_weights(f.nt, f.t1)
    return complex(np.sum(tw * np.exp(-1j * tau * f.times) * spatial))


# ---------------------------------------------------------------------------
# Stability reporting


def cauchy_norm(data: CauchyData, s: float = 0.0) -> float:
    """``(|f1|_{H^{s+1}}^2 + |f2|_{H^s}^2)^(1/2)``."""
    return float(np.hypot(sobolev_norm(data.f1, s + 1.0), sobolev_norm(data.f2, s)))


def sinogram_norm(sino: Sinogram, s: float = 0.0) -> float:
    """Direction-weighted sum of y-spectral norms with weight ``(1+|eta|^2)^(s+3/2)`` on ``|dhat|^2``."""
    rays = sino.rays
    if not rays.full:
        raise StridedBaseError("sinogram norm needs the full base grid")
    g = rays.grid
    wgt = sobolev_weight(g, s + 1.5)
    dh = np.fft.fftn(sino.values, axes=(0, 1, 2))
    per_dir = np.sum(wgt[..., None] * np.abs(dh) ** 2, axis=(0, 1, 2)) / g.n**3
    return float(np.sqrt(g.cell_volume * np.sum(rays.weights * per_dir)))


def _rel(err: float, ref: float) -> float:
    return 0.0 if ref == 0 and err == 0 else (err / ref if ref > 0 else float("inf"))


def stability_report(
    truth: CauchyData,
    recon: CauchyData,
    sino: Sinogram,
    s: float = 0.0,
    report: Optional[ReconstructionReport] = None,
) -> ReconstructionReport:
    """Fill errors, norms and the ratio ``|truth|_N^s / |Xf|_{H^{s+3/2}}`` into a report."""
    if truth.grid != recon.grid:
        raise ValueError("truth and reconstruction use different grids")
    rep = report if report is not None else ReconstructionReport()
    rep.s = float(s)
    e1 = recon.f1 - truth.f1
    e2 = recon.f2 - truth.f2
    rep.rel_error_l2 = (
        _rel(e1.l2_norm(), truth.f1.l2_norm()),
        _rel(e2.l2_norm(), truth.f2.l2_norm()),
    )
    rep.rel_error_hs = (
        _rel(sobolev_norm(e1, s), sobolev_norm(truth.f1, s)),
        _rel(sobolev_norm(e2, s), sobolev_norm(truth.f2, s)),
    )
    tn = cauchy_norm(truth, s)
    rep.rel_error_ns = _rel(cauchy_norm(CauchyData(e1, e2), s), tn)
    dn = sinogram_norm(sino, s)
    rep.truth_norm = tn
    rep.data_norm = dn
    rep.stability_ratio = 0.0 if tn == 0 else (tn / dn if dn > 0 else float("inf"))
    if tn == 0:
        rep.rel_error_l2 = (0.0, 0.0)
        rep.rel_error_hs = (0.0, 0.0)
        rep.rel_error_ns = 0.0
    return rep


def relative_error(truth: CauchyData, recon: CauchyData) -> float:
    """Joint relative L^2 error of the stacked components."""
    t = truth.stack()
    nrm = np.linalg.norm(t)
    return float(np.linalg.norm(recon.stack() - t) / nrm) if nrm > 0 else float(np.linalg.norm(recon.stack()))
