"""Light rays and waves on a weakly perturbed Minkowski background ``g = eta + h``.

``eta = diag(-1, 1, 1, 1)`` and the perturbation ``h`` is a finite sum of
space-time sinusoids, which keeps it smooth, periodic on the box and gives its
derivatives in closed form. Rays are null bicharacteristics of
``p = 1/2 Xi^T g^{-1} Xi`` integrated with RK4 using coordinate time as parameter.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .fields import CauchyData, ScalarField, SpacetimeField, SpatialGrid
from .invert import (
    LinearMap,
    ReconstructionReport,
    cg_normal_equations,
    slice_gram_preconditioner,
    wave_profiles,
)
from .wave import (
    SPATIAL_PAIRS,
    LeapfrogOperator,
    LowerOrderCoefficients,
    _as_coefficient,
    flat_operator,
)
from .xray import RaySet, Sinogram, ray_backprojection, ray_integrals

ETA = np.diag([-1.0, 1.0, 1.0, 1.0])
# RK4 local error scales like (phase step)^5 * delta; 0.5 rad keeps it near 1e-10
MAX_PHASE_STEP = 0.5
UPPER = [(i, j) for i in range(4) for j in range(i, 4)]


class SingularMetric(np.linalg.LinAlgError):
    """``eta + h`` is not invertible (or not Lorentzian) somewhere."""


class TurningRay(RuntimeError):
    """Coordinate time stopped being a valid parameter along a ray."""


class SeminormViolation(UserWarning):
    """Measured C^3 seminorm exceeds the declared amplitude by more than 10%."""


def _multi_indices(order: int, dim: int = 4):
    return [a for a in itertools.product(range(order + 1), repeat=dim) if sum(a) <= order]


@dataclass(frozen=True, eq=False)
class MetricPerturbation:
    """``h_ij(t, x) = sum_m A_m[i, j] cos(w_m t + k_m . x + phi_m)``.

    ``wavevectors[m] = (w_m, k_m)``; amplitudes are symmetric 4x4 matrices.
    ``delta`` is the declared C^3 amplitude.
    """

    amplitudes: np.ndarray
    wavevectors: np.ndarray
    phases: np.ndarray
    delta: float

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float).reshape(-1, 4, 4)
        k = np.asarray(self.wavevectors, dtype=float).reshape(-1, 4)
        p = np.asarray(self.phases, dtype=float).reshape(-1)
        if not (a.shape[0] == k.shape[0] == p.shape[0]):
            raise ValueError("modes need matching amplitudes, wavevectors and phases")
        if np.max(np.abs(a - np.swapaxes(a, 1, 2)), initial=0.0) > 0:
            raise ValueError("amplitudes must be symmetric")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "wavevectors", k)
        object.__setattr__(self, "phases", p)

    @classmethod
    def zero(cls) -> "MetricPerturbation":
        return cls(np.zeros((0, 4, 4)), np.zeros((0, 4)), np.zeros(0), 0.0)

    def is_zero(self) -> bool:
        return not np.any(self.amplitudes)

    def scaled(self, factor: float) -> "MetricPerturbation":
        return MetricPerturbation(factor * self.amplitudes, self.wavevectors, self.phases, abs(factor) * self.delta)

    def _phase(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        k = self.wavevectors
        return t[..., None] * k[:, 0] + x @ k[:, 1:].T + self.phases

    def components(self, t, x) -> np.ndarray:
        """Values with shape ``broadcast(t, x[..., 0]) + (4, 4)``."""
        ph = self._phase(t, x)
        return np.einsum("...m,mij->...ij", np.cos(ph), self.amplitudes)

    def gradient(self, t, x) -> np.ndarray:
        """Derivatives ``d_mu h_ij`` with shape ``(..., 4, 4, 4)`` indexed ``[..., mu, i, j]``."""
        ph = self._phase(t, x)
        return -np.einsum("...m,mu,mij->...uij", np.sin(ph), self.wavevectors, self.amplitudes)

    def sample(self, grid: SpatialGrid, t1: float, nt: int) -> np.ndarray:
        """Upper-triangle components on the space-time grid, shape (10, nt, n, n, n)."""
        x = np.stack(np.meshgrid(grid.coords, grid.coords, grid.coords, indexing="ij"), axis=-1)
        out = np.empty((10, nt) + grid.shape)
        for j, t in enumerate(np.linspace(0.0, t1, nt)):
            h = self.components(np.full(grid.shape, t), x)
            for c, (a, b) in enumerate(UPPER):
                out[c, j] = h[..., a, b]
        return out

    def analytic_c3_bound(self) -> float:
        """``max_ij sum_m |A_m[i,j]| sum_{|alpha|<=3} prod |k_m|^alpha`` (an upper bound of the seminorm)."""
        if self.amplitudes.shape[0] == 0:
            return 0.0
        alphas = _multi_indices(3)
        s3 = np.array([sum(np.prod(np.abs(k) ** np.array(a)) for a in alphas) for k in self.wavevectors])
        return float(np.max(np.einsum("m,mij->ij", s3, np.abs(self.amplitudes))))

    def to_dict(self) -> dict:
        return {
            "amplitudes": self.amplitudes.tolist(),
            "wavevectors": self.wavevectors.tolist(),
            "phases": self.phases.tolist(),
            "delta": self.delta,
        }


def smooth_perturbation(
    delta: float, L: float = 2.0 * np.pi, seed: int = 0, n_modes: int = 3, kmax: int = 1, wmax: float = 0.5
) -> MetricPerturbation:
    """Random low-frequency perturbation scaled so its analytic C^3 bound equals ``delta``."""
    rng = np.random.default_rng(seed)
    base = 2.0 * np.pi / L
    amps = np.empty((n_modes, 4, 4))
    kv = np.empty((n_modes, 4))
    for m in range(n_modes):
        k = np.zeros(3, dtype=int)
        while not np.any(k):
            k = rng.integers(-kmax, kmax + 1, size=3)
        kv[m, 1:] = base * k
        kv[m, 0] = base * wmax * rng.uniform(-1.0, 1.0)
        a = rng.standard_normal((4, 4))
        amps[m] = 0.5 * (a + a.T)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_modes)
    h = MetricPerturbation(amps, kv, phases, 1.0)
    if delta == 0:
        return MetricPerturbation(np.zeros_like(amps), kv, phases, 0.0)
    return MetricPerturbation(amps * (delta / h.analytic_c3_bound()), kv, phases, float(delta))


def _centered_derivative(f: np.ndarray, axis: int, order: int, step: float, periodic: bool) -> np.ndarray:
    if order == 0:
        return f

    def sh(s):
        if periodic:
            return np.roll(f, -s, axis=axis)
        sl = [slice(None)] * f.ndim
        n = f.shape[axis]
        sl[axis] = slice(2 + s, n - 2 + s)
        return f[tuple(sl)]

    if order == 1:
        out = (sh(1) - sh(-1)) / (2.0 * step)
    elif order == 2:
        out = (sh(1) - 2.0 * sh(0) + sh(-1)) / step**2
    elif order == 3:
        out = (sh(2) - 2.0 * sh(1) + 2.0 * sh(-1) - sh(-2)) / (2.0 * step**3)
    else:
        raise ValueError("orders above 3 are not supported")
    if not periodic:
        pad = [(0, 0)] * f.ndim
        pad[axis] = (2, 2)
        out = np.pad(out, pad)
    return out


def metric_seminorm_c3(h: MetricPerturbation, grid: SpatialGrid, t1: float, nt: int) -> float:
    """``max_ij sup sum_{|alpha|<=3} |d^alpha h_ij|`` by centered differences on the space-time grid.

    Time differences use two extra slices on each side, evaluated from the
    analytic components. Warns with ``SeminormViolation`` when the result
    exceeds the declared ``delta`` by more than 10%.
    """
    if h.is_zero():
        return 0.0
    dt = t1 / (nt - 1)
    times = np.linspace(-2 * dt, t1 + 2 * dt, nt + 4)
    x = np.stack(np.meshgrid(grid.coords, grid.coords, grid.coords, indexing="ij"), axis=-1)
    alphas = _multi_indices(3)
    best = 0.0
    for a, b in UPPER:
        comp = np.stack([h.components(np.full(grid.shape, t), x)[..., a, b] for t in times])
        total = np.zeros_like(comp)
        for al in alphas:
            d = comp
            d = _centered_derivative(d, 0, al[0], dt, periodic=False)
            for ax in range(3):
                d = _centered_derivative(d, ax + 1, al[ax + 1], grid.spacing, periodic=True)
            total += np.abs(d)
        best = max(best, float(total[2:-2].max()))
    if best > 1.1 * h.delta:
        warnings.warn(f"measured C^3 seminorm {best:.4g} exceeds declared {h.delta:.4g}", SeminormViolation)
    return best


# ---------------------------------------------------------------------------
# Hamiltonian and ray tracing


@dataclass(frozen=True)
class BicharState:
    """Position ``(t, x)`` and covector ``(tau, xi)``; arrays broadcast over rays."""

    t: np.ndarray
    x: np.ndarray
    tau: np.ndarray
    xi: np.ndarray


def _inverse_metric(hv: np.ndarray) -> np.ndarray:
    g = ETA + hv
    det = np.linalg.det(g)
    if np.any(~np.isfinite(det)) or np.any(det >= -1e-12):
        raise SingularMetric("metric is singular or not Lorentzian")
    return np.linalg.inv(g)


def hamiltonian(h: MetricPerturbation, state: BicharState) -> tuple[np.ndarray, np.ndarray]:
    """``p = 1/2 Xi^T (eta + h)^{-1} Xi`` and its gradient in ``(t, x, tau, xi)``.

    The gradient has a trailing axis of length 8 ordered ``(t, x1, x2, x3, tau, xi1, xi2, xi3)``.
    """
    t = np.asarray(state.t, dtype=float)
    x = np.asarray(state.x, dtype=float)
    cov = np.concatenate([np.asarray(state.tau, dtype=float)[..., None], np.asarray(state.xi, dtype=float)], axis=-1)
    ginv = _inverse_metric(h.components(t, x))
    G = np.einsum("...ij,...j->...i", ginv, cov)
    p = 0.5 * np.einsum("...i,...i->...", cov, G)
    dh = h.gradient(t, x)
    dp_dx = -0.5 * np.einsum("...i,...uij,...j->...u", G, dh, G)
    return p, np.concatenate([dp_dx, G], axis=-1)


def initial_covector(h: MetricPerturbation, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Covector ``g (beta, v)`` with ``beta > 0`` making ``(beta, v)`` null at ``(0, y)``."""
    g = ETA + h.components(np.zeros(y.shape[:-1]), y)
    g00 = g[..., 0, 0]
    b = np.einsum("...a,...a->...", g[..., 0, 1:], v)
    c = np.einsum("...a,...ab,...b->...", v, g[..., 1:, 1:], v)
    disc = b**2 - g00 * c
    if np.any(disc < 0) or np.any(g00 >= 0):
        raise SingularMetric("no future null direction over the given spatial direction")
    beta = (-b - np.sqrt(disc)) / g00
    vec = np.concatenate([beta[..., None], v], axis=-1)
    return np.einsum("...ij,...j->...i", g, vec)


def _trace_batch(h: MetricPerturbation, y: np.ndarray, v: np.ndarray, times: np.ndarray, substeps: int):
    """RK4 in coordinate time.

    Returns positions (nt, N, 3), covectors (nt, N, 4), ``p`` and ``dt/ds`` (nt, N).
    """
    y = np.ascontiguousarray(y, dtype=float).reshape(-1, 3)
    cov = np.ascontiguousarray(initial_covector(h, y, np.asarray(v, dtype=float).reshape(-1, 3)))
    xs, cs, ham, g0, status = _kernels.trace(
        np.ascontiguousarray(h.amplitudes),
        np.ascontiguousarray(h.wavevectors),
        np.ascontiguousarray(h.phases),
        y,
        cov,
        np.ascontiguousarray(times, dtype=float),
        int(substeps),
    )
    if np.any(status == _kernels.TRACE_SINGULAR):
        raise SingularMetric("metric is singular or not Lorentzian along a ray")
    if np.any(status == _kernels.TRACE_TURNING):
        raise TurningRay("dt/ds fell below 0.1 along a ray")
    return xs, cs, ham, g0


def default_substeps(h: MetricPerturbation, dt: float) -> int:
    """RK4 substeps per slice so each step spans at most ``MAX_PHASE_STEP`` rad of the fastest mode."""
    if h.is_zero():
        return 1
    kmax = float(np.max(np.linalg.norm(h.wavevectors, axis=1)))
    return max(1, int(np.ceil(dt * (kmax + 1.0) / MAX_PHASE_STEP)))


@dataclass(frozen=True)
class CurvedRay:
    times: np.ndarray
    x: np.ndarray
    covector: np.ndarray

    def deviation(self, y: np.ndarray, v: np.ndarray) -> float:
        straight = y[None, :] + self.times[:, None] * v[None, :]
        return float(np.max(np.linalg.norm(self.x - straight, axis=1)))

    def null_drift(self, h: MetricPerturbation) -> float:
        p, _ = hamiltonian(h, BicharState(self.times, self.x, self.covector[:, 0], self.covector[:, 1:]))
        return float(np.max(np.abs(p)))


def trace_ray(
    h: MetricPerturbation, y, v, nt: int, t1: float = 1.0, substeps: Optional[int] = None
) -> CurvedRay:
    """Null ray from ``(0, y)`` leaving in spatial direction ``v``, sampled at ``nt`` slices."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    times = np.linspace(0.0, t1, nt)
    sub = default_substeps(h, t1 / (nt - 1)) if substeps is None else substeps
    xs, cs, _, _ = _trace_batch(h, y[None], v[None], times, sub)
    return CurvedRay(times, xs[:, 0], cs[:, 0])


@dataclass(frozen=True, eq=False)
class CurvedRaySet:
    """Flat ray labels plus traced positions.

    ``deviation[v, b, j]`` is ``x(t_j) - (y_b + t_j v)`` (float32); it is ``None``
    for the unperturbed metric so the flat code path is used verbatim.
    """

    rays: RaySet
    nt: int
    deviation: Optional[np.ndarray]
    max_deviation: float
    max_null_drift: float
    weights: Optional[np.ndarray] = None

    def unit_weight(self) -> "CurvedRaySet":
        """Same traced rays with the per-sample weights dropped."""
        return replace(self, weights=None)


def make_curved_rayset(
    h: MetricPerturbation,
    rays: RaySet,
    nt: int,
    substeps: Optional[int] = None,
    chunk: int = 4,
    exact_weight: bool = False,
) -> CurvedRaySet:
    """Trace every ray of ``rays`` through ``h``; the flat geometry is reused when ``h = 0``.

    With ``exact_weight`` the per-sample factor ``ds/dt = 1/G0`` is stored for the
    exact-weight variant of the curved transform.
    """
    if h.is_zero():
        return CurvedRaySet(rays, nt, None, 0.0, 0.0)
    times = np.linspace(0.0, rays.t1, nt)
    sub = default_substeps(h, rays.t1 / (nt - 1)) if substeps is None else substeps
    y = rays.base_points()
    nb = y.shape[0]
    dev = np.empty((rays.nd, nb, nt, 3), dtype=np.float32)
    wts = np.empty((rays.nd, nb, nt)) if exact_weight else None
    max_dev = 0.0
    max_drift = 0.0
    for v0 in range(0, rays.nd, chunk):
        dirs = rays.directions[v0 : v0 + chunk]
        nv = dirs.shape[0]
        yy = np.broadcast_to(y[None], (nv, nb, 3)).reshape(-1, 3)
        vv = np.broadcast_to(dirs[:, None, :], (nv, nb, 3)).reshape(-1, 3)
        xs, cs, ham, g0 = _trace_batch(h, yy, vv, times, sub)
        d = xs - (yy[None] + times[:, None, None] * vv[None])
        max_dev = max(max_dev, float(np.max(np.linalg.norm(d, axis=-1))))
        scale = np.sum(cs[0, :, 1:] ** 2, axis=-1)
        max_drift = max(max_drift, float(np.max(np.abs(ham) / scale[None])))
        dev[v0 : v0 + nv] = np.transpose(d.reshape(nt, nv, nb, 3), (1, 2, 0, 3))
        if exact_weight:
            wts[v0 : v0 + nv] = np.transpose((1.0 / g0).reshape(nt, nv, nb), (1, 2, 0))
    return CurvedRaySet(rays, nt, dev, max_dev, max_drift, wts)


def transform_curved(f: SpacetimeField, crs: CurvedRaySet, interp: str = "linear") -> Sinogram:
    """Integrate ``f`` along traced rays with unit weight in coordinate time.

    When ``crs`` carries exact weights (``make_curved_rayset(..., exact_weight=True)``)
    each sample is multiplied by ``ds/dt`` instead.
    """
    if f.nt != crs.nt:
        raise ValueError(f"field has {f.nt} slices, rays were traced on {crs.nt}")
    vals = ray_integrals(f.slices, crs.rays, crs.deviation, interp, sample_weights=crs.weights)
    return Sinogram(crs.rays, vals)


def adjoint_curved(sino: Sinogram, crs: CurvedRaySet, interp: str = "linear") -> SpacetimeField:
    out = ray_backprojection(sino.values, crs.rays, crs.nt, crs.deviation, interp, sample_weights=crs.weights)
    return SpacetimeField(crs.rays.grid, crs.rays.t1, out)


# ---------------------------------------------------------------------------
# Wave equation of the perturbed metric


def _metric_terms(h: MetricPerturbation, grid: SpatialGrid, t1: float, nt: int):
    """Coefficient arrays of the normalised wave operator for every slice.

    With ``S = sqrt|g| g^{-1}`` the equation ``d_mu(S^{mu nu} d_nu u) = 0`` divided by
    ``-S^00`` reads ``u_tt = lap u - dA_ab d_a d_b u - 2 a_a d_a u_t - q_a d_a u - q_0 u_t``.
    """
    x = np.stack(np.meshgrid(grid.coords, grid.coords, grid.coords, indexing="ij"), axis=-1)
    shape = (nt,) + grid.shape
    tensor = [np.empty(shape) for _ in SPATIAL_PAIRS]
    mixed = [np.empty(shape) for _ in range(3)]
    q = [np.empty(shape) for _ in range(4)]
    for j, t in enumerate(np.linspace(0.0, t1, nt)):
        tt = np.full(grid.shape, t)
        hv = h.components(tt, x)
        ginv = _inverse_metric(hv)
        sq = np.sqrt(-np.linalg.det(ETA + hv))
        S = sq[..., None, None] * ginv
        dh = h.gradient(tt, x)
        # d_mu S = sqrt|g| (1/2 tr(g^-1 d_mu g) g^-1 - g^-1 d_mu g g^-1)
        tr = np.einsum("...ij,...uji->...u", ginv, dh)
        gdg = np.einsum("...ij,...ujk,...kl->...uil", ginv, dh, ginv)
        dS = sq[..., None, None, None] * (0.5 * tr[..., :, None, None] * ginv[..., None, :, :] - gdg)
        div = np.einsum("...uuv->...v", dS)
        s00 = S[..., 0, 0]
        for c_, (a, b) in enumerate(SPATIAL_PAIRS):
            tensor[c_][j] = S[..., a + 1, b + 1] / s00 + (1.0 if a == b else 0.0)
        for a in range(3):
            mixed[a][j] = S[..., 0, a + 1] / s00
        for nu in range(4):
            q[nu][j] = div[..., nu] / s00
    return tensor, mixed, q


def curved_operator(
    h: MetricPerturbation,
    lower: Optional[LowerOrderCoefficients],
    grid: SpatialGrid,
    t1: float,
    nt: int,
    laplacian: str = "stencil",
) -> LeapfrogOperator:
    """Leapfrog operator for the wave equation of ``eta + h`` (unit speed) plus lower-order terms."""
    if h.is_zero():
        return flat_operator(grid, 1.0, lower, t1, nt, laplacian)
    if h.delta >= 0.1:
        raise ValueError("curved solver supports perturbations with delta < 0.1")
    lower = lower or LowerOrderCoefficients()
    tensor, mixed, q = _metric_terms(h, grid, t1, nt)
    b0 = _as_coefficient(lower.b0, grid, nt) + q[0]
    b = [_as_coefficient(lb, grid, nt) + q[a + 1] for a, lb in enumerate((lower.b1, lower.b2, lower.b3))]
    p0 = _as_coefficient(lower.p0, grid, nt)
    return LeapfrogOperator(
        grid,
        1.0,
        t1,
        nt,
        b0=b0,
        b=b,
        p0=p0,
        tensor=tensor,
        mixed=mixed,
        laplacian=laplacian,
        speed_margin=1.0 + 5.0 * h.delta,
    )


def solve_cauchy_curved(
    h: MetricPerturbation,
    lower: Optional[LowerOrderCoefficients],
    data: CauchyData,
    nt: int,
    t1: float = 1.0,
    laplacian: str = "stencil",
) -> SpacetimeField:
    op = curved_operator(h, lower, data.grid, t1, nt, laplacian)
    return SpacetimeField(data.grid, t1, op.apply(data.f1.values, data.f2.values))


def curved_map(
    h: MetricPerturbation,
    crs: CurvedRaySet,
    lower: Optional[LowerOrderCoefficients] = None,
    interp: str = "linear",
) -> LinearMap:
    """Curved solve followed by the curved transform, with its exact transpose."""
    rays = crs.rays
    op = curved_operator(h, lower, rays.grid, rays.t1, crs.nt)
    nt = crs.nt

    def fwd(x):
        return ray_integrals(op.apply(x[0], x[1]), rays, crs.deviation, interp, sample_weights=crs.weights)

    def adj(d):
        back = ray_backprojection(d, rays, nt, crs.deviation, interp, sample_weights=crs.weights)
        return np.stack(op.transpose(back))

    return LinearMap(rays, fwd, adj)


def invert_curved(
    h: MetricPerturbation,
    sino: Sinogram,
    tol: float = 1e-8,
    maxiter: int = 100,
    nt: Optional[int] = None,
    crs: Optional[CurvedRaySet] = None,
    lower: Optional[LowerOrderCoefficients] = None,
) -> tuple[CauchyData, ReconstructionReport]:
    """CG reconstruction through the curved chain, preconditioned by the flat per-frequency Gram inverse."""
    rays = sino.rays
    if crs is None:
        if nt is None:
            raise ValueError("give either nt or a traced CurvedRaySet")
        crs = make_curved_rayset(h, rays, nt)
    op = curved_map(h, crs, lower)
    prec = slice_gram_preconditioner(rays, wave_profiles(1.0))
    rec, rep = cg_normal_equations(op, sino, prec, tol=tol, maxiter=maxiter)
    rep.notes.append(f"max ray deviation {crs.max_deviation:.3e}")
    return rec, rep
