"""Integrated Sachs-Wolfe modelling on FLRW backgrounds.

The ISW temperature shift along a ray is the light ray transform of
``d_s(Phi + Psi)``; with ``Phi = Psi`` this is ``2 X(d_s Phi)``. A spatially
constant potential is invisible to it, so reconstructions fix the mean of the
initial potential to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .fields import CauchyData, ScalarField, SpacetimeField, SpatialGrid
from .invert import (
    LinearMap,
    ReconstructionReport,
    cg_normal_equations,
    ode_profiles,
    slice_gram_preconditioner,
)
from .wave import FLRWBackground, bardeen_coefficients, flat_operator
from .xray import RaySet, Sinogram, ray_backprojection, ray_integrals, transform_physical

MODELS = ("matter", "radiation", "custom")


@dataclass(frozen=True)
class CosmologyModel:
    tag: str
    s0: float
    s1: float
    background: FLRWBackground

    def to_dict(self) -> dict:
        return {"tag": self.tag, "s0": self.s0, "s1": self.s1, "samples": int(self.background.a.size)}


def make_flrw(
    tag: str,
    s0: float,
    s1: float,
    samples: int = 2001,
    scale_factor: Optional[Union[Callable[[np.ndarray], np.ndarray], np.ndarray]] = None,
) -> CosmologyModel:
    """Tabulate ``a``, ``H = a'/a`` and ``H'`` on a uniform conformal-time grid.

    ``matter`` uses ``a = (s/s0)^2`` and ``radiation`` ``a = s/s0`` with exact
    ``H`` and ``H'``; ``custom`` takes ``scale_factor`` (callable or samples) and
    obtains ``H`` and ``H'`` by second-order centered differences.
    """
    if not s0 > 0:
        raise ValueError("conformal time must start at s0 > 0")
    if not s1 > s0:
        raise ValueError("need s1 > s0")
    s = np.linspace(s0, s1, samples)
    if tag == "matter":
        a, H, Hp = (s / s0) ** 2, 2.0 / s, -2.0 / s**2
    elif tag == "radiation":
        a, H, Hp = s / s0, 1.0 / s, -1.0 / s**2
    elif tag == "custom":
        if scale_factor is None:
            raise ValueError("custom model needs a scale factor")
        a = np.asarray(scale_factor(s) if callable(scale_factor) else scale_factor, dtype=float)
        if a.shape != s.shape:
            raise ValueError(f"scale factor needs {samples} samples")
        ds = s[1] - s[0]
        H = np.gradient(a, ds, edge_order=2) / a
        Hp = np.gradient(H, ds, edge_order=2)
    else:
        raise ValueError(f"unknown model {tag!r}; choose from {MODELS}")
    return CosmologyModel(tag, float(s0), float(s1), FLRWBackground(s0, s1, a, H, Hp, tag))


@dataclass(frozen=True, eq=False)
class ISWData:
    sinogram: Sinogram
    model: Optional[CosmologyModel] = None


def time_derivative(slices: np.ndarray, dt: float) -> np.ndarray:
    """Second-order differences in time: centered inside, one-sided at both ends.

    Differences are formed before scaling so constants map to exact zeros.
    """
    out = np.empty_like(slices)
    out[1:-1] = (slices[2:] - slices[:-2]) / (2.0 * dt)
    if slices.shape[0] >= 3:
        out[0] = (4.0 * (slices[1] - slices[0]) - (slices[2] - slices[0])) / (2.0 * dt)
        out[-1] = (4.0 * (slices[-1] - slices[-2]) - (slices[-1] - slices[-3])) / (2.0 * dt)
    else:
        out[0] = out[-1] = (slices[1] - slices[0]) / dt
    return out


def time_derivative_transpose(g: np.ndarray, dt: float) -> np.ndarray:
    """Exact transpose of ``time_derivative`` under plain sums."""
    nt = g.shape[0]
    out = np.zeros_like(g)
    if nt < 3:
        d = (g[0] + g[-1]) / dt
        out[1] += d
        out[0] -= d
        return out
    c = 1.0 / (2.0 * dt)
    out[2:] += c * g[1:-1]
    out[:-2] -= c * g[1:-1]
    out[1] += 4.0 * c * g[0]
    out[0] -= 3.0 * c * g[0]
    out[2] -= c * g[0]
    out[-1] += 3.0 * c * g[-1]
    out[-2] -= 4.0 * c * g[-1]
    out[-3] += c * g[-1]
    return out


def bardeen_profiles(model: CosmologyModel, cs: float, derivative: bool = False, scale: float = 1.0):
    """Per-frequency time profiles of the Bardeen equation (see ``invert.ode_profiles``)."""
    bg = model.background

    def b0(t):
        return 3.0 * (1.0 + cs**2) * bg.interpolate("H", bg.s0 + t)

    def p0(t):
        H = bg.interpolate("H", bg.s0 + t)
        return 2.0 * bg.interpolate("Hprime", bg.s0 + t) + (1.0 + 3.0 * cs**2) * H**2

    return ode_profiles(cs, b0, p0, derivative=derivative, scale=scale)


def isw_forward(
    phi: SpacetimeField, psi: SpacetimeField, rays: RaySet, model: Optional[CosmologyModel] = None
) -> ISWData:
    """``X(d_s Phi + d_s Psi)`` with finite differences in time."""
    if phi.grid != psi.grid or phi.nt != psi.nt or phi.t1 != psi.t1:
        raise ValueError("Phi and Psi must share grid and time sampling")
    d = time_derivative(phi.slices, phi.dt) + time_derivative(psi.slices, psi.dt)
    return ISWData(transform_physical(SpacetimeField(phi.grid, phi.t1, d), rays), model)


def isw_map(model: CosmologyModel, cs: float, rays: RaySet, nt: int, laplacian: str = "stencil") -> LinearMap:
    """``(Phi0, Phi0') -> 2 X(d_s Phi)`` where ``Phi`` solves the Bardeen equation."""
    bg = model.background
    if abs(rays.t1 - bg.duration) > 1e-12 * bg.duration:
        raise ValueError("ray length must equal the conformal-time span s1 - s0")
    op = flat_operator(rays.grid, cs, bardeen_coefficients(bg, cs, nt), bg.duration, nt, laplacian)
    dt = op.dt

    def fwd(x):
        phi = op.apply(x[0], x[1])
        return ray_integrals(2.0 * time_derivative(phi, dt), rays)

    def adj(d):
        back = ray_backprojection(d, rays, nt)
        return np.stack(op.transpose(2.0 * time_derivative_transpose(back, dt)))

    return LinearMap(rays, fwd, adj)


def bardeen_map(model: CosmologyModel, cs: float, rays: RaySet, nt: int, laplacian: str = "stencil") -> LinearMap:
    """``(Phi0, Phi0') -> X Phi`` where ``Phi`` solves the Bardeen equation."""
    bg = model.background
    op = flat_operator(rays.grid, cs, bardeen_coefficients(bg, cs, nt), bg.duration, nt, laplacian)

    def fwd(x):
        return ray_integrals(op.apply(x[0], x[1]), rays)

    def adj(d):
        return np.stack(op.transpose(ray_backprojection(d, rays, nt)))

    return LinearMap(rays, fwd, adj)


def isw_visibility(model: CosmologyModel, cs: float, rays: RaySet, nt: int, seed: int = 0) -> tuple[float, float]:
    """Relative data norms of a random mean-zero ``Phi0`` and ``Phi0'`` under the ISW map."""
    op = isw_map(model, cs, rays, nt)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(rays.grid.shape)
    f -= f.mean()
    z = np.zeros_like(f)
    a = op.apply(np.stack([f, z]))
    b = op.apply(np.stack([z, f]))
    na = np.sqrt(max(op.data_inner(a, a), 0.0))
    nb = np.sqrt(max(op.data_inner(b, b), 0.0))
    return na / np.linalg.norm(f), nb / np.linalg.norm(f)


def isw_invert(
    data: ISWData,
    model: CosmologyModel,
    cs: float,
    tol: float = 1e-8,
    maxiter: int = 100,
    nt: Optional[int] = None,
) -> tuple[ScalarField, ScalarField, ReconstructionReport]:
    """Recover ``(Phi0, Phi0')`` from ISW data by CG through the Bardeen solver.

    The preconditioner inverts the per-frequency Gram matrix of the continuous
    Bardeen profiles' time derivatives. The mean of ``Phi0`` is not determined
    by the data and is fixed to zero. When the forward map cannot see ``Phi0``
    at all (pressureless matter, where the potential is frozen) the report
    records it and ``Phi0`` is returned as zero.
    """
    rays = data.sinogram.rays
    if nt is None:
        raise ValueError("number of time slices is required")
    op = isw_map(model, cs, rays, nt)
    prec = slice_gram_preconditioner(rays, bardeen_profiles(model, cs, derivative=True, scale=2.0), gauge="mean_f1")
    rec, rep = cg_normal_equations(op, data.sinogram, prec, tol=tol, maxiter=maxiter)
    rep.notes.append("mean of Phi0 is unrecoverable and set to zero")
    vis0, vis1 = isw_visibility(model, cs, rays, nt)
    if vis0 < 1e-6 * vis1:
        rep.notes.append(f"Phi0 is invisible to the data (relative visibility {vis0 / vis1:.1e}); only Phi0' is recovered")
    f1 = rec.f1.values - rec.f1.values.mean()
    return ScalarField(rays.grid, f1), rec.f2, rep
