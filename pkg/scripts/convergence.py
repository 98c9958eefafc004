"""Grid refinement study: FD solver against the spectral solver, and the
quadrature transform against the exact spectral transform."""

from dataclasses import dataclass

import numpy as np

from _common import parse_config, write_rows
from lightray.fields import CauchyData, ScalarField, SpatialGrid
from lightray.wave import solve_cauchy_fd, solve_cauchy_spectral, split_half_waves
from lightray.xray import make_rayset, transform_physical, transform_spectral


@dataclass
class Config:
    grids: tuple = (8, 16, 32)
    c: float = 0.75
    t1: float = 1.0
    nd: int = 16
    out: str = "results/convergence.csv"


def smooth_data(g):
    x, y, z = g.mesh()
    f1 = np.sin(x) * np.cos(y) + 0.5 * np.cos(2 * z) + 0 * x
    f2 = np.cos(x + y) + np.sin(z) + 0 * x
    return CauchyData(ScalarField(g, f1), ScalarField(g, f2))


def main(cfg):
    rows = []
    for n in cfg.grids:
        g = SpatialGrid(n)
        data = smooth_data(g)
        nt = 2 * n + 1
        fd = solve_cauchy_fd(data, cfg.c, None, cfg.t1, nt)
        sp = solve_cauchy_spectral(data, cfg.c, cfg.t1, nt)
        rays = make_rayset(g, cfg.nd, cfg.t1)
        phys = transform_physical(fd, rays).values
        exact = transform_spectral(split_half_waves(data, cfg.c), rays).values
        rows.append(
            {
                "n": n,
                "nt": nt,
                "solver_error": float(np.abs(fd.slices - sp.slices).max()),
                "transform_error": float(np.abs(phys - exact).max()),
            }
        )
    for a, b in zip(rows, rows[1:]):
        ratio = a["n"] / b["n"]
        b["solver_order"] = float(np.log(b["solver_error"] / a["solver_error"]) / np.log(ratio))
        b["transform_order"] = float(np.log(b["transform_error"] / a["transform_error"]) / np.log(ratio))
    rows[0]["solver_order"] = rows[0]["transform_order"] = float("nan")
    write_rows(cfg.out, rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
