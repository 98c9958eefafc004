"""Round trips of random band-limited Cauchy data through the exact transform.

Compares the direct slice solve with preconditioned CG through the finite
difference solver, for several wave speeds.
"""

import time
from dataclasses import dataclass

from _common import parse_config, random_cauchy, write_rows
from lightray.fields import SpatialGrid
from lightray.invert import cg_normal_equations, fd_map, relative_error, slice_gram_preconditioner, slice_solve, wave_profiles
from lightray.wave import merge_half_waves, split_half_waves
from lightray.xray import Sinogram, make_rayset, transform_spectral


@dataclass
class Config:
    n: int = 24
    nd: int = 64
    t1: float = 1.0
    nt: int = 33
    speeds: tuple = (0.5, 0.75, 1.0)
    seed: int = 0
    out: str = "results/round_trip.csv"


def main(cfg):
    g = SpatialGrid(cfg.n)
    rays = make_rayset(g, cfg.nd, cfg.t1)
    truth = random_cauchy(g, cfg.seed)
    rows = []
    for c in cfg.speeds:
        exact = transform_spectral(split_half_waves(truth, c), rays)
        t = time.perf_counter()
        direct = merge_half_waves(slice_solve(exact, c))
        t_slice = time.perf_counter() - t
        op = fd_map(rays, c, None, cfg.nt)
        fd_data = Sinogram(rays, op.apply(truth.stack()))
        t = time.perf_counter()
        rec, rep = cg_normal_equations(op, fd_data, slice_gram_preconditioner(rays, wave_profiles(c)), tol=1e-8)
        t_cg = time.perf_counter() - t
        rows.append(
            {
                "c": c,
                "slice_error": relative_error(truth, direct),
                "slice_seconds": t_slice,
                "cg_error": relative_error(truth, rec),
                "cg_iterations": rep.iterations,
                "cg_seconds": t_cg,
            }
        )
    write_rows(cfg.out, rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
