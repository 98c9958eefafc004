"""CG iteration counts through the Bardeen solver with three preconditioners:
none, free-wave profiles, and the Bardeen profiles themselves."""

import warnings
from dataclasses import dataclass

from _common import parse_config, random_cauchy, write_rows
from lightray.cosmo import bardeen_map, bardeen_profiles, make_flrw
from lightray.fields import SpatialGrid
from lightray.invert import MaxIterReached, cg_normal_equations, relative_error, slice_gram_preconditioner, wave_profiles
from lightray.xray import Sinogram, make_rayset


@dataclass
class Config:
    n: int = 16
    nd: int = 32
    nt: int = 17
    sound_speeds: tuple = (0.0, 0.5, 1.0)
    model: str = "matter"
    maxiter: int = 200
    seed: int = 0
    out: str = "results/bardeen_preconditioner.csv"


def main(cfg):
    g = SpatialGrid(cfg.n)
    model = make_flrw(cfg.model, 1.0, 2.0)
    rays = make_rayset(g, cfg.nd, model.background.duration)
    truth = random_cauchy(g, cfg.seed)
    rows = []
    for cs in cfg.sound_speeds:
        op = bardeen_map(model, cs, rays, cfg.nt)
        data = Sinogram(rays, op.apply(truth.stack()))
        choices = {
            "none": None,
            "wave": slice_gram_preconditioner(rays, wave_profiles(max(cs, 1e-3))),
            "bardeen": slice_gram_preconditioner(rays, bardeen_profiles(model, cs)),
        }
        for name, prec in choices.items():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MaxIterReached)
                rec, rep = cg_normal_equations(op, data, prec, tol=1e-6, maxiter=cfg.maxiter)
            rows.append(
                {
                    "cs": cs,
                    "preconditioner": name,
                    "iterations": rep.iterations,
                    "converged": rep.converged,
                    "rel_error": relative_error(truth, rec),
                }
            )
    write_rows(cfg.out, rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
