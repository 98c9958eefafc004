"""Reconstruction error and ray deviation as a metric perturbation is scaled.

Data use arc-length weighted integrals along the traced rays; inversion uses
the unit-weight curved operator, so the error reflects the weight mismatch.
"""

import warnings
from dataclasses import dataclass

from _common import parse_config, random_cauchy, write_rows
from lightray.fields import SpatialGrid
from lightray.geometry import MetricPerturbation, curved_map, invert_curved, make_curved_rayset, smooth_perturbation
from lightray.invert import MaxIterReached, relative_error
from lightray.xray import Sinogram, make_rayset


@dataclass
class Config:
    n: int = 16
    nd: int = 32
    nt: int = 11
    deltas: tuple = (0.0, 0.005, 0.01, 0.02, 0.04)
    seed: int = 0
    out: str = "results/delta_sweep.csv"


def main(cfg):
    g = SpatialGrid(cfg.n)
    rays = make_rayset(g, cfg.nd, 1.0)
    truth = random_cauchy(g, cfg.seed)
    shape = smooth_perturbation(1.0, g.L, seed=cfg.seed + 1)
    rows = []
    for delta in cfg.deltas:
        h = shape.scaled(delta) if delta > 0 else MetricPerturbation.zero()
        crs = make_curved_rayset(h, rays, cfg.nt, exact_weight=True)
        data = Sinogram(rays, curved_map(h, crs).apply(truth.stack()))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxIterReached)
            rec, rep = invert_curved(h, data, tol=1e-8, crs=crs.unit_weight())
        rows.append(
            {
                "delta": delta,
                "rel_error": relative_error(truth, rec),
                "iterations": rep.iterations,
                "max_deviation": crs.max_deviation,
                "max_null_drift": crs.max_null_drift,
            }
        )
    write_rows(cfg.out, rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
