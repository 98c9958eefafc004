"""Batch command-line front end.

Every subcommand writes its artifacts under ``--out`` and prints one JSON
summary on stdout. Exit codes: 0 success, 1 failed validation, 2 bad
configuration or input, 3 violated precondition, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import lrtf
from .cosmo import MODELS, ISWData, isw_invert, isw_map, make_flrw
from .fields import (
    CauchyData,
    NonzeroMeanError,
    ScalarField,
    SpacetimeField,
    SpatialGrid,
    make_bandlimited_random,
)
from .geometry import (
    SeminormViolation,
    SingularMetric,
    TurningRay,
    make_curved_rayset,
    metric_seminorm_c3,
    smooth_perturbation,
)
from .invert import (
    AdjointMismatch,
    IllConditioned,
    MaxIterReached,
    TimelikeFrequency,
    TooFewDirections,
    ZeroSpatialFrequency,
    cg_normal_equations,
    fd_map,
    fourier_slice,
    slice_gram_preconditioner,
    slice_solve,
    stability_report,
    wave_profiles,
)
from .validation import CRITERIA, ValidationConfig, run_criteria
from .wave import (
    CFLViolation,
    DegenerateBackground,
    UnstableEvolution,
    cfl_limit,
    energy,
    energy_drift,
    merge_half_waves,
    solve_cauchy_fd,
    solve_cauchy_spectral,
    split_half_waves,
)
from .xray import RaySet, Sinogram, StridedBaseError, make_rayset, transform_physical, transform_spectral

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_NUMERICAL = 4

PRECONDITION_ERRORS = (
    CFLViolation,
    TooFewDirections,
    StridedBaseError,
    NonzeroMeanError,
    TimelikeFrequency,
    ZeroSpatialFrequency,
    SingularMetric,
    TurningRay,
    DegenerateBackground,
)
NUMERICAL_ERRORS = (AdjointMismatch, IllConditioned, UnstableEvolution, MaxIterReached, FloatingPointError)


class ConfigError(ValueError):
    """Invalid run configuration or unusable input file."""


@dataclass
class RunConfig:
    grid: int = 24
    box: float = 2.0 * math.pi
    t1: float = 1.0
    nt: Optional[int] = None
    c: float = 0.75
    dirs: int = 64
    seed: int = 0
    method: str = "slice"
    tol: float = 1e-8
    maxiter: int = 100
    delta: float = 0.01
    model: str = "matter"
    srange: tuple[float, float] = (1.0, 2.0)
    out: str = "out"
    threads: Optional[int] = None

    def validate(self, command: str) -> None:
        if self.grid < 4:
            raise ConfigError("--grid must be at least 4")
        if not self.box > 0:
            raise ConfigError("--box must be positive")
        if not self.t1 > 0:
            raise ConfigError("--t1 must be positive")
        if self.nt is not None and self.nt < 3:
            raise ConfigError("--nt must be at least 3")
        if not (0.0 <= self.c <= 1.0 and (self.c > 0 or command == "isw")):
            raise ConfigError("--c must lie in (0, 1] (in [0, 1] for isw)")
        if self.dirs < 6:
            raise ConfigError("--dirs must be at least 6")
        if self.method not in ("slice", "cg"):
            raise ConfigError("--method must be slice or cg")
        if not self.tol > 0:
            raise ConfigError("--tol must be positive")
        if self.maxiter < 1:
            raise ConfigError("--maxiter must be at least 1")
        if not 0 <= self.delta < 0.1:
            raise ConfigError("--delta must lie in [0, 0.1)")
        if self.model not in MODELS:
            raise ConfigError(f"--model must be one of {MODELS}")
        s0, s1 = self.srange
        if not (s0 > 0 and s1 > s0):
            raise ConfigError("--srange needs 0 < s0 < s1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("--threads must be at least 1")

    @property
    def spatial_grid(self) -> SpatialGrid:
        return SpatialGrid(self.grid, self.box)

    def time_slices(self, speed: Optional[float] = None, duration: Optional[float] = None) -> int:
        """``--nt`` if given, else the smallest count at 90% of the stencil CFL limit."""
        if self.nt is not None:
            return self.nt
        speed = self.c if speed is None else speed
        duration = self.t1 if duration is None else duration
        h = self.box / self.grid
        return max(3, int(math.ceil(speed * duration / (0.9 * cfl_limit("stencil") * h))) + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["srange"] = list(self.srange)
        return d


# ---------------------------------------------------------------------------
# helpers


def _meta(cfg: RunConfig, command: str, **extra) -> dict:
    base = {"L": cfg.box, "n": cfg.grid, "t1": cfg.t1, "c": cfg.c, "provenance": {"command": command, "config": cfg.to_dict()}}
    base.update(extra)
    return base


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _band(cfg: RunConfig) -> int:
    return max(1, cfg.grid // 8)


def _random_cauchy(cfg: RunConfig) -> CauchyData:
    g = cfg.spatial_grid
    return CauchyData(
        make_bandlimited_random(g, _band(cfg), cfg.seed, mean_zero=True),
        make_bandlimited_random(g, _band(cfg), cfg.seed + 1, mean_zero=True),
    )


def _read_array(path: Optional[str], what: str) -> tuple[np.ndarray, dict]:
    if path is None:
        raise ConfigError(f"{what} input file is required (--input)")
    try:
        return lrtf.read(path), lrtf.read_meta(path)
    except (OSError, lrtf.LRTFError) as exc:
        raise ConfigError(f"cannot read {what} from {path}: {exc}") from exc


def _read_sinogram(path: Optional[str]) -> tuple[Sinogram, dict]:
    values, meta = _read_array(path, "sinogram")
    if "rays" not in meta:
        raise ConfigError("sinogram sidecar lacks the ray geometry")
    rays = RaySet.from_geometry(meta["rays"])
    if values.shape != rays.base_shape + (rays.nd,):
        raise ConfigError(f"sinogram shape {values.shape} does not match its ray geometry")
    return Sinogram(rays, values), meta


def _read_cauchy(path: str, grid: SpatialGrid) -> CauchyData:
    arr, _ = _read_array(path, "Cauchy data")
    if arr.shape != (2,) + grid.shape:
        raise ConfigError(f"Cauchy data shape {arr.shape} does not match grid {grid.shape}")
    return CauchyData.from_stack(grid, arr)


def _finite(x):
    """JSON-safe floats (NaN and infinities become strings)."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(_finite(payload), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, args) -> tuple[int, dict]:
    g = cfg.spatial_grid
    data = _random_cauchy(cfg)
    nt = cfg.time_slices()
    if args.solver == "spectral":
        u = solve_cauchy_spectral(data, cfg.c, cfg.t1, nt)
    else:
        u = solve_cauchy_fd(data, cfg.c, None, cfg.t1, nt)
    out = _out(cfg)
    meta = _meta(cfg, "simulate", nt=nt, solver=args.solver)
    f = lrtf.write(out / "field.lrtf", u.slices, meta)
    cd = lrtf.write(out / "cauchy.lrtf", data.stack(), meta)
    summary = {
        "nt": nt,
        "solver": args.solver,
        "energy_drift": energy_drift(energy(u, cfg.c)),
        "outputs": [str(f), str(cd)],
        "grid": g.n,
    }
    return EXIT_OK, summary


def cmd_transform(cfg: RunConfig, args) -> tuple[int, dict]:
    g = cfg.spatial_grid
    rays = make_rayset(g, cfg.dirs, cfg.t1)
    out = _out(cfg)
    outputs = []
    if args.input is not None:
        slices, meta_in = _read_array(args.input, "space-time field")
        if slices.ndim != 4 or slices.shape[1:] != g.shape:
            raise ConfigError(f"field shape {slices.shape} does not match grid {g.shape}")
        field_ = SpacetimeField(g, cfg.t1, slices)
        sino = transform_physical(field_, rays)
        nt, how = field_.nt, "physical"
    else:
        data = _random_cauchy(cfg)
        outputs.append(str(lrtf.write(out / "cauchy.lrtf", data.stack(), _meta(cfg, "transform"))))
        if args.exact:
            sino, nt, how = transform_spectral(split_half_waves(data, cfg.c), rays), None, "spectral"
        else:
            nt = cfg.time_slices()
            sino, how = transform_physical(solve_cauchy_fd(data, cfg.c, None, cfg.t1, nt), rays), "physical"
    meta = _meta(cfg, "transform", nt=nt, transform=how, rays=rays.geometry())
    outputs.insert(0, str(lrtf.write(out / "sinogram.lrtf", sino.values, meta)))
    return EXIT_OK, {"transform": how, "nt": nt, "sinogram_norm": sino.norm(), "outputs": outputs}


def cmd_reconstruct(cfg: RunConfig, args) -> tuple[int, dict]:
    sino, meta = _read_sinogram(args.input)
    rays = sino.rays
    c = float(meta.get("c", cfg.c))
    if cfg.method == "slice":
        rec = merge_half_waves(slice_solve(sino, c))
        summary = {"method": "slice"}
        report = None
    else:
        nt = int(meta["nt"]) if meta.get("nt") else cfg.time_slices(c, rays.t1)
        op = fd_map(rays, c, None, nt)
        prec = slice_gram_preconditioner(rays, wave_profiles(c))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxIterReached)
            rec, report = cg_normal_equations(op, sino, prec, tol=cfg.tol, maxiter=cfg.maxiter)
        summary = {"method": "cg", "nt": nt, "iterations": report.iterations, "converged": report.converged}
    out = _out(cfg)
    path = lrtf.write(out / "reconstruction.lrtf", rec.stack(), _meta(cfg, "reconstruct", c=c, method=cfg.method))
    summary["outputs"] = [str(path)]
    if args.truth is not None:
        truth = _read_cauchy(args.truth, rays.grid)
        report = stability_report(truth, rec, sino, 0.0, report)
        summary["rel_error_N0"] = report.rel_error_ns
        summary["rel_error_l2"] = list(report.rel_error_l2)
        summary["stability_ratio"] = report.stability_ratio
    if report is not None:
        summary["outputs"].append(str(_write_json(out / "report.json", report.to_dict())))
    if report is not None and not report.converged:
        return EXIT_NUMERICAL, summary
    return EXIT_OK, summary


def cmd_slice(cfg: RunConfig, args) -> tuple[int, dict]:
    sino, _ = _read_sinogram(args.input)
    g = sino.rays.grid
    base = 2.0 * math.pi / g.L
    if args.zeta is not None:
        tau, *k = args.zeta
        freqs = [(float(tau), np.asarray(k, dtype=float) * base)]
    else:
        rng = np.random.default_rng(cfg.seed)
        freqs = []
        while len(freqs) < 8:
            k = rng.integers(-_band(cfg), _band(cfg) + 1, 3)
            if k.any():
                xi = k * base
                freqs.append((float(rng.uniform(-1, 1) * np.linalg.norm(xi)), xi))
    rows = []
    for tau, xi in freqs:
        val = fourier_slice(sino, (tau, xi))
        rows.append({"tau": tau, "xi": xi.tolist(), "real": val.real, "imag": val.imag})
    path = _write_json(_out(cfg) / "slice.json", {"coefficients": rows})
    return EXIT_OK, {"coefficients": rows, "outputs": [str(path)]}


def cmd_raytrace(cfg: RunConfig, args) -> tuple[int, dict]:
    g = cfg.spatial_grid
    nt = cfg.time_slices(1.0)
    h = smooth_perturbation(cfg.delta, g.L, seed=cfg.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeminormViolation)
        measured = metric_seminorm_c3(h, g, cfg.t1, nt)
    rays = make_rayset(g, cfg.dirs, cfg.t1)
    crs = make_curved_rayset(h, rays, nt)
    out = _out(cfg)
    meta = _meta(cfg, "raytrace", nt=nt, delta=cfg.delta, measured_delta=measured, perturbation=h.to_dict())
    outputs = [str(lrtf.write(out / "metric.lrtf", h.sample(g, cfg.t1, nt), meta))]
    if crs.deviation is not None:
        dmeta = dict(meta, rays=rays.geometry())
        per_ray = np.max(np.linalg.norm(crs.deviation, axis=-1), axis=-1).astype(float)
        per_ray = per_ray.T.reshape(rays.base_shape + (rays.nd,))
        outputs.append(str(lrtf.write(out / "deviation.lrtf", per_ray, dmeta)))
    summary = {
        "nt": nt,
        "measured_delta": measured,
        "max_deviation": crs.max_deviation,
        "max_null_drift": crs.max_null_drift,
        "outputs": outputs,
    }
    return EXIT_OK, summary


def cmd_isw(cfg: RunConfig, args) -> tuple[int, dict]:
    g = cfg.spatial_grid
    s0, s1 = cfg.srange
    model = make_flrw(cfg.model, s0, s1)
    duration = s1 - s0
    nt = cfg.nt if cfg.nt is not None else max(11, cfg.time_slices(max(cfg.c, 1e-3), duration))
    rays = make_rayset(g, cfg.dirs, duration)
    truth = _random_cauchy(cfg)
    op = isw_map(model, cfg.c, rays, nt)
    sino = Sinogram(rays, op.apply(truth.stack()))
    out = _out(cfg)
    meta = _meta(cfg, "isw", nt=nt, cs=cfg.c, model=model.to_dict(), rays=rays.geometry())
    outputs = [str(lrtf.write(out / "isw.lrtf", sino.values, meta))]
    outputs.append(str(lrtf.write(out / "potential.lrtf", truth.stack(), meta)))
    summary = {"nt": nt, "cs": cfg.c, "model": model.tag, "isw_norm": sino.norm()}
    code = EXIT_OK
    if cfg.method == "cg":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxIterReached)
            phi0, dphi0, rep = isw_invert(ISWData(sino, model), model, cfg.c, cfg.tol, cfg.maxiter, nt=nt)
        rec = CauchyData(phi0, dphi0)
        outputs.append(str(lrtf.write(out / "reconstruction.lrtf", rec.stack(), meta)))
        err0 = (phi0 - truth.f1).l2_norm() / truth.f1.l2_norm()
        err1 = (dphi0 - truth.f2).l2_norm() / truth.f2.l2_norm()
        summary.update(
            {"iterations": rep.iterations, "converged": rep.converged, "rel_error_phi0": err0,
             "rel_error_phi0_prime": err1, "notes": rep.notes}
        )
        outputs.append(str(_write_json(out / "report.json", rep.to_dict())))
        if not rep.converged:
            code = EXIT_NUMERICAL
    summary["outputs"] = outputs
    return code, summary


def _write_csv(path: Path, rows: list[dict]) -> None:
    keys = list(rows[0].keys())
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(_finite(v)) if isinstance(v, (list, dict)) else _finite(v) for k, v in r.items()})


def cmd_validate(cfg: RunConfig, args) -> tuple[int, dict]:
    only = CRITERIA if not args.only else tuple(args.only)
    bad = [k for k in only if k not in CRITERIA]
    if bad:
        raise ConfigError(f"unknown criteria {bad}; choose from 1-11")
    vcfg = ValidationConfig(seed=cfg.seed, nd=cfg.dirs, maxiter=cfg.maxiter)
    results = run_criteria(only, vcfg, progress=lambda r: print(r.summary(), file=sys.stderr, flush=True))
    out = _out(cfg)
    outputs = []
    for r in results:
        for name, rows in r.tables.items():
            if rows:
                path = out / f"criterion{r.number:02d}_{name}.csv"
                _write_csv(path, rows)
                outputs.append(str(path))
    passed = all(r.passed for r in results)
    report = {
        "passed": passed,
        "criteria": [r.to_dict() for r in results],
        "total_seconds": sum(r.seconds for r in results),
    }
    outputs.insert(0, str(_write_json(out / "validation.json", report)))
    summary = {
        "passed": passed,
        "criteria": {str(r.number): r.passed for r in results},
        "total_seconds": report["total_seconds"],
        "outputs": outputs,
    }
    return (EXIT_OK if passed else EXIT_FAILED), summary


COMMANDS = {
    "simulate": cmd_simulate,
    "transform": cmd_transform,
    "reconstruct": cmd_reconstruct,
    "slice": cmd_slice,
    "raytrace": cmd_raytrace,
    "isw": cmd_isw,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--grid", type=int, help="grid points per axis")
    p.add_argument("--box", type=float, help="box side length")
    p.add_argument("--t1", type=float, help="final time")
    p.add_argument("--nt", type=int, help="number of time slices")
    p.add_argument("--c", type=float, help="wave speed (sound speed for isw)")
    p.add_argument("--dirs", type=int, help="number of ray directions")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--method", choices=("slice", "cg"), help="reconstruction method")
    p.add_argument("--tol", type=float, help="CG tolerance")
    p.add_argument("--maxiter", type=int, help="CG iteration cap")
    p.add_argument("--delta", type=float, help="metric perturbation size")
    p.add_argument("--model", help=f"FLRW model {MODELS}")
    p.add_argument("--srange", type=float, nargs=2, metavar=("S0", "S1"), help="conformal time range")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads for the ray kernels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lightray", description="Light ray transform experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="solve the wave equation from random band-limited data")
    _common(p)
    p.add_argument("--solver", choices=("fd", "spectral"), default="fd")
    p = sub.add_parser("transform", help="light ray transform of a field or of a simulated wave")
    _common(p)
    p.add_argument("--input", help="space-time field LRTF (nt, n, n, n)")
    p.add_argument("--exact", action="store_true", help="exact spectral transform of simulated data")
    p = sub.add_parser("reconstruct", help="recover Cauchy data from a sinogram")
    _common(p)
    p.add_argument("--input", required=True, help="sinogram LRTF")
    p.add_argument("--truth", help="Cauchy data LRTF for error reporting")
    p = sub.add_parser("slice", help="space-time Fourier coefficients from a sinogram")
    _common(p)
    p.add_argument("--input", required=True, help="sinogram LRTF")
    p.add_argument("--zeta", type=float, nargs=4, metavar=("TAU", "K1", "K2", "K3"), help="tau and lattice index k")
    p = sub.add_parser("raytrace", help="trace null rays through a random metric perturbation")
    _common(p)
    p = sub.add_parser("isw", help="ISW data from the Bardeen potential (and inversion with --method cg)")
    _common(p)
    p = sub.add_parser("validate", help="run the acceptance criteria")
    _common(p)
    p.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if "srange" in values:
        values["srange"] = tuple(values["srange"])
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        cfg.validate(args.command)
        if cfg.threads is not None:
            import numba

            numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
        code, summary = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        code, summary = EXIT_CONFIG, {"error": f"ConfigError: {exc}"}
    except PRECONDITION_ERRORS as exc:
        code, summary = EXIT_PRECONDITION, {"error": f"{type(exc).__name__}: {exc}"}
    except NUMERICAL_ERRORS as exc:
        code, summary = EXIT_NUMERICAL, {"error": f"{type(exc).__name__}: {exc}"}
    summary = {"command": args.command, "exit_code": code, **summary}
    print(json.dumps(_finite(summary), sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
