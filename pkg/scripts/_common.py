"""Shared argument and output handling for the experiment scripts."""

import argparse
import csv
from dataclasses import fields
from pathlib import Path


def parse_config(cls, description):
    """Build an argparse parser from a dataclass and return an instance."""
    p = argparse.ArgumentParser(description=description)
    for f in fields(cls):
        default = f.default
        if isinstance(default, tuple):
            p.add_argument(f"--{f.name}", type=type(default[0]), nargs="+", default=list(default))
        else:
            p.add_argument(f"--{f.name}", type=type(default), default=default)
    args = vars(p.parse_args())
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in args.items()})


def write_rows(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    print(f"wrote {path}")


def random_cauchy(grid, seed):
    """Mean-zero band-limited Cauchy data (the mean of ``f2`` is not recoverable)."""
    from lightray.fields import CauchyData, make_bandlimited_random

    kmax = max(1, grid.n // 8)
    return CauchyData(
        make_bandlimited_random(grid, kmax, seed, mean_zero=True),
        make_bandlimited_random(grid, kmax, seed + 1, mean_zero=True),
    )
