import subprocess
import sys
from pathlib import Path

import pytest

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


@pytest.mark.parametrize(
    "name,args",
    [
        ("convergence.py", ["--grids", "8", "16", "--nd", "6"]),
        ("round_trip.py", ["--n", "8", "--nd", "16", "--nt", "9", "--speeds", "1.0"]),
        ("delta_sweep.py", ["--n", "8", "--nd", "16", "--nt", "7", "--deltas", "0.0", "0.01"]),
        ("bardeen_preconditioner.py", ["--n", "8", "--nd", "16", "--nt", "9", "--sound_speeds", "1.0", "--maxiter", "30"]),
    ],
)
def test_script_runs(tmp_path, name, args):
    out = tmp_path / "rows.csv"
    p = subprocess.run([sys.executable, str(SCRIPTS / name), *args, "--out", str(out)], capture_output=True, text=True)
    assert p.returncode == 0, p.stderr
    assert len(out.read_text().splitlines()) >= 2
