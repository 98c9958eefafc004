import json
import subprocess
import sys

import numpy as np
import pytest

from lightray import lrtf
from lightray.cli import RunConfig, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    summary = json.loads(out[0])
    assert summary["exit_code"] == code
    return code, summary


class TestConfig:
    def test_defaults_validate(self):
        for cmd in ("simulate", "transform", "isw", "validate"):
            RunConfig().validate(cmd)

    def test_isw_allows_zero_speed(self):
        RunConfig(c=0.0).validate("isw")

    def test_time_slices_respect_cfl(self):
        cfg = RunConfig(grid=16, t1=2.0, c=1.0)
        nt = cfg.time_slices()
        assert cfg.c * cfg.t1 / (nt - 1) / (cfg.box / cfg.grid) < 0.9 * 3**-0.5 + 1e-12

    @pytest.mark.parametrize(
        "flags",
        [["--c", "2"], ["--dirs", "4"], ["--delta", "0.2"], ["--model", "dust"], ["--srange", "2", "1"], ["--nt", "2"]],
    )
    def test_bad_flags_exit_2(self, capsys, tmp_path, flags):
        code, s = run(capsys, "simulate", "--out", tmp_path, *flags)
        assert code == 2 and s["error"].startswith("ConfigError")

    def test_config_file(self, capsys, tmp_path):
        cfgfile = tmp_path / "cfg.json"
        cfgfile.write_text(json.dumps({"grid": 8, "c": 0.5, "t1": 0.5}))
        code, s = run(capsys, "simulate", "--config", cfgfile, "--out", tmp_path)
        assert code == 0 and s["grid"] == 8
        meta = lrtf.read_meta(tmp_path / "field.lrtf")
        assert meta["c"] == 0.5 and meta["provenance"]["config"]["t1"] == 0.5

    def test_unknown_config_key(self, capsys, tmp_path):
        cfgfile = tmp_path / "cfg.json"
        cfgfile.write_text(json.dumps({"gird": 8}))
        code, _ = run(capsys, "simulate", "--config", cfgfile, "--out", tmp_path)
        assert code == 2

    def test_missing_input_exit_2(self, capsys, tmp_path):
        code, _ = run(capsys, "slice", "--input", tmp_path / "none.lrtf", "--out", tmp_path)
        assert code == 2


class TestCommands:
    def test_zero_field_gives_zero_sinogram(self, capsys, tmp_path):
        lrtf.write(tmp_path / "zero.lrtf", np.zeros((5, 8, 8, 8)))
        code, s = run(capsys, "transform", "--grid", 8, "--dirs", 16, "--input", tmp_path / "zero.lrtf", "--out", tmp_path)
        assert code == 0 and s["sinogram_norm"] == 0
        assert np.all(lrtf.read(tmp_path / "sinogram.lrtf") == 0)

    def test_slice_round_trip(self, capsys, tmp_path):
        common = ["--grid", 12, "--dirs", 32, "--c", 0.75, "--out", tmp_path]
        assert run(capsys, "transform", "--exact", *common)[0] == 0
        code, s = run(capsys, "reconstruct", "--input", tmp_path / "sinogram.lrtf", "--truth", tmp_path / "cauchy.lrtf", *common)
        assert code == 0 and max(s["rel_error_l2"]) < 1e-6

    def test_cg_reconstruction(self, capsys, tmp_path):
        common = ["--grid", 12, "--dirs", 32, "--out", tmp_path]
        run(capsys, "transform", *common)
        code, s = run(capsys, "reconstruct", "--method", "cg", "--input", tmp_path / "sinogram.lrtf", "--truth", tmp_path / "cauchy.lrtf", *common)
        assert code == 0 and s["converged"] and max(s["rel_error_l2"]) < 1e-5
        assert json.loads((tmp_path / "report.json").read_text())["converged"]

    def test_cg_iteration_cap_exit_4(self, capsys, tmp_path):
        common = ["--grid", 12, "--dirs", 32, "--out", tmp_path]
        run(capsys, "transform", *common)
        code, s = run(capsys, "reconstruct", "--method", "cg", "--maxiter", 1, "--tol", 1e-14, "--input", tmp_path / "sinogram.lrtf", *common)
        assert code == 4 and not s["converged"]

    def test_cfl_violation_exit_3(self, capsys, tmp_path):
        code, s = run(capsys, "simulate", "--grid", 16, "--c", 1, "--nt", 3, "--out", tmp_path)
        assert code == 3 and s["error"].startswith("CFLViolation")

    def test_spectral_simulation_conserves_energy(self, capsys, tmp_path):
        code, s = run(capsys, "simulate", "--grid", 8, "--solver", "spectral", "--out", tmp_path)
        assert code == 0 and s["energy_drift"] < 1e-12
        assert lrtf.read(tmp_path / "field.lrtf").shape == (s["nt"], 8, 8, 8)

    def test_fourier_slice_output(self, capsys, tmp_path):
        common = ["--grid", 8, "--dirs", 16, "--out", tmp_path]
        run(capsys, "transform", "--exact", *common)
        code, s = run(capsys, "slice", "--input", tmp_path / "sinogram.lrtf", "--zeta", 0.3, 1, 0, 0, *common)
        assert code == 0 and len(s["coefficients"]) == 1
        assert json.loads((tmp_path / "slice.json").read_text())["coefficients"][0]["tau"] == 0.3

    def test_raytrace(self, capsys, tmp_path):
        code, s = run(capsys, "raytrace", "--grid", 8, "--dirs", 6, "--delta", 0.02, "--out", tmp_path)
        assert code == 0
        dev = lrtf.read(tmp_path / "deviation.lrtf")
        assert dev.shape == (8, 8, 8, 6) and dev.max() > 0
        assert lrtf.read(tmp_path / "metric.lrtf").shape[0] == 10

    def test_isw_inversion(self, capsys, tmp_path):
        code, s = run(capsys, "isw", "--grid", 8, "--dirs", 16, "--c", 1, "--method", "cg", "--out", tmp_path)
        assert code == 0
        assert (tmp_path / "reconstruction.lrtf").exists() and (tmp_path / "report.json").exists()

    def test_validate_too_few_directions(self, capsys, tmp_path):
        code, s = run(capsys, "validate", "--dirs", 8, "--only", 1, "--out", tmp_path)
        assert code == 1
        report = json.loads((tmp_path / "validation.json").read_text())
        assert "TooFewDirections" in json.dumps(report)

    def test_deterministic_bytes(self, capsys, tmp_path):
        for d in ("a", "b"):
            run(capsys, "transform", "--grid", 8, "--dirs", 16, "--seed", 3, "--out", tmp_path / d)
        a = (tmp_path / "a" / "sinogram.lrtf").read_bytes()
        assert a == (tmp_path / "b" / "sinogram.lrtf").read_bytes()

    def test_module_entry_point(self, tmp_path):
        p = subprocess.run(
            [sys.executable, "-m", "lightray.cli", "simulate", "--grid", "8", "--out", str(tmp_path)],
            capture_output=True,
            text=True,
        )
        assert p.returncode == 0 and json.loads(p.stdout)["command"] == "simulate"
