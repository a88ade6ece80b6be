import json
import math
import subprocess
import sys

import numpy as np
import pytest

from minimaxreg.cli import main


def run_cli(*args):
    return main(list(args))


class TestWidth:
    def test_scalar_oracle(self, capsys):
        assert run_cli("width", "--d", "1", "--rho", "1", "--r", "2",
                       "--samples", "10000", "--seed", "7") == 0
        out = json.loads(capsys.readouterr().out)
        assert abs(out["value"] - math.sqrt(2 / math.pi)) <= 3 * out["stderr"]
        assert out["samples"] == 10000

    def test_rho_zero(self, capsys):
        run_cli("width", "--d", "4", "--rho", "0", "--r", "1", "--samples", "10")
        out = json.loads(capsys.readouterr().out)
        assert out["value"] == 0.0 and out["stderr"] == 0.0

    def test_byte_identical_reruns(self, capsys):
        run_cli("width", "--d", "3", "--rho", "1", "--r", "0.5", "--samples", "200",
                "--seed", "5")
        first = capsys.readouterr().out
        run_cli("width", "--d", "3", "--rho", "1", "--r", "0.5", "--samples", "200",
                "--seed", "5")
        assert capsys.readouterr().out == first

    def test_invalid_flags_exit_2(self):
        proc = subprocess.run(
            [sys.executable, "-m", "minimaxreg.cli", "width", "--d", "x"],
            capture_output=True)
        assert proc.returncode == 2


class TestProfile:
    def test_csv_structure(self, tmp_path):
        out = tmp_path / "profile.csv"
        assert run_cli("profile", "--N", "256", "--d", "64", "--sigma", "1",
                       "--rho-min", "0.05", "--rho-max", "10", "--points", "8",
                       "--method", "closed", "--profile", "calibrated",
                       "--out", str(out)) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("# minimaxreg")
        assert lines[1] == "rho,r_M,r_Q,r,psi,method"
        rows = [line.split(",") for line in lines[2:]]
        # low-dimensional regime: r_Q column all zero
        assert all(float(r[2]) == 0.0 for r in rows)
        # psi = c0 * r^2 rowwise (calibrated c0 = 2)
        for r in rows:
            assert float(r[4]) == pytest.approx(2.0 * float(r[3]) ** 2, rel=1e-12)
        # monotone r_M
        rms = [float(r[1]) for r in rows]
        assert all(b >= a - 1e-12 for a, b in zip(rms, rms[1:]))

    def test_mc_profile_monotone_within_tolerance(self, tmp_path):
        out = tmp_path / "mc.csv"
        assert run_cli("profile", "--N", "32", "--d", "48", "--sigma", "1",
                       "--rho-min", "0.1", "--rho-max", "2", "--points", "5",
                       "--method", "mc", "--seed", "3", "--out", str(out)) == 0
        rows = [line.split(",") for line in out.read_text().strip().splitlines()[2:]]
        rms = [float(r[1]) for r in rows]
        assert all(b >= a * 0.93 for a, b in zip(rms, rms[1:]))

    def test_invalid_range(self):
        assert run_cli("profile", "--N", "8", "--d", "4", "--sigma", "1",
                       "--rho-min", "1", "--rho-max", "0.5") == 2


class TestEstimate:
    def test_lasso_roundtrip(self, tmp_path, capsys):
        gen = np.random.default_rng(0)
        X = gen.standard_normal((30, 4))
        y = X @ np.array([1.0, 0, 0, -0.5]) + 0.1 * gen.standard_normal(30)
        data = tmp_path / "data.csv"
        np.savetxt(data, np.column_stack([y, X]), delimiter=",",
                   header="y,x1,x2,x3,x4", comments="")
        assert run_cli("estimate", "--data", str(data), "--estimator", "lasso",
                       "--lambda", "0.1") == 0
        out = json.loads(capsys.readouterr().out)
        from minimaxreg.solvers import Dataset, lasso
        want = lasso(Dataset(X, y), 0.1)
        assert np.allclose(out["t_hat"], want.t_hat, atol=1e-9)
        assert out["objective"] == pytest.approx(want.objective)

    def test_erm_needs_rho(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("y,x\n1.0,2.0\n0.5,1.0\n")
        assert run_cli("estimate", "--data", str(data), "--estimator", "erm") == 2

    def test_rerm_on_csv(self, tmp_path, capsys):
        gen = np.random.default_rng(1)
        X = gen.standard_normal((40, 6))
        y = X @ np.array([0.8, 0, 0, 0, 0, 0]) + 0.2 * gen.standard_normal(40)
        data = tmp_path / "data.csv"
        np.savetxt(data, np.column_stack([y, X]), delimiter=",",
                   header="y," + ",".join(f"x{i}" for i in range(6)), comments="")
        assert run_cli("estimate", "--data", str(data), "--estimator", "rerm",
                       "--sigma", "0.2") == 0
        out = json.loads(capsys.readouterr().out)
        assert out["l1_norm"] <= 8.0


class TestConfigCommands:
    def test_simulate_minimal_noiseless(self, tmp_path):
        cfg = {"cells": [{"N": 40, "d": 10, "sigma": 0.0,
                          "target": {"kind": "sparse", "s": 2, "amplitude": 0.5}}],
               "estimators": ["oracle_erm"], "trials": 1, "seed": 3}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert run_cli("simulate", str(path), "--out", str(tmp_path / "out")) == 0
        rep = json.loads((tmp_path / "out/report.json").read_text())
        assert rep["cells"][0]["estimators"]["oracle_erm"]["median_l2"] < 1e-10
        csv = (tmp_path / "out/trials.csv").read_text().splitlines()
        assert csv[1] == "cell_id,trial,estimator,l2_error_sq,pred_error_sq,l1_norm_hat,wall_time"

    def test_malformed_json_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"cells": [,]}')
        assert run_cli("simulate", str(path), "--out", str(tmp_path / "o")) == 2
        err = capsys.readouterr().err
        assert "line" in err and "column" in err

    def test_unknown_keys_rejected(self, tmp_path):
        cfg = {"cells": [{"N": 10, "d": 2, "sigma": 0.0,
                          "target": {"kind": "zero"}}],
               "trials": 1, "seed": 0, "bogus": 1}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert run_cli("simulate", str(path), "--out", str(tmp_path / "o")) == 2

    def test_threads_do_not_change_report(self, tmp_path):
        cfg = {"cells": [{"N": 30, "d": 8, "sigma": 0.4,
                          "target": {"kind": "sparse", "s": 2, "amplitude": 0.5}}],
               "estimators": ["oracle_erm", "rerm", "lasso"],
               "trials": 4, "seed": 11}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert run_cli("simulate", str(path), "--out", str(tmp_path / "a"),
                       "--threads", "1") == 0
        assert run_cli("simulate", str(path), "--out", str(tmp_path / "b"),
                       "--threads", "8") == 0
        assert (tmp_path / "a/report.json").read_bytes() == \
            (tmp_path / "b/report.json").read_bytes()

    def test_fixed_design_refusal_exit_3(self, tmp_path, capsys):
        cfg = {"N": 64, "d": 128, "sigma": 0.3, "trials": 1, "seed": 0,
               "target": {"kind": "sparse", "s": 2, "amplitude": 0.5},
               "rip_budget": 4}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert run_cli("fixed-design", str(path), "--out", str(tmp_path / "o")) == 3

    def test_compare_defaults(self, tmp_path):
        cfg = {"cells": [{"N": 60, "d": 12, "sigma": 0.3,
                          "target": {"kind": "sparse", "s": 2, "amplitude": 0.7}}],
               "trials": 3, "seed": 7}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        rc = run_cli("compare", str(path), "--out", str(tmp_path / "cmp"))
        rep = json.loads((tmp_path / "cmp/report.json").read_text())
        assert "pair_band_rerm_vs_oracle_erm" in rep["flags"]
        assert rc in (0, 3)

    def test_check_events_report(self, tmp_path):
        cfg = {"seed": 4, "profile": "paper-faithful",
               "isomorphy": {"N": 256, "d": 16, "rho": 8.0, "r_q": 0.0, "trials": 100},
               "decomposition": {"N": 15, "d": 6, "instances": 30},
               "flags": {"isomorphy_freq": 0.99}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert run_cli("check-events", str(path), "--out", str(tmp_path / "ev")) == 0
        rep = json.loads((tmp_path / "ev/report.json").read_text())
        assert rep["flags"]["isomorphy"] and rep["flags"]["decomposition"]

    def test_seed_override_changes_hashless_fields(self, tmp_path):
        cfg = {"cells": [{"N": 20, "d": 4, "sigma": 0.5,
                          "target": {"kind": "sparse", "s": 1, "amplitude": 1.0}}],
               "estimators": ["oracle_erm"], "trials": 2, "seed": 1}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        run_cli("simulate", str(path), "--out", str(tmp_path / "s1"))
        run_cli("simulate", str(path), "--out", str(tmp_path / "s2"), "--seed", "2")
        a = json.loads((tmp_path / "s1/report.json").read_text())
        b = json.loads((tmp_path / "s2/report.json").read_text())
        assert a["cells"][0]["estimators"]["oracle_erm"]["median_l2"] != \
            b["cells"][0]["estimators"]["oracle_erm"]["median_l2"]
