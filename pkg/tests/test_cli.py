"""End-to-end tests of the command-line interface.

Commands run in-process through main(argv), which returns the exit code:
0 success, 1 numerical failure, 2 usage error.
"""

import csv
import json
import re

import numpy as np
import pytest

from ecreg.cli import main
from ecreg.data_io import load_csv, load_fit_json


def _synth(tmp_path, seed=3):
    paths = {
        "train": str(tmp_path / "train.csv"),
        "test": str(tmp_path / "test.csv"),
        "truth": str(tmp_path / "truth.json"),
    }
    rc = main(["synth", "--n", "30", "--alpha", "2", "--rho0", "0.2",
               "--sigma-w0-sq", "4", "--sigma-n0-sq", "0.25",
               "--seed", str(seed),
               "--out-train", paths["train"], "--out-test", paths["test"],
               "--out-truth", paths["truth"]])
    assert rc == 0
    return paths


def _read_rows(path):
    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines() if not l.startswith("#")]
    return list(csv.reader(lines))


class TestSynth:
    def test_writes_train_test_truth(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        out = capsys.readouterr().out
        assert "wrote" in out
        train, _ = load_csv(paths["train"], "y")
        test, _ = load_csv(paths["test"], "y")
        assert train.X.shape == (30, 60)
        assert test.X.shape == (30, 60)
        with open(paths["truth"], encoding="utf-8") as fh:
            truth = json.load(fh)
        assert len(truth["w0"]) == 30
        assert all(truth["w0"][i] != 0.0 for i in truth["support"])
        assert truth["settings"]["seed"] == 3

    def test_truth_skipped_when_empty(self, tmp_path):
        rc = main(["synth", "--n", "10", "--alpha", "1", "--rho0", "0.2",
                   "--sigma-w0-sq", "1", "--sigma-n0-sq", "0.1",
                   "--out-train", str(tmp_path / "tr.csv"),
                   "--out-test", str(tmp_path / "te.csv"),
                   "--out-truth", ""])
        assert rc == 0
        assert not (tmp_path / "truth.json").exists()

    def test_deterministic(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        a = _synth(tmp_path / "a", seed=5)
        b = _synth(tmp_path / "b", seed=5)
        for key in ("train", "test", "truth"):
            with open(a[key], "rb") as fa, open(b[key], "rb") as fb:
                assert fa.read() == fb.read()

    def test_invalid_config_is_usage_error(self, tmp_path, capsys):
        rc = main(["synth", "--n", "10", "--alpha", "1", "--rho0", "1.5",
                   "--sigma-w0-sq", "1", "--sigma-n0-sq", "0.1",
                   "--out-train", str(tmp_path / "t.csv")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestFit:
    def test_writes_fit_json(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        out_path = str(tmp_path / "fit.json")
        rc = main(["fit", "--data", paths["train"], "--family", "bg",
                   "--rho", "0.2", "--sigma-w2", "4", "--beta", "4",
                   "--out", out_path])
        assert rc == 0
        assert "converged=True" in capsys.readouterr().out
        payload = load_fit_json(out_path)
        assert payload["converged"] is True
        assert payload["m"].shape == (30,)
        assert payload["settings"]["beta"] == 4.0
        assert payload["settings"]["eps"] >= 0.0
        assert np.all((payload["inclusion_probs"] >= 0.0)
                      & (payload["inclusion_probs"] <= 1.0))

    def test_unconverged_is_numerical_failure(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        out_path = str(tmp_path / "fit.json")
        rc = main(["fit", "--data", paths["train"], "--family", "bg",
                   "--rho", "0.2", "--sigma-w2", "4", "--beta", "4",
                   "--max-outer", "1", "--out", out_path])
        assert rc == 1
        assert "did not converge" in capsys.readouterr().err
        assert load_fit_json(out_path)["converged"] is False

    def test_uniform_family(self, tmp_path):
        paths = _synth(tmp_path)
        rc = main(["fit", "--data", paths["train"], "--family", "bu",
                   "--rho", "0.2", "--beta", "4",
                   "--out", str(tmp_path / "fit.json")])
        assert rc == 0

    def test_gauss_family_requires_sigma(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        rc = main(["fit", "--data", paths["train"], "--family", "bg",
                   "--rho", "0.2", "--beta", "4"])
        assert rc == 2
        assert "--sigma-w2" in capsys.readouterr().err

    def test_uniform_family_rejects_sigma(self, tmp_path):
        paths = _synth(tmp_path)
        rc = main(["fit", "--data", paths["train"], "--family", "bu",
                   "--rho", "0.2", "--sigma-w2", "4", "--beta", "4"])
        assert rc == 2

    def test_missing_data_file(self, tmp_path):
        rc = main(["fit", "--data", str(tmp_path / "absent.csv"),
                   "--rho", "0.2", "--sigma-w2", "4", "--beta", "4"])
        assert rc == 2

    def test_missing_target_column(self, tmp_path):
        paths = _synth(tmp_path)
        rc = main(["fit", "--data", paths["train"], "--target", "zzz",
                   "--rho", "0.2", "--sigma-w2", "4", "--beta", "4"])
        assert rc == 2

    def test_centering_flag(self, tmp_path):
        paths = _synth(tmp_path)
        rc = main(["fit", "--data", paths["train"], "--center",
                   "--rho", "0.2", "--sigma-w2", "4", "--beta", "4",
                   "--out", str(tmp_path / "fit.json")])
        assert rc == 0


class TestLoocv:
    def test_approx_report(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        out_path = str(tmp_path / "loo.csv")
        rc = main(["loocv", "--data", paths["train"], "--rho", "0.2",
                   "--sigma-w2", "4", "--beta", "4", "--out", out_path])
        assert rc == 0
        assert "approx: eps_loo=" in capsys.readouterr().out
        rows = _read_rows(out_path)
        assert rows[0] == ["mu", "residual_full", "leverage", "residual_loo",
                           "flagged"]
        assert len(rows) == 61

    def test_literal_comparison(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        out_path = str(tmp_path / "loo.csv")
        rc = main(["loocv", "--data", paths["train"], "--rho", "0.2",
                   "--sigma-w2", "4", "--beta", "4", "--literal",
                   "--out", out_path])
        assert rc == 0
        out = capsys.readouterr().out
        match = re.search(r"relative_gap=(\S+)", out)
        assert match is not None
        assert float(match.group(1)) < 0.05
        rows = _read_rows(out_path)
        assert rows[0][-1] == "residual_loo_literal"
        assert all(row[-1] for row in rows[1:])

    def test_kfold_line(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        rc = main(["loocv", "--data", paths["train"], "--rho", "0.2",
                   "--sigma-w2", "4", "--beta", "4", "--kfold", "5",
                   "--out", str(tmp_path / "loo.csv")])
        assert rc == 0
        assert "kfold(5): eps=" in capsys.readouterr().out

    def test_kfold_bounds_are_usage_error(self, tmp_path):
        paths = _synth(tmp_path)
        rc = main(["loocv", "--data", paths["train"], "--rho", "0.2",
                   "--sigma-w2", "4", "--beta", "4", "--kfold", "1",
                   "--out", str(tmp_path / "loo.csv")])
        assert rc == 2

    def test_worker_count_does_not_change_output(self, tmp_path):
        paths = _synth(tmp_path)
        runs = []
        for workers in ("1", "6"):
            out_path = tmp_path / f"loo{workers}.csv"
            rc = main(["loocv", "--data", paths["train"], "--rho", "0.2",
                       "--sigma-w2", "4", "--beta", "4", "--literal",
                       "--workers", workers, "--out", str(out_path)])
            assert rc == 0
            text = out_path.read_text(encoding="utf-8")
            eps_lines = [l for l in text.splitlines() if "eps_loo" in l]
            runs.append((eps_lines, _read_rows(out_path)))
        assert runs[0] == runs[1]


class TestSweep:
    def test_grid_table(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        out_path = str(tmp_path / "sweep.csv")
        rc = main(["sweep", "--data", paths["train"], "--family", "bg",
                   "--beta-grid", "2,6", "--rho-grid", "0.3,1.0",
                   "--sigma-w2-grid", "3", "--out", out_path])
        assert rc == 0
        out = capsys.readouterr().out
        assert "best: beta=" in out
        rows = _read_rows(out_path)
        assert rows[0] == ["beta", "rho", "sigma_w2", "eps", "eps_loo",
                           "free_energy", "converged"]
        assert len(rows) == 5
        assert all(row[6] == "true" for row in rows[1:])

    def test_gauss_family_requires_sigma_grid(self, tmp_path):
        paths = _synth(tmp_path)
        rc = main(["sweep", "--data", paths["train"], "--family", "bg",
                   "--beta-grid", "2", "--rho-grid", "0.3"])
        assert rc == 2

    def test_uniform_family_rejects_sigma_grid(self, tmp_path):
        paths = _synth(tmp_path)
        rc = main(["sweep", "--data", paths["train"], "--family", "bu",
                   "--beta-grid", "2", "--rho-grid", "0.3",
                   "--sigma-w2-grid", "3"])
        assert rc == 2

    def test_malformed_grid_is_usage_error(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        rc = main(["sweep", "--data", paths["train"],
                   "--beta-grid", "1,x", "--rho-grid", "0.3",
                   "--sigma-w2-grid", "3"])
        assert rc == 2

    def test_worker_count_does_not_change_output(self, tmp_path):
        paths = _synth(tmp_path)
        tables = []
        for workers in ("1", "4"):
            out_path = tmp_path / f"sweep{workers}.csv"
            rc = main(["sweep", "--data", paths["train"], "--family", "bg",
                       "--beta-grid", "2,6", "--rho-grid", "0.4",
                       "--sigma-w2-grid", "3", "--workers", workers,
                       "--out", str(out_path)])
            assert rc == 0
            tables.append(_read_rows(out_path))
        assert tables[0] == tables[1]


class TestCalibrate:
    def test_selects_minimum_loo_beta(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        out_path = str(tmp_path / "cal.csv")
        rc = main(["calibrate", "--data", paths["train"], "--family", "bg",
                   "--sigma-w2", "4", "--k-target", "8",
                   "--beta-grid", "4,8", "--out", out_path])
        assert rc == 0
        assert "selected: beta=" in capsys.readouterr().out
        rows = _read_rows(out_path)
        assert rows[0] == ["K", "beta", "rho", "achieved_K", "eps",
                           "eps_loo", "selected"]
        assert len(rows) == 3
        selected = [row for row in rows[1:] if row[6] == "true"]
        assert len(selected) == 1
        eps_loo = {row[1]: float(row[5]) for row in rows[1:]}
        assert float(selected[0][5]) == min(eps_loo.values())
        for row in rows[1:]:
            assert abs(float(row[3]) - 8.0) <= 1e-6 * 8.0

    def test_unreachable_target_fails(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        rc = main(["calibrate", "--data", paths["train"], "--family", "bg",
                   "--sigma-w2", "4", "--k-target", "0.000001",
                   "--beta-grid", "4", "--out", str(tmp_path / "cal.csv")])
        assert rc == 1
        assert "failed" in capsys.readouterr().err

    def test_partial_failure_keeps_table(self, tmp_path, capsys):
        paths = _synth(tmp_path)
        out_path = str(tmp_path / "cal.csv")
        rc = main(["calibrate", "--data", paths["train"], "--family", "bg",
                   "--sigma-w2", "4", "--k-target", "0.000001,8",
                   "--beta-grid", "4", "--out", out_path])
        assert rc == 0
        err = capsys.readouterr().err
        assert "no successful grid point" in err
        rows = _read_rows(out_path)
        assert len(rows) == 3
        failed = [row for row in rows[1:] if row[2] == ""]
        assert len(failed) == 1
        assert failed[0][6] == "false"


class TestValidate:
    def test_all_checks_pass(self, capsys):
        rc = main(["validate"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "8/8 checks passed" in out
        assert "[FAIL]" not in out


class TestUsage:
    def test_unknown_flag(self):
        assert main(["fit", "--frobnicate"]) == 2

    def test_missing_required_flag(self, tmp_path):
        assert main(["fit", "--data", str(tmp_path / "x.csv")]) == 2

    def test_no_command(self):
        assert main([]) == 2

    def test_version_exits_cleanly(self, capsys):
        assert main(["--version"]) == 0
        assert "ecreg" in capsys.readouterr().out
