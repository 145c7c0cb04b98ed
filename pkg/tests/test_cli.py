import csv
import json

import numpy as np
import pytest

from milestone_iv.cli import main
from milestone_iv.simulate import generate, wls_like_config


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "wls.csv"
    units = generate(wls_like_config(n=240, seed=3)).units
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "wage", "educ", "x1", "x2"])
        for u in units:
            w.writerow([u.id, u.Y, u.D[0],
                        "" if u.x_missing[0] else u.x[0],
                        "" if u.x_missing[1] else u.x[1]])
    return str(path)


BASE = ["--input", None, "--outcome", "wage", "--dose", "educ",
        "--cuts", "16"]


def run(sub, data_csv, outdir, *extra):
    args = list(BASE)
    args[1] = data_csv
    return main([sub, *args, "--outdir", str(outdir), "--no-figures",
                 *extra])


class TestMatch:
    def test_artifacts_written(self, data_csv, tmp_path):
        rc = run("match", data_csv, tmp_path / "m",
                 "--covariate", "x1", "--covariate", "x2")
        assert rc == 0
        out = tmp_path / "m"
        for name in ("manifest.json", "report.txt", "report_machine.txt",
                     "matching.csv", "balance.csv", "edit_log.csv"):
            assert (out / name).exists(), name
        rows = list(csv.DictReader(open(out / "matching.csv")))
        assert {r["role"] for r in rows} == {"treated", "control"}

    def test_reruns_byte_identical(self, data_csv, tmp_path):
        run("match", data_csv, tmp_path / "a")
        run("match", data_csv, tmp_path / "b")
        for name in ("report_machine.txt", "matching.csv", "balance.csv"):
            assert (tmp_path / "a" / name).read_bytes() \
                == (tmp_path / "b" / name).read_bytes()

    def test_full_engine(self, data_csv, tmp_path):
        rc = run("match", data_csv, tmp_path / "f", "--engine", "full",
                 "--covariate", "x1", "--max-ratio", "3")
        assert rc == 0
        text = (tmp_path / "f" / "report_machine.txt").read_text()
        assert "structure = full" in text


class TestEstimate:
    def test_reports_all_methods(self, data_csv, tmp_path):
        rc = run("estimate", data_csv, tmp_path / "e",
                 "--covariate", "x1", "--covariate", "x2")
        assert rc == 0
        text = (tmp_path / "e" / "report_machine.txt").read_text()
        for key in ("hl_estimate", "ci_lower", "ci_upper",
                    "wald_estimate", "ols_slope", "tsls_slope",
                    "p_two_sided_at_zero"):
            assert key in text, key
        # attenuation pattern: milestone estimate above naive OLS
        vals = dict(line.split(" = ") for line in text.splitlines())
        assert float(vals["hl_estimate"]) > float(vals["ols_slope"])

    def test_full_engine_estimate(self, data_csv, tmp_path):
        rc = run("estimate", data_csv, tmp_path / "ef", "--engine",
                 "full", "--covariate", "x1")
        assert rc == 0
        text = (tmp_path / "ef" / "report_machine.txt").read_text()
        assert "fullmatch_estimate" in text

    def test_figures_rendered_by_default(self, data_csv, tmp_path):
        out = tmp_path / "fig"
        rc = main(["estimate", "--input", data_csv, "--outcome", "wage",
                   "--dose", "educ", "--cuts", "16", "--outdir",
                   str(out)])
        assert rc == 0
        assert (out / "figures" / "estimates.png").stat().st_size > 0


class TestEstimateMV:
    @pytest.fixture(scope="class")
    def mv_csv(self, tmp_path_factory):
        from milestone_iv.simulate import coverage_config_mv

        path = tmp_path_factory.mktemp("mv") / "mv.csv"
        units = generate(coverage_config_mv(I=50, seed=7)).units
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "educ", "svc"])
            for u in units:
                w.writerow([u.Y, u.D[0], u.D[1]])
        return str(path)

    def test_confidence_set_artifacts(self, mv_csv, tmp_path):
        out = tmp_path / "mv"
        rc = main(["estimate-mv", "--input", mv_csv, "--outcome", "y",
                   "--dose", "educ", "--dose", "svc", "--cuts", "16",
                   "--cuts", "0.5", "--outdir", str(out), "--no-figures"])
        assert rc == 0
        rows = list(csv.reader(open(out / "confidence_set.csv")))
        assert rows[0] == ["beta_0", "beta_1", "chi2"]
        assert len(rows) > 1
        text = (out / "report_machine.txt").read_text()
        for key in ("chi2_at_zero", "estimate_0", "estimate_1",
                    "projection_low_0", "projection_high_1"):
            assert key in text, key

    def test_needs_two_doses(self, mv_csv, tmp_path):
        rc = main(["estimate-mv", "--input", mv_csv, "--outcome", "y",
                   "--dose", "educ", "--cuts", "16",
                   "--outdir", str(tmp_path / "x")])
        assert rc == 2


class TestConfigResolution:
    def test_flags_override_file(self, data_csv, tmp_path):
        cfg = {"input": data_csv, "outcome": "wage", "dose": ["educ"],
               "cuts": ["16"], "alpha": 0.1, "figures": False}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "o"
        rc = main(["estimate", "--config", str(cfg_path), "--alpha",
                   "0.05", "--outdir", str(out)])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["alpha"] == 0.05
        assert manifest["config"]["input"] == data_csv
        assert "version" in manifest

    def test_unknown_config_key(self, data_csv, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text('{"frobnicate": 1}')
        rc = main(["estimate", "--config", str(cfg_path),
                   "--outdir", str(tmp_path / "x")])
        assert rc == 2


class TestExitCodes:
    def test_config_errors(self, data_csv, tmp_path):
        out = str(tmp_path / "x")
        assert main(["estimate", "--input", data_csv, "--outcome",
                     "wage", "--dose", "educ", "--cuts", "16",
                     "--alpha", "2", "--outdir", out]) == 2
        assert main(["estimate", "--input", data_csv, "--outcome",
                     "wage", "--dose", "educ", "--outdir", out]) == 2
        assert main(["simulate", "--profile", "nope",
                     "--outdir", out]) == 2

    def test_infeasible(self, tmp_path):
        path = tmp_path / "one_sided.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "d"])
            for i in range(6):
                w.writerow([float(i), 17.0 + i])  # everyone above the cut
        rc = main(["match", "--input", str(path), "--outcome", "y",
                   "--dose", "d", "--cuts", "16",
                   "--outdir", str(tmp_path / "x")])
        assert rc == 3

    def test_degenerate(self, tmp_path):
        path = tmp_path / "flat.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "d"])
            for i in range(4):
                w.writerow([1.0, 17.0])
                w.writerow([1.0, 15.0])  # all outcome differences zero
        rc = main(["estimate", "--input", str(path), "--outcome", "y",
                   "--dose", "d", "--cuts", "16", "--no-figures",
                   "--outdir", str(tmp_path / "x")])
        assert rc == 4


class TestSimulateCommand:
    def test_heteroscedastic_profile(self, tmp_path):
        out = tmp_path / "s"
        rc = main(["simulate", "--profile", "heteroscedastic",
                   "--replicates", "4", "--outdir", str(out)])
        assert rc == 0
        text = (out / "report_machine.txt").read_text()
        assert "signed_rank_size" in text
        assert "replicates = 4" in text
