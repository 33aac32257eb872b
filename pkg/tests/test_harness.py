import importlib.resources as resources
import os

import numpy as np
import pytest

from paramest.cli import main as cli_main
from paramest.scenarios import (
    RunReport,
    ScenarioError,
    compare_runs,
    format_comparison,
    load_scenario,
    parse_scenario,
    run_scenario,
    write_csv,
)

SCENARIO_DIR = resources.files("paramest") / "scenarios"


def scenario_path(name):
    return str(SCENARIO_DIR / name)


MINIMAL = """
[scenario]
name = "tiny"
mode = "dt"

[grid]
n_steps = 10

[system]
kind = "lre"
theta = [2.0]
phi = [ { signal = "constant", value = 1.0 } ]

[estimator]
kind = "interlaced"
gamma = 1.0
gamma_g = 1.0
"""


class TestParsing:
    def test_bundled_identification_scenario(self):
        sc = load_scenario(scenario_path("lti_gd.toml"))
        assert np.array_equal(sc.theta_true, np.array([98.0, 19.0, 1.0, 2.0]))
        assert sc.mode == "ct"
        assert sc.grid.h == 1e-2

    def test_empty_file_is_a_parse_error(self):
        with pytest.raises(ScenarioError):
            parse_scenario("")

    def test_malformed_toml_reports_line(self):
        with pytest.raises(ScenarioError, match="line"):
            parse_scenario("[scenario\nname = 3")

    def test_negative_gain_rejected(self):
        bad = MINIMAL.replace("gamma = 1.0", "gamma = -5.0")
        with pytest.raises(ScenarioError, match="gamma"):
            parse_scenario(bad)

    def test_unknown_estimator_kind(self):
        bad = MINIMAL.replace('kind = "interlaced"', 'kind = "magic"')
        with pytest.raises(ScenarioError, match="magic"):
            parse_scenario(bad)

    def test_phi_theta_length_mismatch(self):
        bad = MINIMAL.replace("theta = [2.0]", "theta = [2.0, 1.0]")
        with pytest.raises(ScenarioError, match="phi"):
            parse_scenario(bad)

    def test_every_bundled_scenario_parses(self):
        names = sorted(f.name for f in SCENARIO_DIR.iterdir() if f.name.endswith(".toml"))
        assert len(names) >= 10
        for name in names:
            sc = load_scenario(scenario_path(name))
            assert sc.grid.n_steps > 0

    def test_hurwitz_violations_rejected_at_load(self):
        text = open(scenario_path("mrac_rich_ref.toml")).read()
        unstable_model = text.replace("model_den = [1.0, 3.0]", "model_den = [1.0, -3.0]")
        with pytest.raises(ScenarioError, match="Hurwitz"):
            parse_scenario(unstable_model)
        bad_zero = text.replace("plant_num = [2.0]", "plant_num = [2.0, -2.0]").replace(
            "plant_den = [1.0, 1.0]", "plant_den = [1.0, 3.0, 2.0]"
        )
        with pytest.raises(ScenarioError, match="Hurwitz"):
            parse_scenario(bad_zero)


class TestRunning:
    def test_dt_scalar_run_matches_closed_form(self, tmp_path):
        sc = load_scenario(scenario_path("dt_scalar.toml"))
        report, columns = run_scenario(sc, out_dir=str(tmp_path))
        k = np.arange(51)
        assert np.max(np.abs(columns["delta"] - (1 - 0.5**k))) <= 1e-12
        assert report.final_err <= 1e-12
        assert os.path.exists(report.csv_path)

    def test_zero_horizon_gives_header_only_csv(self, tmp_path):
        text = MINIMAL.replace("n_steps = 10", "n_steps = 0")
        sc = parse_scenario(text)
        report, _ = run_scenario(sc, out_dir=str(tmp_path))
        lines = open(report.csv_path).read().splitlines()
        assert len(lines) == 1 and lines[0].startswith("time,")

    def test_trace_selection_and_unknown_trace(self, tmp_path):
        sc = parse_scenario(MINIMAL)
        sc.traces = ["theta_hat_1"]
        report, columns = run_scenario(sc, out_dir=str(tmp_path))
        assert list(columns) == ["time", "theta_hat_1"]
        sc.traces = ["nonexistent"]
        with pytest.raises(ScenarioError, match="nonexistent"):
            run_scenario(sc, out_dir=str(tmp_path))

    def test_determinism_byte_identical(self, tmp_path):
        sc = parse_scenario(MINIMAL.replace("n_steps = 10", "n_steps = 200"))
        r1, _ = run_scenario(sc, out_dir=str(tmp_path / "a"))
        r2, _ = run_scenario(sc, out_dir=str(tmp_path / "b"))
        b1 = open(r1.csv_path, "rb").read()
        b2 = open(r2.csv_path, "rb").read()
        assert b1 == b2

    def test_csv_full_precision_and_lf(self, tmp_path):
        path = write_csv({"time": np.array([0.0]), "x": np.array([1 / 3])}, str(tmp_path), "p.csv")
        raw = open(path, "rb").read()
        assert b"\r" not in raw
        assert b"0.33333333333333331" in raw

    def test_plot_script_written_next_to_csv(self, tmp_path):
        sc = parse_scenario(MINIMAL)
        report, columns = run_scenario(sc, out_dir=str(tmp_path))
        script = open(tmp_path / "tiny.gp").read()
        assert "tiny.csv" in script
        for name in columns:
            assert name in script.splitlines()[0]


class TestCompare:
    def _report(self, label, family="fam", **kw):
        r = RunReport(name=label, family=family, label=label)
        for k, v in kw.items():
            setattr(r, k, v)
        return r

    def test_identical_runs_zero_difference(self):
        a = self._report("x", final_err=0.5, t_conv=2.0)
        b = self._report("x", final_err=0.5, t_conv=2.0)
        header, rows = compare_runs([a], [b])
        assert rows[0][1:] == rows[1][1:]
        text = format_comparison(header, rows)
        assert "final_err" in text

    def test_family_mismatch_rejected(self):
        a = self._report("x", family="fam1")
        b = self._report("y", family="fam2")
        with pytest.raises(ValueError, match="famil"):
            compare_runs([a], [b])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compare_runs([])


class TestCli:
    def test_run_exit_codes(self, tmp_path, capsys):
        rc = cli_main(["run", scenario_path("dt_scalar.toml"), "--out-dir", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "final ||err||" in out

    def test_run_validation_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[scenario]\nname = 'x'\n")
        assert cli_main(["run", str(bad), "--out-dir", str(tmp_path)]) == 2

    def test_run_missing_file_io_code(self, tmp_path):
        assert cli_main(["run", str(tmp_path / "nope.toml")]) == 4

    def test_divergence_exit_code(self, tmp_path, capsys):
        text = MINIMAL.replace("gamma_g = 1.0", "gamma_g = 1e12").replace(
            'mode = "dt"', 'mode = "ct"'
        ).replace("n_steps = 10", "").replace("[grid]", "[grid]\nt_end = 5.0\nh = 1.0")
        f = tmp_path / "div.toml"
        f.write_text(text)
        rc = cli_main(["run", str(f), "--out-dir", str(tmp_path)])
        assert rc == 3
        assert os.path.exists(tmp_path / "tiny.csv")  # partial trace retained

    def test_overrides(self, tmp_path, capsys):
        rc = cli_main([
            "run", scenario_path("mrac_rich_ref.toml"),
            "--out-dir", str(tmp_path), "--t-end", "0.5", "--h", "0.001",
        ])
        assert rc == 0

    def test_check_excitation_roundtrip(self, tmp_path, capsys):
        t = np.arange(0, 3.0, 0.01)
        cols = {"time": t, "phi_1": np.ones_like(t), "phi_2": np.exp(-t)}
        path = write_csv(cols, str(tmp_path), "trace.csv")
        rc = cli_main(["check-excitation", path])
        assert rc == 0
        out = capsys.readouterr().out
        assert "excited=True" in out
        assert "identifiability: True" in out

    def test_compare_directory(self, tmp_path, capsys):
        d = tmp_path / "scenarios"
        d.mkdir()
        for variant, gg in (("a", 1.0), ("b", 2.0)):
            text = MINIMAL.replace('name = "tiny"', f'name = "tiny_{variant}"\nfamily = "tiny"')
            text = text.replace("gamma_g = 1.0", f"gamma_g = {gg}")
            (d / f"{variant}.toml").write_text(text)
        rc = cli_main(["compare", str(d), "--out-dir", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "family tiny" in out
        assert os.path.exists(tmp_path / "out" / "compare_tiny.csv")


PERTURBED = """
[scenario]
name = "noisy"
mode = "ct"

[grid]
h = 0.01
t_end = 5.0

[system]
kind = "lre"
theta = [2.0, -1.0]
phi = [ { signal = "constant", value = 1.0 }, { signal = "sinusoid", amp = 1.0, omega = 1.0 } ]

[system.disturbance]
kind = "measurement"
amplitude = 0.05
omega = 3.0

[estimator]
kind = "interlaced"
gamma = 10.0

[estimator.gamma_g_schedule]
c = 5.0
b = 1.0
form = "ct"
"""


class TestPerturbedScenario:
    def test_parses_and_runs_bounded(self, tmp_path):
        sc = parse_scenario(PERTURBED)
        report, columns = run_scenario(sc, out_dir=str(tmp_path))
        assert not report.diverged
        assert np.isfinite(report.sup_err)
        assert report.sup_err < 10.0

    def test_bad_disturbance_kind(self):
        bad = PERTURBED.replace('kind = "measurement"', 'kind = "gremlins"')
        with pytest.raises(ScenarioError, match="disturbance"):
            parse_scenario(bad)

    def test_unknown_signal_parameter(self):
        bad = PERTURBED.replace("amp = 1.0, omega = 1.0", "amp = 1.0, omega = 1.0, wobble = 2.0")
        with pytest.raises(ScenarioError, match="wobble"):
            parse_scenario(bad)
