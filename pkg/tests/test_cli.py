import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from bayesphase import __version__
from bayesphase.cli import InputError, default_taus, main, read_series_csv

FAST = ["--set", "duration=20000"]


def run(argv, tmp_path, name="out"):
    out = tmp_path / name
    code = main(list(argv) + ["--out-dir", str(out)])
    return code, out


def digest(directory):
    h = hashlib.sha256()
    for p in sorted(directory.iterdir()):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


class TestSimulate:
    def test_default_preset_artifacts(self, tmp_path, capsys):
        code, out = run(["simulate", *FAST], tmp_path)
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == ["result.json", "series_bayes.csv", "series_mle.csv"]
        doc = json.loads((out / "result.json").read_text())
        assert doc["version"] == __version__
        assert doc["config"]["duration"] == 20000
        assert set(doc["runs"]) == {"mle", "bayes"}
        assert {"conv_bound", "bayes_bound", "tracking_snl"} <= set(doc["bounds"])
        assert "bayes_below_mle" in doc["comparison"]
        first = (out / "series_bayes.csv").read_text().splitlines()[0]
        assert first.startswith(f"# bayesphase {__version__} config=")
        assert "residual variance" in capsys.readouterr().out

    def test_seeded_runs_are_byte_identical(self, tmp_path):
        _, a = run(["simulate", *FAST, "--seed", "7"], tmp_path, "a")
        _, b = run(["simulate", *FAST, "--seed", "7"], tmp_path, "b")
        _, c = run(["simulate", *FAST, "--seed", "8"], tmp_path, "c")
        assert digest(a) == digest(b)
        assert digest(a) != digest(c)

    def test_format_selection(self, tmp_path):
        _, out = run(["simulate", *FAST, "--format", "json"], tmp_path)
        assert [p.name for p in out.iterdir()] == ["result.json"]

    def test_zero_drift_override(self, tmp_path):
        code, out = run(["simulate", "--set", "noise.diffusion_coeff=0", "--set", "duration=2000"], tmp_path)
        assert code == 0
        doc = json.loads((out / "result.json").read_text())
        assert "tracking_snl" not in doc["bounds"]

    def test_open_loop(self, tmp_path):
        code, out = run(["simulate", "--set", "kind=\"open_loop\"", "--set", "duration=1000"], tmp_path)
        assert code == 0
        assert (out / "series_open_loop.csv").exists()

    def test_dual_band_preset(self, tmp_path):
        code, out = run(["simulate", "--config", "link_10km", "--set", "duration=20000",
                         "--set", "estimator=\"bayes\""], tmp_path)
        assert code == 0
        doc = json.loads((out / "result.json").read_text())
        assert set(doc["runs"]["bayes"]) == {"link", "residual", "combined"}

    @pytest.mark.parametrize("argv", [
        ["simulate", "--set", "servo.bogus=1"],
        ["simulate", "--set", "measurement.flux=-2"],
        ["simulate", "--config", "no_such_preset"],
        ["simulate", "--config", "wiener_2e-4"],
        ["simulate", "--set", "oops"],
        ["simulate", "--jobs", "0"],
    ])
    def test_config_errors_exit_2(self, argv, tmp_path, capsys):
        code, out = run(argv, tmp_path)
        assert code == 2
        assert capsys.readouterr().err
        assert not out.exists()

    def test_unknown_key_names_path(self, tmp_path, capsys):
        run(["simulate", "--set", "servo.bogus=1"], tmp_path)
        assert "servo.bogus" in capsys.readouterr().err

    @pytest.mark.parametrize("override", ["measurement.flux=1e308", "noise.diffusion_coeff=1e300"])
    def test_numerical_failure_exit_3(self, override, tmp_path, capsys):
        code, _ = run(["simulate", "--set", override, "--set", "duration=1000"], tmp_path)
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_argparse_errors(self):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--format", "xml"])
        assert exc.value.code == 2


class TestSweep:
    def test_surface_small_grid(self, tmp_path):
        code, out = run(["sweep", "surface", "--taus", "1,100", "--mus", "0.2,2", "--n-seeds", "2",
                         "--windows", "200"], tmp_path)
        assert code == 0
        doc = json.loads((out / "sweep_surface.json").read_text())
        assert len(doc["rows"]) == 4
        assert doc["config"]["sweep_resolved"] == {"kind": "surface", "seeds": 2, "windows": 200}
        assert {"advantage_cells", "mle_min_over_tau_slope", "bayes_small_tau_slope"} <= set(doc["summary"])
        lines = (out / "sweep_surface.csv").read_text().splitlines()
        assert lines[0].startswith("# bayesphase")
        assert lines[1].startswith("tau_us [us],mu_per_us [1/us],conv_bound [rad^2]")
        assert len(lines) == 6

    def test_surface_default_grid_has_advantage(self, tmp_path):
        code, out = run(["sweep", "surface", "--n-seeds", "2", "--windows", "300", "--format", "json"], tmp_path)
        assert code == 0
        doc = json.loads((out / "sweep_surface.json").read_text())
        assert len(doc["rows"]) == 28
        assert doc["summary"]["advantage_cells"] > 0

    def test_kappa(self, tmp_path):
        code, out = run(["sweep", "kappa", "--kappas", "0.5,1.5", "--taus", "10", "--n-seeds", "2",
                         "--windows", "300"], tmp_path)
        assert code == 0
        doc = json.loads((out / "sweep_kappa.json").read_text())
        assert list(doc["summary"]["optimum_kappa"]) == ["10.0"]

    def test_flux_preset_slope(self, tmp_path):
        code, out = run(["sweep", "flux", "--n-seeds", "10", "--windows", "2000"], tmp_path)
        assert code == 0
        slopes = json.loads((out / "sweep_flux.json").read_text())["summary"]["slopes"]
        assert abs(slopes["bayes"] + 0.5) <= 0.1

    def test_duty(self, tmp_path):
        code, out = run(["sweep", "duty", "--duties", "0.02,0.2", "--set", "duration=20000",
                         "--set", "estimator=\"bayes\""], tmp_path)
        assert code == 0
        rows = json.loads((out / "sweep_duty.json").read_text())["rows"]
        assert [r["duty_cycle"] for r in rows] == [0.02, 0.2]

    def test_parallel_matches_serial(self, tmp_path):
        argv = ["sweep", "surface", "--taus", "10", "--mus", "2", "--n-seeds", "2", "--windows", "200"]
        _, a = run(argv + ["--jobs", "1"], tmp_path, "a")
        _, b = run(argv + ["--jobs", "2"], tmp_path, "b")
        assert (a / "sweep_surface.csv").read_bytes() == (b / "sweep_surface.csv").read_bytes()

    @pytest.mark.parametrize("argv", [
        ["sweep", "surface", "--taus", ""],
        ["sweep", "surface", "--taus", "1,x"],
        ["sweep", "kappa", "--kappas", "0,1"],
        ["sweep", "flux", "--fluxes", "2"],
        ["sweep", "surface", "--set", "noise.diffusion_coeff=0"],
    ])
    def test_bad_grids_exit_2(self, argv, tmp_path):
        code, _ = run(argv, tmp_path)
        assert code == 2


class TestCalibrate:
    def test_wiener_preset(self, tmp_path):
        code, out = run(["calibrate"], tmp_path)
        assert code == 0
        fit = json.loads((out / "calibration.json").read_text())["fit"]
        assert abs(fit["exponent"] - 0.5) <= 0.05

    def test_lab_preset(self, tmp_path):
        code, out = run(["calibrate", "--preset", "lab_0km"], tmp_path)
        assert code == 0
        fit = json.loads((out / "calibration.json").read_text())["fit"]
        assert abs(fit["exponent"] - 0.71) <= 0.05
        assert fit["coeff_deg"] == pytest.approx(0.15, rel=0.1)

    def write_series(self, path, phases, step=1.0, header="t_us,phase_rad"):
        lines = [header] + [f"{i * step!r},{float(p)!r}" for i, p in enumerate(phases)]
        path.write_text("\n".join(lines) + "\n")

    def test_input_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        phases = np.cumsum(rng.normal(0, np.sqrt(1e-3), 100_000))
        src = tmp_path / "phase.csv"
        self.write_series(src, phases)
        code, out = run(["calibrate", "--input", str(src)], tmp_path)
        assert code == 0
        doc = json.loads((out / "calibration.json").read_text())
        assert doc["source"]["samples"] == 100_000
        assert abs(doc["fit"]["exponent"] - 0.5) <= 0.05

    def test_malformed_line_reported(self, tmp_path, capsys):
        src = tmp_path / "bad.csv"
        src.write_text("t_us,phase_rad\n0,0.0\n1,0.1\n2,abc\n")
        code, _ = run(["calibrate", "--input", str(src)], tmp_path)
        assert code == 2
        assert "line 4" in capsys.readouterr().err

    def test_three_rows_rejected(self, tmp_path):
        src = tmp_path / "short.csv"
        self.write_series(src, [0.0, 0.1, 0.2])
        code, _ = run(["calibrate", "--input", str(src)], tmp_path)
        assert code == 2

    def test_input_and_preset_conflict(self, tmp_path):
        src = tmp_path / "x.csv"
        self.write_series(src, [0.0, 0.1, 0.2])
        code, _ = run(["calibrate", "--input", str(src), "--preset", "lab_0km"], tmp_path)
        assert code == 2

    def test_missing_file(self, tmp_path):
        code, _ = run(["calibrate", "--input", str(tmp_path / "none.csv")], tmp_path)
        assert code == 2

    def test_reader_checks(self, tmp_path):
        p = tmp_path / "a.csv"
        self.write_series(p, [0.0, 1.0], header="time,phase")
        with pytest.raises(InputError, match="line 1"):
            read_series_csv(p)
        p.write_text("# comment\nt_us [us],phase_rad [rad]\n0,1\n1,2\n3,3\n")
        with pytest.raises(InputError, match="uniformly spaced"):
            read_series_csv(p)
        p.write_text("t_us,phase_rad\n0,1\n1,2\n2,3\n")
        tr = read_series_csv(p)
        assert tr.step_size == 1.0 and list(tr.samples) == [0.0, 1.0, 2.0]

    def test_default_taus(self):
        taus = default_taus(1.0, 100_001)
        assert taus[0] == 10.0 and taus[-1] == 10_000.0 and len(taus) == 10
        assert default_taus(1.0, 5) == []


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bayesphase", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert __version__ in proc.stdout
