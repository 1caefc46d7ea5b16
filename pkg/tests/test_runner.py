"""Run directories, config round-trips, and the command-line surface.

Proves:
  1.  serialize/parse is the identity on every preset and on overridden
      configs, including None sentinels and tuple-valued fields
  2.  unknown keys, bad enum values and malformed numbers raise ConfigError
  3.  run() writes the documented file set; norms.csv respects the decay
      bound row by row; load_trace round-trips the arrays bit for bit
  4.  two runs of the same config produce byte-identical files
  5.  compare_runs of a directory against itself is exactly zero
  6.  certify() reports the failing curvature margin without raising
  7.  the CLI returns 0 on clean runs, 2 on usage errors, and prints one
      status line per law
"""

import os
import subprocess

import numpy as np
import pytest

from vslcontrol import cli, runner
from vslcontrol.config import (ConfigError, PRESETS, RunConfig, load_config,
                               parse_config, preset, save_config,
                               serialize_config, with_overrides)

# short horizons need a looser terminal u-gap than the presets' long-run targets
QUICK = dict(n_cells=60, horizon=3.0, snapshots=7,
             free_u_gap_tol=0.2, fixed_u_gap_tol=0.2)


@pytest.fixture(scope="module")
def quick_free(tmp_path_factory):
    cfg = with_overrides(preset("paper-sec5-free"), **QUICK)
    out = str(tmp_path_factory.mktemp("free"))
    return runner.run(cfg, out), cfg


@pytest.fixture(scope="module")
def quick_fixed(tmp_path_factory):
    cfg = with_overrides(preset("paper-sec5-fixed"), **QUICK,
                         oracle_enabled=True, oracle_n_cells=60)
    out = str(tmp_path_factory.mktemp("fixed"))
    return runner.run(cfg, out), cfg


class TestConfigRoundTrip:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets(self, name):
        cfg = preset(name)
        assert parse_config(serialize_config(cfg)) == cfg

    def test_none_and_tuple_fields(self):
        cfg = with_overrides(RunConfig(), picard_window=0.5, oracle_dt=0.001,
                             profile_kind="polynomial",
                             poly_coeffs=(0.7, 0.0, 1.5e-3))
        assert parse_config(serialize_config(cfg)) == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = preset("paper-fig7")
        p = str(tmp_path / "run.ini")
        save_config(cfg, p)
        assert load_config(p) == cfg

    def test_unknown_key_rejected(self):
        text = serialize_config(RunConfig()) + "\n[controller]\nturbo = yes\n"
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(serialize_config(RunConfig()) + "\n[extras]\nx = 1\n")

    def test_malformed_number_rejected(self):
        text = serialize_config(RunConfig()).replace("sigma = 0.12", "sigma = fast")
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_bad_enum_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(law="open_loop")
        with pytest.raises(ConfigError):
            RunConfig(profile_kind="sawtooth")

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            preset("paper-sec6")


class TestRunDirectory:
    def test_file_set(self, quick_free):
        res, _ = quick_free
        law_dir = res.law("free_inlet").directory
        assert os.path.isfile(os.path.join(res.directory, "config.ini"))
        for name in ("density.csv", "control.csv", "limits.csv", "norms.csv",
                     "flows.csv", "bottleneck.csv", "metadata.json", "report.txt"):
            assert os.path.isfile(os.path.join(law_dir, name)), name

    def test_fixed_law_has_no_bottleneck_file(self, quick_fixed):
        res, _ = quick_fixed
        law_dir = res.law("fixed_inlet").directory
        assert not os.path.exists(os.path.join(law_dir, "bottleneck.csv"))
        assert os.path.isdir(os.path.join(law_dir, "oracle"))

    def test_all_checks_pass(self, quick_free, quick_fixed):
        for res, _ in (quick_free, quick_fixed):
            assert res.exit_code == 0
            for law in res.laws:
                assert law.passed, [c.name for c in law.checks if not c.passed]

    def test_norms_bound_row_by_row(self, quick_free):
        res, _ = quick_free
        path = os.path.join(res.law("free_inlet").directory, "norms.csv")
        rows = np.loadtxt(path, delimiter=",", skiprows=1)
        assert np.all(rows[:, 1] <= rows[:, 2] + 1e-12)

    def test_load_trace_round_trips_bitwise(self, quick_free):
        res, _ = quick_free
        law = res.law("free_inlet")
        loaded = runner.load_trace(law.directory)
        np.testing.assert_array_equal(loaded.rho, law.trace.rho)
        np.testing.assert_array_equal(loaded.u, law.trace.u)
        np.testing.assert_array_equal(loaded.times, law.trace.times)
        assert loaded.metadata["law"] == "free_inlet"

    def test_oracle_gap_recorded(self, quick_fixed):
        res, cfg = quick_fixed
        law = res.law("fixed_inlet")
        assert law.oracle_gap is not None
        gaps = os.path.join(law.directory, "oracle", "gaps.csv")
        assert os.path.isfile(gaps)
        assert law.oracle_gap < 5e-3

    def test_report_mentions_certification(self, quick_fixed):
        res, _ = quick_fixed
        text = open(os.path.join(res.law("fixed_inlet").directory,
                                 "report.txt")).read()
        assert "curvature_margin" in text
        assert "FAIL" in text
        assert "decay_rate_bound" in text

    def test_determinism(self, tmp_path):
        cfg = with_overrides(preset("paper-sec5-free"), **QUICK)
        a = runner.run(cfg, str(tmp_path / "a"))
        b = runner.run(cfg, str(tmp_path / "b"))
        for name in ("density.csv", "control.csv", "norms.csv"):
            fa = open(os.path.join(a.law("free_inlet").directory, name), "rb").read()
            fb = open(os.path.join(b.law("free_inlet").directory, name), "rb").read()
            assert fa == fb, name

    def test_compare_runs_self_is_zero(self, quick_free):
        res, _ = quick_free
        d = res.law("free_inlet").directory
        cmp = runner.compare_runs(d, d)
        assert cmp.max_density_gap == 0.0
        assert cmp.max_control_gap == 0.0

    def test_both_laws_in_one_run(self, tmp_path):
        cfg = with_overrides(preset("paper-sec5-free"), **QUICK, law="both",
                             mode="override")
        res = runner.run(cfg, str(tmp_path / "both"))
        assert {lr.law for lr in res.laws} == {"free_inlet", "fixed_inlet"}
        assert res.exit_code == 0


class TestCertify:
    def test_reports_failure_without_raising(self):
        text = runner.certify(preset("paper-sec5-fixed"))
        assert "curvature_margin" in text and "FAIL" in text

    def test_free_law_reports_gain_window(self):
        text = runner.certify(preset("paper-sec5-free"))
        assert "gain" in text
        assert "1.42857" in text  # 1/(L rho_star)


class TestCli:
    def test_run_returns_zero(self, tmp_path, capsys):
        rc = cli.main(["run", "--preset", "paper-sec5-free", "--out",
                       str(tmp_path / "o")])
        out = capsys.readouterr().out
        assert rc == 0
        assert "free_inlet: ok" in out

    def test_certify_prints_conditions(self, capsys):
        rc = cli.main(["certify", "--preset", "paper-sec5-fixed"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "curvature_margin" in out

    def test_config_file_input(self, tmp_path, capsys):
        cfg = with_overrides(preset("paper-sec5-free"), **QUICK)
        p = str(tmp_path / "c.ini")
        save_config(cfg, p)
        rc = cli.main(["run", "--config", p, "--out", str(tmp_path / "o")])
        assert rc == 0

    def test_compare_command(self, tmp_path, capsys):
        cfg = with_overrides(preset("paper-sec5-free"), **QUICK)
        res = runner.run(cfg, str(tmp_path / "o"))
        d = res.law("free_inlet").directory
        rc = cli.main(["compare", d, d])
        out = capsys.readouterr().out
        assert rc == 0
        assert "0" in out

    def test_unknown_preset_is_a_usage_error(self, capsys):
        rc = cli.main(["run", "--preset", "nope", "--out", "unused"])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2

    def test_strict_override_flags_are_exclusive(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["certify", "--preset", "paper-sec5-fixed",
                      "--strict", "--override"])
        assert exc.value.code == 2

    def test_console_script_entry_point(self, tmp_path):
        proc = subprocess.run(
            ["vslcontrol", "certify", "--preset", "paper-sec5-free"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "gain" in proc.stdout
