import csv
import filecmp
import io
import os
import subprocess
import sys

import pytest

from gals_sim.cli import main

from conftest import config_path


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    rc = main(list(argv), out=out, err=err)
    return rc, out.getvalue(), err.getvalue()


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("GALS_SIM_OUT_DIR", raising=False)
    return tmp_path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- validate ------------------------------------------------------------------------

def test_validate_clean_config():
    rc, out, err = cli("validate", config_path("pipeline"))
    assert (rc, out.strip(), err) == (0, "0 warnings", "")


def test_validate_reports_bundling_slack():
    rc, out, _ = cli("validate", config_path("underdelayed"))
    assert rc == 0 and "slack -1000 ps" in out and out.strip().endswith("1 warnings")
    rc, _, err = cli("validate", "--strict", config_path("underdelayed"))
    assert rc == 1 and err.startswith("error[StrictValidation]")


def test_validate_undefined_gprm(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text(open(config_path("pipeline")).read().replace('to = "sink"', 'to = "snk"'))
    rc, out, err = cli("validate", str(bad))
    assert rc != 0 and out == ""
    assert err.count("\n") == 1 and "undefined GPRM 'snk'" in err and "link[3].to" in err


# -- run -------------------------------------------------------------------------------

def test_run_oscillator_counts_edges(workdir):
    rc, out, _ = cli("run", config_path("oscillator"), "--until", "100000ps")
    assert rc == 0 and "edges osc: 11" in out
    rows = read_csv(workdir / "out" / "oscillator" / "run" / "edges.csv")
    assert [int(r["time_ps"]) for r in rows] == list(range(0, 100_001, 10_000))


def test_run_pipeline_delivers_everything(workdir):
    rc, out, _ = cli("run", config_path("pipeline"))
    assert rc == 0 and "delivered: 100, violations: 0" in out and "note:" not in out
    d = workdir / "out" / "pipeline" / "run"
    assert {p.name for p in d.iterdir()} >= {"edges.csv", "tokens.csv", "registers.csv",
                                             "violations.csv", "throughput.csv"}
    end = int(out.split("end: ")[1].split()[0])
    rows = read_csv(d / "throughput.csv")
    starts = [int(r["window_start_ps"]) for r in rows] + [end + 1]
    total = sum(float(r["items_per_s"]) * (b - a) * 1e-12
                for r, a, b in zip(rows, starts, starts[1:]))
    assert total == pytest.approx(100)


def test_run_underdelayed_logs_violations(workdir):
    rc, out, _ = cli("run", config_path("underdelayed"))
    assert rc == 0 and "violations: 0" not in out
    rows = read_csv(workdir / "out" / "underdelayed" / "run" / "violations.csv")
    assert rows and {(r["kind"], r["value"]) for r in rows} == {("bundling", "-1000")}


def test_repeated_runs_are_byte_identical(workdir):
    for root in ("a", "b"):
        assert cli("--out-dir", root, "run", config_path("seqmachine"))[0] == 0
    cmp = filecmp.dircmp(workdir / "a" / "seqmachine" / "run", workdir / "b" / "seqmachine" / "run")
    assert cmp.left_list and not cmp.diff_files and not cmp.left_only and not cmp.right_only


def test_seed_flag_changes_spread_runs(workdir):
    cli("run", config_path("superpipe"), "--until", "5us", "--out-dir", "a")
    cli("--seed", "99", "run", config_path("superpipe"), "--until", "5us", "--out-dir", "b")
    assert not filecmp.cmp(workdir / "a/superpipe/run/edges.csv",
                           workdir / "b/superpipe/run/edges.csv", shallow=False)


def test_until_in_events(workdir):
    rc, out, _ = cli("run", config_path("oscillator"), "--until", "25ev")
    assert rc == 0 and "events: 25" in out


# -- spectrum ------------------------------------------------------------------------------

def test_spectrum_shows_a_reduction(workdir):
    rc, out, _ = cli("spectrum", config_path("superpipe"))
    assert rc == 0
    red = float(out.split("peak reduction:")[1].split()[0])
    assert red > 6.0
    d = workdir / "out" / "superpipe" / "spectrum"
    assert {p.name for p in d.iterdir()} == {"spectrum_fixed.csv", "spectrum_spread.csv",
                                             "reduction.csv"}
    assert float(read_csv(d / "reduction.csv")[0]["reduction_db"]) == pytest.approx(red, abs=0.01)


def test_spectrum_against_itself_is_zero():
    rc, out, _ = cli("spectrum", config_path("superpipe"), "--compare", "fixed,fixed")
    assert rc == 0 and "peak reduction: 0.00 dB" in out


def test_spectrum_needs_a_spread_policy():
    rc, out, err = cli("spectrum", config_path("pipeline"))
    assert rc != 0 and out == "" and err.count("\n") == 1
    assert err.startswith("error[ConfigError]") and "spread" in err


# -- thermal and resources ---------------------------------------------------------------------

def test_thermal_writes_series(workdir):
    rc, out, _ = cli("thermal", config_path("hotter"), "--until", "12ms")
    assert rc == 0 and "failure at 10ms" in out and "fixed-point residual" in out
    rows = read_csv(workdir / "out" / "hotter" / "thermal" / "thermal.csv")
    assert list(rows[0]) == ["time_ps", "temperature_c", "r_th", "edge_rate_per_s",
                             "items_per_s", "items_in_window"]
    assert int(rows[-1]["time_ps"]) == 12 * 10**9
    assert float(rows[-1]["r_th"]) == 2 * float(rows[0]["r_th"])


def test_thermal_needs_an_environment():
    rc, _, err = cli("thermal", config_path("pipeline"))
    assert rc != 0 and err.startswith("error[ConfigError]") and "environment" in err


def test_resources_table():
    rc, out, _ = cli("resources", config_path("fork"))
    assert rc == 0
    names = [line.split()[0] for line in out.splitlines()[2:-2]]
    assert names == ["src", "fork", "b1", "b2", "join", "sink"]
    assert out.splitlines()[-1].startswith("TOTAL")


# -- output location and failures ------------------------------------------------------------------

def test_output_root_from_environment(workdir, monkeypatch):
    monkeypatch.setenv("GALS_SIM_OUT_DIR", str(workdir / "env"))
    cli("run", config_path("oscillator"), "--until", "1ns")
    assert (workdir / "env" / "oscillator" / "run" / "edges.csv").exists()
    cli("run", config_path("oscillator"), "--until", "1ns", "--out-dir", "flag")
    assert (workdir / "flag" / "oscillator" / "run" / "edges.csv").exists()


@pytest.mark.parametrize("argv, code", [
    (["run", "/nonexistent/x.toml"], "ConfigError"),
    (["explode", "x.toml"], "UsageError"),
    ([], "UsageError"),
    (["run", "CONFIG", "--until", "soon"], "ConfigError"),
    (["spectrum", "CONFIG", "--compare", "fixed"], "ConfigError"),
    (["spectrum", "CONFIG", "--compare", "fixed,wobbly"], "ConfigError"),
    (["run", "CONFIG", "--seed", "abc"], "UsageError"),
])
def test_failures_print_one_error_line(argv, code, capsys):
    argv = [config_path("superpipe") if a == "CONFIG" else a for a in argv]
    rc, out, err = cli(*argv)
    assert rc != 0 and out == ""
    assert err.count("\n") == 1 and err.startswith(f"error[{code}]: ")
    assert capsys.readouterr().err == ""


def test_console_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "gals_sim.cli", "validate",
                           config_path("oscillator")], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "0 warnings"
    proc = subprocess.run([sys.executable, "-m", "gals_sim.cli", "run", "missing.toml"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stderr.startswith("error[ConfigError]")
    assert not os.path.exists(workdir / "out")
