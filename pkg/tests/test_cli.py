import json
import subprocess
import sys

import pytest

from faultyoracle.cli import main
from faultyoracle.experiments import CSV_COLUMNS, TRAJECTORY_COLUMNS

SMALL = ["--n-values", "16,32,64", "--gamma", "1.0", "--threshold-p", "0.4"]


def test_simulate(tmp_path):
    out = tmp_path / "traj.csv"
    assert main(["simulate", "--n-values", "8", "--gamma", "0.5", "--t-max", "2",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_COLUMNS)


def test_sweep_then_fit(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", *SMALL, "--out", str(out)]) == 0
    assert "fitted exponent" in capsys.readouterr().err
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 4
    assert main(["fit", "--input", str(out)]) == 0
    assert capsys.readouterr().out.startswith("exponent ")


def test_sweep_is_byte_stable_across_jobs(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["sweep", *SMALL, "--format", "json", "--out", str(a)]) == 0
    assert main(["sweep", *SMALL, "--format", "json", "--jobs", "1", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    c, d = tmp_path / "c.csv", tmp_path / "d.csv"
    main(["sweep", *SMALL, "--out", str(c)])
    main(["sweep", *SMALL, "--jobs", "2", "--out", str(d)])
    assert c.read_bytes() == d.read_bytes()


def test_config_then_flag_precedence(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('n-values = [16, 32, 64]\ngamma = 1.0\nthreshold_p = 0.4\nformat = "json"\n')
    out = tmp_path / "r.json"
    assert main(["sweep", "--config", str(cfg), "--n-values", "64,128,256", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert [r["N"] for r in data["rows"]] == [64, 128, 256]
    assert data["spec"]["p"] == 0.4


@pytest.mark.parametrize("text", ['bogus = 1\n', 'gamma = [\n'])
def test_bad_config(tmp_path, text, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(text)
    assert main(["sweep", "--config", str(cfg)]) == 1
    assert str(cfg) in capsys.readouterr().err


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--criterion", "nope"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1
    assert main(["sweep", "--gamma", "1,2"]) == 1
    assert main(["fit"]) == 1


def test_verify_bounds_grid(tmp_path, capsys):
    assert main(["verify-bounds", "--n-values", "64,128,256", "--gamma", "0.1,1",
                 "--energy", "1", "--threshold-p", "0.72,0.9"]) == 0
    err = capsys.readouterr().err
    assert "0 violations" in err


def test_verify_bounds_detects_falsified_row(tmp_path, capsys):
    path = tmp_path / "rows.csv"
    path.write_text(",".join(CSV_COLUMNS) + "\n"
                    "100,1.0,1.0,0.8,trace-distance,5.0,11.2,true,\n")
    assert main(["verify-bounds", "--input", str(path)]) == 2
    assert "VIOLATED" in capsys.readouterr().out


def test_verify_bounds_empty_input(tmp_path, capsys):
    path = tmp_path / "rows.csv"
    path.write_text(",".join(CSV_COLUMNS) + "\n")
    assert main(["verify-bounds", "--input", str(path)]) == 1
    assert "no rows" in capsys.readouterr().err


def test_missing_input_file(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "nope.csv")]) == 1


def test_numerical_failure_exit_code():
    assert main(["sweep", "--n-values", "4,8,16", "--engine", "full", "--dt", "50", "--t-max", "100",
                 "--gamma", "1"]) == 3


def test_unravel(tmp_path):
    out = tmp_path / "u.json"
    assert main(["unravel", "--gamma", "0.5", "--trajectories", "500", "--t-max", "2",
                 "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["gamma"] == pytest.approx(0.5) and data["N"] == 2
    assert data["decay_rate_lindblad"] == pytest.approx(0.5, rel=1e-6)


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "faultyoracle.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("simulate", "sweep", "verify-bounds", "unravel", "fit"):
        assert command in proc.stdout
