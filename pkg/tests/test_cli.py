import csv
import json
import subprocess
import sys

import pytest

from poltrans.cli import ConfigError, load_config, run

SMALL = """\
[grid]
n_radial = 12
n_angular = 16
kappa_max = 0.4
[kernel]
n_radial = 48
n_angular = 96
[evolve]
z_end = 1.0
snapshots = [0.0, 1.0]
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL)
    return path


def test_unknown_key_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[grid]\nn_radial = 12\nbogus = 3\n")
    assert run(["kernel", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "bogus" in err and "line 3" in err


def test_type_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[grid]\nn_radial = \"many\"\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(str(path))


def test_unknown_section(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("seed = 1\n[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(str(path))


def test_defaults_without_config():
    cfg = load_config(None)
    assert cfg["medium"]["model"] == "gaussian"


def test_output_dir_precedence(small, tmp_path, monkeypatch):
    env_dir = tmp_path / "env"
    flag_dir = tmp_path / "flag"
    monkeypatch.setenv("POLTRANS_OUT_DIR", str(env_dir))
    assert run(["mfp", "--config", str(small)]) == 0
    assert (env_dir / "mfp.csv").exists()
    assert run(["mfp", "--config", str(small), "--out", str(flag_dir)]) == 0
    assert (flag_dir / "mfp.csv").exists()
    monkeypatch.delenv("POLTRANS_OUT_DIR")
    small.write_text(SMALL + f"[output]\ndir = \"{(tmp_path / 'cfg').as_posix()}\"\n")
    assert run(["mfp", "--config", str(small)]) == 0
    assert (tmp_path / "cfg" / "mfp.csv").exists()


def test_kernel_outputs(small, tmp_path):
    out = tmp_path / "k"
    assert run(["kernel", "--config", str(small), "--out", str(out)]) == 0
    with open(out / "kernel.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12 * 16
    assert float(rows[0]["ReQ11"]) < 0 and float(rows[0]["mfp_tm"]) > 0
    summary = json.loads((out / "kernel_summary.json").read_text())
    assert summary["passed"] and summary["subcommand"] == "kernel"


def test_evolve_outputs(small, tmp_path):
    out = tmp_path / "e"
    assert run(["evolve", "--config", str(small), "--out", str(out)]) == 0
    assert (out / "snapshot_00.csv").exists() and (out / "snapshot_01.csv").exists()
    summary = json.loads((out / "evolve_summary.json").read_text())
    assert summary["energy_drift"] < 1e-10


def test_failed_check_exits_2(small, tmp_path):
    small.write_text(SMALL + "drift_tol = 1e-20\n")
    out = tmp_path / "f"
    assert run(["evolve", "--config", str(small), "--out", str(out)]) == 2
    summary = json.loads((out / "evolve_summary.json").read_text())
    assert summary["passed"] is False


def test_console_entry_point(small, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "poltrans.cli", "mfp", "--config", str(small),
                           "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
