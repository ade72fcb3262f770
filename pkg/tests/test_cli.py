import csv
import json
import subprocess
import sys

import pytest

from ls2d.cli import main, read_config
from ls2d.driver import read_field_csv


def test_solve_prints_summary_and_writes_csv(tmp_path, capsys):
    out = tmp_path / "u.csv"
    code = main(["solve", "--problem", "gaussian", "--kappa", "10", "--level", "3",
                 "--domain", "0,0,1", "--solver", "dense", "--eval", "0.5,0",
                 "--eval", "0,0.25", "--out", str(out), "--timing"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["N"] == 1024 and len(summary["eval"]) == 2
    assert "t_tree" in summary
    assert read_field_csv(out).shape == (2, 6)


def test_grid_output_and_custom_expression(tmp_path, capsys):
    out = tmp_path / "g.csv"
    code = main(["solve", "--problem", "custom", "--q-expr", "0*x", "--kappa", "3",
                 "--grid", "3,2", "--out", str(out)])
    assert code == 0
    assert "t_tree" not in json.loads(capsys.readouterr().out)
    assert read_field_csv(out).shape == (6, 6)


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small gaussian run\nproblem = gaussian\nkappa = 10\nlevel = 3\n"
                   "domain = 0,0,1\nsolver = dense\neval = 0.5,0\neval = 0.1,0.1\n")
    assert read_config(cfg)["eval"] == ["0.5,0", "0.1,0.1"]
    assert main(["solve", "--config", str(cfg), "--level", "2"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["N"] == 256 and len(summary["eval"]) == 2


@pytest.mark.parametrize("argv", [
    ["solve", "--problem", "custom"],
    ["solve", "--domain", "0,0"],
    ["solve", "--problem", "gaussian", "--kappa", "40", "--level", "2"],
    ["solve", "--problem", "custom", "--q-expr", "__import__('os')"],
    ["study", "--problem", "gaussian", "--eval", "0,0"],
    ["study", "--problem", "gaussian", "--ladder", "level:3", "--domain", "0,0,1"],
    ["study", "--ladder", "size:3", "--eval", "0,0"],
    ["tables", "--p", "6"],
])
def test_configuration_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "configuration error" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("wavenumber = 3\n")
    assert main(["solve", "--config", str(cfg)]) == 2


def test_numerical_refusal_exits_3(capsys):
    code = main(["solve", "--problem", "gaussian", "--kappa", "10", "--level", "6",
                 "--domain", "0,0,1", "--solver", "dense"])
    assert code == 3
    assert "numerical refusal" in capsys.readouterr().err


def test_study_command(tmp_path, capsys):
    out = tmp_path / "study.csv"
    code = main(["study", "--problem", "gaussian", "--kappa", "10", "--domain", "0,0,1",
                 "--ladder", "level:2,3", "--eval", "0.5,0", "--hodlr-tol", "1e-10",
                 "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "radial" in text and "observed order" in text
    with out.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["level", "N", "err(0.5,0)", "time_s"] and len(rows) == 3


def test_tables_command(tmp_path, capsys):
    assert main(["tables", "--table-cache", str(tmp_path), "--pmax", "10"]) == 0
    assert len(list(tmp_path.glob("lstab_p4_pmax10_*.bin"))) == 6


def test_console_script_argparse_error():
    proc = subprocess.run([sys.executable, "-m", "ls2d.cli", "solve", "--kappa", "abc"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
