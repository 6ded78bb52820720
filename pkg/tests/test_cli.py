import json

import pytest

from berryfact.cli import build_parser, main

TINY = """
[electron_grid]
extent = 6.0
points = 15
[nuclear_grid]
extent = 3.0
points = 13
[solver]
k = 12
seed = 3
[run]
n_states = 3
"""


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_parser_rejects_bad_preset(tmp_path):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bo-scan", "--config", "c", "--preset", "huge"])


def test_bo_scan_end_to_end(tmp_path, capsys):
    cfgfile = tmp_path / "run.ini"
    cfgfile.write_text(TINY)
    out = tmp_path / "out"
    rc = main(["bo-scan", "--config", str(cfgfile), "--out", str(out)])
    assert rc == 0
    captured = capsys.readouterr()
    assert "min_gap" in captured.out
    data = json.loads((out / "manifest.json").read_text())
    assert data["command"] == "bo-scan"


def test_missing_config_file_exits_2(tmp_path):
    rc = main(["bo-scan", "--config", str(tmp_path / "nope.ini")])
    assert rc == 2


def test_bad_config_exits_2(tmp_path):
    cfgfile = tmp_path / "bad.ini"
    cfgfile.write_text("[model]\nzeta = 1\n")
    rc = main(["bo-scan", "--config", str(cfgfile)])
    assert rc == 2


def test_solver_failure_exits_3(tmp_path):
    cfgfile = tmp_path / "hard.ini"
    cfgfile.write_text(TINY + "\n[solver]\nk = 12\nseed = 3\ntol = 1e-15\nmax_iter = 1\n")
    # rewrite: configparser forbids duplicate sections, craft directly
    cfgfile.write_text(TINY.replace("k = 12", "k = 12\ntol = 1e-15\nmax_iter = 1"))
    rc = main(["bo-scan", "--config", str(cfgfile), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_threads_flag_overrides(tmp_path):
    cfgfile = tmp_path / "run.ini"
    cfgfile.write_text(TINY)
    out = tmp_path / "out2"
    rc = main(["bo-scan", "--config", str(cfgfile), "--out", str(out), "--threads", "2"])
    assert rc == 0
