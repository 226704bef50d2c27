import csv
import subprocess
import sys

import pytest

from chlimit import cli, solver
from chlimit.cli import ConfigError, main, parse_config

SOLVE = """\
command: solve
scenario: {id: S1}
mesh: {n_cells: 8}
time: {tau: 1.0e-2, T: 0.05}
sweep: {eps: 0.1, lambda: 0.01}
"""

# large kappa leaves the asymptotic regime; measured slope about 0.67 < 1.8
BROKEN_KAPPA = """\
command: sweep-kappa
scenario: {id: S1}
mesh: {n_cells: 16}
time: {tau: 1.0e-2, T: 0.1}
sweep:
  kappa_list: [20, 10, 5, 2.5]
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_minimal_solve():
    cfg = parse_config(SOLVE)
    assert cfg.command == "solve" and cfg.scenario == "S1"
    assert (cfg.n_cells, cfg.tau, cfg.T, cfg.eps, cfg.lam) == (8, 1e-2, 0.05, 0.1, 0.01)
    assert cfg.scheme == "ch" and cfg.seed == 0


def test_parse_increasing_list_names_field():
    text = "command: sweep-eps\nscenario: {id: S1}\nsweep:\n  eps_list: \"0.1,0.2\"\n"
    with pytest.raises(ConfigError, match=r"line 4: sweep\.eps_list must be strictly decreasing"):
        parse_config(text)


def test_parse_missing_scenario_lists_ids():
    with pytest.raises(ConfigError, match="available: S1, S2, S3, S4, S5"):
        parse_config("command: solve\nsweep: {eps: 0.1, lambda: 0.1}\n")
    with pytest.raises(ConfigError, match="available: S1, S2, S3, S4, S5"):
        parse_config("command: solve\nscenario: {id: S7}\n")


@pytest.mark.parametrize("text, pattern", [
    ("command: solve\nscenario: {id: S1}\nmesh: {cells: 4}\n", r"line 3: unknown key 'mesh.cells'"),
    ("command: solve\nfoo: 1\n", "unknown key 'foo'"),
    ("command: solve\nscenario: {id: S1}\nmesh: {n_cells: 4.5}\n", "must be an integer"),
    ("command: solve\nscenario: {id: S1}\ntime: {tau: abc}\n", "must be a number"),
    ("command: solve\nscenario: {id: S1}\ntime: {tau: -1}\n", "must be positive"),
    ("command: solve\nscenario: {id: S1}\ntime: {tau: 0.03, T: 0.1}\n", "time.tau"),
    ("command: solve\nscenario: {id: S1}\n", "needs sweep.eps"),
    ("command: fly\nscenario: {id: S1}\n", "must be one of"),
    ("scenario: {id: S1}\n", "command is required"),
    ("command: sweep-eps\nscenario: {id: S1}\nsweep: {eps_list: [0.1, 0.01]}\n", "at least 3"),
    ("command: solve\nscenario: {id: S1}\ngraph: {id: hele_shaw}\nsweep: {eps: 0.1, lambda: 0.1}\n", "graph"),
    ("command: solve\nscenario: {id: S1}\nsweep: {eps: 2.0, lambda: 0.1}\n", r"\(0, 1\]"),
    ("[1, 2]\n", "mapping"),
    ("", "empty"),
    ("command: [solve\n", "not valid YAML"),
])
def test_parse_rejects(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_parse_command_override_and_lists():
    cfg = parse_config("command: solve\nscenario: {id: S2}\nsweep: {eps_list: '0.1, 0.01, 0.001'}\n",
                       command="sweep-eps")
    assert cfg.command == "sweep-eps" and cfg.eps_list == [0.1, 0.01, 0.001]


def test_solve_exit_zero(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    assert main([write(tmp_path, SOLVE), "--out", str(out)]) == cli.EXIT_OK
    rows = list(csv.reader(out.open()))
    assert tuple(rows[0]) == solver.TRAJECTORY_HEADER
    assert len(rows) == 1 + 6 * 9
    assert "solve S1" in capsys.readouterr().out


def test_default_output_path(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main([write(tmp_path, SOLVE)]) == 0
    assert (tmp_path / "solve.csv").exists()
    assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]


def test_config_errors_exit_one(tmp_path, capsys):
    assert main([str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    assert main([write(tmp_path, "command: solve\nscenario: {id: S9}\n")]) == cli.EXIT_CONFIG
    assert main([write(tmp_path, SOLVE), "--jobs", "0"]) == cli.EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_solver_failure_exit_two(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise solver.SolverError("injected")

    monkeypatch.setattr(cli.experiments, "run_ch", boom)
    assert main([write(tmp_path, SOLVE), "--out", str(tmp_path / "x.csv")]) == cli.EXIT_SOLVER
    assert not (tmp_path / "x.csv").exists()


def test_sweep_kappa_assert_exit_three(tmp_path, capsys):
    path = write(tmp_path, BROKEN_KAPPA)
    out = str(tmp_path / "k.csv")
    assert main([path, "--out", out]) == cli.EXIT_OK
    assert main([path, "--assert", "--out", out]) == cli.EXIT_THRESHOLD
    assert "FAIL" in capsys.readouterr().out


def test_sweep_kappa_assert_pass(tmp_path):
    text = BROKEN_KAPPA.replace("[20, 10, 5, 2.5]", "[0.2, 0.1, 0.05]")
    assert main([write(tmp_path, text), "--assert", "--out", str(tmp_path / "k.csv")]) == cli.EXIT_OK


def test_graph_table_identity(tmp_path, capsys):
    text = "command: graph-table\ngraph: {ids: [identity], r_values: [2.0]}\nsweep: {lambda: 1.0}\n"
    out = tmp_path / "g.csv"
    assert main([write(tmp_path, text), "--out", str(out)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[1].split()[:3] == ["identity", "2", "1"]
    rows = list(csv.reader(out.open()))
    assert tuple(rows[0]) == cli.GRAPH_TABLE_HEADER
    assert float(rows[1][3]) == 1.0 and float(rows[1][4]) == 1.0


def test_positional_command_overrides(tmp_path):
    text = SOLVE + "graph: {ids: [cubic]}\n"
    out = tmp_path / "g.csv"
    text = text.replace("sweep: {eps: 0.1, lambda: 0.01}", "sweep: {eps: 0.1, lambda: 0.5}")
    assert main([write(tmp_path, text), "graph-table", "--out", str(out)]) == 0
    assert out.read_text().startswith(",".join(cli.GRAPH_TABLE_HEADER))


@pytest.mark.parametrize("command, extra", [
    ("sweep-eps", "sweep: {eps_list: [0.1, 0.01, 0.001]}\n"),
    ("sweep-lambda", "sweep: {eps: 0.1, lambda_list: [0.1, 0.01, 0.001]}\n"),
    ("audit", "sweep: {eps_list: [0.1, 0.01], lambda_list: [0.1, 0.01]}\n"),
    ("uniqueness", "sweep: {eps: 0.1, lambda_list: [0.01, 0.001], lambda_list_b: [0.003, 0.0003]}\n"),
])
def test_commands_byte_identical(tmp_path, command, extra):
    text = f"command: {command}\nscenario: {{id: S3}}\nmesh: {{n_cells: 16}}\ntime: {{tau: 1.0e-2, T: 0.1}}\n" + extra
    cfg = write(tmp_path, text)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main([cfg, "--out", str(a)]) == 0
    assert main([cfg, "--out", str(b), "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.csv"
    res = subprocess.run([sys.executable, "-m", "chlimit", write(tmp_path, SOLVE), "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and out.exists()
    res = subprocess.run([sys.executable, "-m", "chlimit", str(tmp_path / "nope.yaml")],
                         capture_output=True, text=True)
    assert res.returncode == 1
