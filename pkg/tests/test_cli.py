import csv
import json
import subprocess
import sys

import pytest

from pvlab.cli import main
from pvlab.config import ConfigError, bundled_names, load_config, parse_config_text

SMALL = """
name = "{name}"
scenario = "{scenario}"
expect = "{expect}"
anchor = "test anchor"

[grid]
dim = 2
n = 16

[time]
T = 1.0
K = 20

[pde]
q = {q}

[trajectory]
{trajectory}
"""


def write_cfg(path, name="small", scenario="verify-deterministic", expect="critical", q=3.0,
              trajectory='source = "exact"\nfamily = "shear"', extra=""):
    p = path / f"{name}.toml"
    p.write_text(SMALL.format(name=name, scenario=scenario, expect=expect, q=q, trajectory=trajectory) + extra)
    return p


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 6 and len(bundled_names()) == len(lines)
    assert any(line.startswith("taylor-green-q2") for line in lines)


def test_every_bundled_scenario_parses_and_names_its_anchor():
    for name in bundled_names():
        cfg = load_config(name)
        assert cfg.name == name and cfg.anchor


def test_describe(capsys):
    assert main(["describe", "shear-q3"]) == 0
    out = capsys.readouterr().out
    assert "proof_form" in out and "'a': 1.0" in out and "q=3.0" in out


def test_describe_unknown(capsys):
    assert main(["describe", "bogus"]) == 2
    assert "bogus" in capsys.readouterr().err


@pytest.mark.parametrize(
    "text,needle",
    [
        ('name = "x"\nscenario = "solve"\n[grid\nn = 16\n', "line 3"),
        ('name = "x"\nscenario = "solve"\n[grid]\nnn = 16\n', "grid.nn"),
        ('name = "x"\nscenario = "solve"\n[time]\nK = "many"\n', "time.K"),
        ('name = "x"\nscenario = "verify-deterministic"\n[pde]\nq = 1.5\n', "pde.q"),
        ('name = "x"\nscenario = "verify-deterministic"\n[battery]\nprofiles = []\n', "battery.profiles"),
        ('name = "x"\nscenario = "verify-deterministic"\n[trajectory]\nsource = "file"\npath = "nowhere"\n',
         "trajectory.path"),
        ('name = "x"\nscenario = "wander"\n', "scenario"),
        ('scenario = "solve"\n', "name"),
    ],
)
def test_malformed_config_exit_2(tmp_path, capsys, text, needle):
    p = tmp_path / "bad.toml"
    p.write_text(text)
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and needle in err


def test_missing_config_exit_2(tmp_path):
    assert main(["run", str(tmp_path / "absent.toml")]) == 2


def test_parse_config_defaults():
    cfg = parse_config_text('name = "x"\nscenario = "verify-deterministic"\n')
    assert (cfg.dim, cfg.n, cfg.T, cfg.K, cfg.q) == (2, 64, 1.0, 200, 2.0)
    assert cfg.form.value == "proof_form" and cfg.profiles == [0, 1, 2, 3, 4] and cfg.delta == 1e-3
    with pytest.raises(ConfigError):
        parse_config_text('name = "x"\nscenario = "verify-stochastic"\n')


def test_run_small_verification(tmp_path):
    cfg = write_cfg(tmp_path, extra='\n[output]\ndump_trajectory = true\n')
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(out1)]) == 0
    assert main(["run", str(cfg), "--out", str(out2)]) == 0
    report = json.loads((out1 / "report.json").read_text())
    assert report["verdict"] == "critical" and report["exercises"] == "test anchor"
    assert report["anchor"] and report["form"] == "proof_form"
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
    rows = list(csv.reader(open(out1 / "timeseries.csv")))
    assert rows[0] == ["t", "energy_integrand", "residual_projected_l2", "residual_raw_l2"]
    assert len(rows) == 22 and rows[1][2] == "" and float(rows[2][2]) < 1e-6
    assert (out1 / "fields" / "u_first.pvl").exists() and (out1 / "trajectory" / "manifest.json").exists()


def test_verdict_mismatch_exit_1(tmp_path):
    cfg = write_cfg(tmp_path, expect="non-critical")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_numerical_failure_exit_3(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path, name="blowup", scenario="solve", expect="pass", q=2.0,
        trajectory='source = "solver"\ninitial = "taylor_green"\ndt = 0.05\nparams = { amplitude = 40.0 }',
    )
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "CFL" in capsys.readouterr().err


def test_solve_then_verify_from_file(tmp_path, capsys):
    solve = write_cfg(
        tmp_path, name="solve", scenario="solve", expect="pass", q=2.0,
        trajectory='source = "solver"\ninitial = "taylor_green"\ndt = 0.001',
    )
    assert main(["run", str(solve), "--out", str(tmp_path / "solve")]) == 0
    traj_dir = tmp_path / "solve" / "trajectory"
    assert (traj_dir / "manifest.json").exists()
    verify = write_cfg(tmp_path, name="verify", q=2.0, trajectory='source = "file"\npath = "solve/trajectory"')
    assert main(["run", str(verify), "--out", str(tmp_path / "verify")]) == 0
    capsys.readouterr()
    assert main(["dump-fields", str(traj_dir), "--csv", str(tmp_path / "csv")]) == 0
    out = capsys.readouterr().out
    assert "n=16" in out and out.count("\n") == 23
    assert (tmp_path / "csv" / "u_00020.csv").exists()


def test_dump_fields_bad_dir(tmp_path):
    assert main(["dump-fields", str(tmp_path)]) == 2


def test_flow_demo_small(tmp_path):
    cfg = write_cfg(tmp_path, name="demo", scenario="flow-demo", expect="pass", q=2.0,
                    trajectory='source = "exact"\nfamily = "taylor_green"', extra="\n[flow]\neps = 0.05\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["max_det_error"] < 1e-6 and rep["linearization_error"] < 1e-6


def test_stochastic_small(tmp_path):
    extra = "\n[stochastic]\nenabled = true\nsamples = 4\ndt = 0.01\nparticles = 4\n"
    cfg = write_cfg(tmp_path, name="sto", scenario="verify-stochastic", extra=extra)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["verdict"] == "critical" and rep["stochastic"]["samples"] == 4
    rows = list(csv.reader(open(tmp_path / "o" / "ensemble_summary.csv")))
    assert rows[0] == ["sample", "energy", "det_min", "det_max"] and len(rows) == 5


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "pvlab", "list-scenarios"], capture_output=True, text=True)
    assert r.returncode == 0 and "shear-q3" in r.stdout


@pytest.mark.parametrize("name,verdict", [("taylor-green-q2", "critical"), ("frozen-tg-noncritical", "non-critical")])
def test_bundled_verification_scenarios(tmp_path, name, verdict):
    assert main(["run", name, "--out", str(tmp_path / name)]) == 0
    rep = json.loads((tmp_path / name / "report.json").read_text())
    assert rep["verdict"] == verdict and rep["exercises"]
