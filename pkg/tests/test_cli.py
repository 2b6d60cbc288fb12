import subprocess
import sys
from importlib.resources import files

import yaml

from monoflow.cli import main

DATA = files("monoflow") / "data"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_steady_report(capsys):
    code, out, _ = run(capsys, "steady", "--network", DATA / "five_node.yaml", "--scenario", DATA / "five_node_base.yaml",
                       "--starts", 3)
    assert code == 0
    rep = yaml.safe_load(out)
    assert rep["uniqueness"]["unique"]
    assert abs(sum(rep["slack_injections"].values()) - 120.0) < 1e-6


def test_simulate_writes_outputs_deterministically(tmp_path, capsys):
    args = ["simulate", "--network", DATA / "single_pipe.yaml", "--scenario", DATA / "single_pipe_A300.yaml",
            "--epsilon", 5000, "--dt-out", 1800]
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b")[0] == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    summary = yaml.safe_load((tmp_path / "a" / "summary.yaml").read_text())
    assert summary["mass_audit"]["relative_drift"] < 1e-6
    assert len(a.splitlines()) == 1 + 86400 // 1800 + 1


def test_identical_scenarios_are_ordered(tmp_path, capsys):
    s = DATA / "single_pipe_A120.yaml"
    code, out, _ = run(capsys, "verify-monotone", "--network", DATA / "single_pipe.yaml", "--scenarios", s, s,
                       "--epsilon", 10000, "--out", tmp_path)
    assert code == 0
    rep = yaml.safe_load(out)
    assert rep["ordered"] and rep["worst_margin"] == 0.0
    assert (tmp_path / "margins.csv").exists()


def test_reversal_exits_with_violation(capsys):
    code, out, _ = run(capsys, "verify-monotone", "--network", DATA / "five_node.yaml", "--scenarios",
                       DATA / "five_node_reversal_1.yaml", DATA / "five_node_reversal_2.yaml", "--epsilon", 10000)
    assert code == 2
    rep = yaml.safe_load(out)
    assert rep["first_crossing"]["parent"] == "5"
    assert rep["first_crossing"]["classification"] == "parent-node"


def test_nmp_and_ablation_exit_codes(capsys):
    args = ["nmp", "--network", DATA / "five_node.yaml", "--scenario", DATA / "five_node_nmp_realized.yaml",
            "--envelope", DATA / "five_node_envelope.yaml", "--epsilon", 10000]
    code, out, _ = run(capsys, *args)
    assert code == 0
    assert [a["node"] for a in yaml.safe_load(out)["actions"]] == ["5"]
    assert run(capsys, *args, "--no-policy")[0] == 2


def test_robust_check(capsys):
    base = ["robust-check", "--network", DATA / "five_node.yaml", "--scenario", DATA / "five_node_base.yaml",
            "--epsilon", 10000]
    assert run(capsys, *base, "--envelope", DATA / "five_node_envelope.yaml")[0] == 0
    code, out, _ = run(capsys, *base, "--envelope", DATA / "five_node_deep_envelope.yaml")
    assert code == 2 and not yaml.safe_load(out)["feasible"]


def test_jacobian_check(capsys):
    code, out, _ = run(capsys, "jacobian-check", "--network", DATA / "five_node.yaml", "--scenario",
                       DATA / "five_node_base.yaml", "--samples", 4)
    assert code == 0 and yaml.safe_load(out)["ok"]


def test_errors_exit_one(tmp_path, capsys):
    code, _, err = run(capsys, "steady", "--network", tmp_path / "missing.yaml", "--scenario", tmp_path / "x.yaml")
    assert code == 1 and err.startswith("error [parse_error]")
    (tmp_path / "bad.yaml").write_text("horizon: 60\ninjections: {\"2\": {kind: wobble}}\n")
    code, _, err = run(capsys, "simulate", "--network", DATA / "single_pipe.yaml", "--scenario", tmp_path / "bad.yaml")
    assert code == 1 and "error [" in err
    assert run(capsys, "simulate", "--network", DATA / "single_pipe.yaml")[0] == 1
    assert run(capsys, "simulate", "--network", DATA / "single_pipe.yaml", "--scenario",
               DATA / "single_pipe_A120.yaml", "--rtol", -1)[0] == 1


def test_fixtures_command_reproduces_bundled_files(tmp_path, capsys):
    code, out, _ = run(capsys, "fixtures", "--out", tmp_path)
    assert code == 0
    written = yaml.safe_load(out)["written"]
    assert len(written) == 13
    for p in written:
        name = p.rsplit("/", 1)[-1]
        assert (tmp_path / name).read_text() == (DATA / name).read_text()


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "monoflow", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("steady", "simulate", "verify-monotone", "jacobian-check", "robust-check", "nmp"):
        assert cmd in res.stdout


def test_usage_errors_are_not_violations(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["simulate", "--scheme", "upwind"]) == 1
    assert main(["--help"]) == 0
    capsys.readouterr()
