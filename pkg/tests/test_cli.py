import json
import subprocess
import sys

import numpy as np
import pytest

from latticehom import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out


def manifest(text):
    return json.loads(text)


def test_homogenize_constant_exact(capsys, tmp_path):
    code, out = run(["homogenize", "--law", "constant:2.5", "--L", "8", "--out", str(tmp_path)], capsys)
    assert code == 0
    m = manifest(out.out)
    assert m["results"]["a_h"]["0"] == [2.5, 2.5]
    assert json.loads((tmp_path / "manifest.json").read_text()) == m
    lines = (tmp_path / "a_h.csv").read_text().splitlines()
    prov = json.loads(lines[0][2:])
    assert prov["command"] == "homogenize" and prov["config_hash"] == m["config_hash"]
    assert lines[1] == "seed,a_11,a_22"


def test_identity_check_layered(capsys):
    code, out = run(["identity-check", "--law", "layered:1,4", "--R", "16"], capsys)
    assert code == 0
    assert manifest(out.out)["results"]["residual"] <= 1e-8


def test_sigma_writes_arrays(capsys, tmp_path):
    code, _ = run(["sigma", "--law", "two_point:2", "--L", "12", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert np.load(tmp_path / "sigma.npy").shape == (2, 2, 2, 12, 12)
    assert np.load(tmp_path / "phi.npy").shape == (2, 12, 12)


@pytest.mark.parametrize("argv", [
    ["homogenize", "--L", "0"],
    ["homogenize", "--tol", "-1"],
    ["homogenize", "--p", "1"],
    ["homogenize", "--law", "nonsense:1"],
    ["frobnicate"],
    ["homogenize", "--R", "x"],
])
def test_invalid_configuration_exit_2(argv, capsys):
    code, _ = run(argv, capsys)
    assert code == 2


def test_config_file_and_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"law": "constant:3", "L": 6, "seeds": 2}))
    code, out = run(["homogenize", "--config", str(cfg)], capsys)
    assert code == 0
    m = manifest(out.out)
    assert m["config"]["L"] == 6 and set(m["results"]["a_h"]) == {"0", "1"}
    assert m["results"]["mean_diagonal"] == [3.0, 3.0]
    code, out = run(["homogenize", "--config", str(cfg), "--law", "constant:1.5"], capsys)
    assert manifest(out.out)["results"]["mean_diagonal"] == [1.5, 1.5]
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["homogenize", "--config", str(cfg)], capsys)[0] == 2
    assert run(["homogenize", "--config", str(tmp_path / "missing.json")], capsys)[0] == 2


def test_config_hash_deterministic(capsys):
    a = manifest(run(["homogenize", "--law", "constant:1", "--L", "4"], capsys)[1].out)
    b = manifest(run(["homogenize", "--law", "constant:1", "--L", "4", "--verbose"], capsys)[1].out)
    c = manifest(run(["homogenize", "--law", "constant:1", "--L", "6"], capsys)[1].out)
    assert a["config_hash"] == b["config_hash"] != c["config_hash"]
    assert len(a["config_hash"]) == 16


def test_environment_roundtrip(tmp_path, capsys):
    path = str(tmp_path / "env.npy")
    a = manifest(run(["homogenize", "--law", "lognormal:0,1", "--L", "10", "--env-out", path], capsys)[1].out)
    b = manifest(run(["homogenize", "--L", "10", "--env-in", path, "--law", "constant:1"], capsys)[1].out)
    assert a["results"]["a_h"]["0"] == b["results"]["a_h"]["0"]
    assert run(["homogenize", "--L", "12", "--env-in", path], capsys)[0] == 2


def test_excess_decay_and_liouville(tmp_path, capsys):
    code, out = run(["excess-decay", "--law", "layered:1,4", "--R", "8", "--radii", "2,4", "--seeds", "2",
                     "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "excess_decay.csv").read_text().startswith("# {")
    code, out = run(["liouville-dim", "--law", "constant:1", "--L", "24", "--samples", "3"], capsys)
    assert code == 0 and manifest(out.out)["results"]["rank"] == 3


def test_walk_command(capsys):
    code, out = run(["walk", "--law", "constant:1", "--L", "16", "--T", "5", "--paths", "2000"], capsys)
    assert code == 0
    cov = np.array(manifest(out.out)["results"]["covariance"])
    assert cov.shape == (2, 2)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "latticehom", "homogenize", "--law", "constant:2", "--L", "4"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["results"]["mean_diagonal"] == [2.0, 2.0]
