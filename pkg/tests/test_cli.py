import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from gwtails.cli import cli, parse_x_range


@pytest.fixture
def models(tmp_path):
    files = {
        "geo": 'offspring = { geometric = 0.5, atoms = 48 }\n',
        "test": 'offspring = [0.5, 0.5]\nimmigration = [1.0]\n',
        "plain": 'offspring = [0.5, 0.5]\n',
        "bad": 'offspring = [0.5, 0.4]\n',
    }
    out = {}
    for name, text in files.items():
        p = tmp_path / f"{name}.toml"
        p.write_text(text)
        out[name] = str(p)
    return out


def run(args, env=None):
    return CliRunner().invoke(cli, args, env=env)


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_tail_invert_geometric(models):
    r = run(["tail", "--model", models["geo"], "--eps", "0.1"])
    assert r.exit_code == 0, r.output
    (row,) = rows(r.stdout)
    assert abs(float(row["value"]) - 0.0951626) <= 1e-7
    assert row["method"] == "plain_contour"
    manifest = json.loads(r.stderr)
    assert manifest["command"] == "tail" and manifest["parameters"]["eps"] == [0.1]


def test_tail_mc_infeasible(models):
    r = run(["tail", "--model", models["plain"], "--eps", "1e-6", "--method", "mc"])
    assert r.exit_code == 3
    assert "rare-event infeasible" in r.stderr


def test_tail_predict_log_space(models):
    r = run(["tail", "--model", models["test"], "--eps", "1e-8", "--method", "predict"])
    assert r.exit_code == 0
    (row,) = rows(r.stdout)
    assert set(row) == {"eps", "log_value", "log_error_est", "method"}
    lv = float(row["log_value"])
    assert math.isfinite(lv) and lv < math.log(1e-300)


def test_tail_value_columns_when_no_underflow(models):
    r = run(["tail", "--model", models["plain"], "--eps", "0.01,0.1", "--method", "predict"])
    assert r.exit_code == 0
    assert r.stdout.splitlines()[0] == "eps,value,error_est,method"
    assert len(rows(r.stdout)) == 2


def test_csv_format(models):
    r = run(["tail", "--model", models["geo"], "--eps", "0.1, 0.2"])
    raw = r.stdout_bytes.decode("utf-8")
    assert raw.startswith("eps,value,error_est,method\r\n")
    assert raw.count("\r\n") == 3 and raw.count("\n") == 3


def test_fluctuation_immigration(models):
    r = run(["fluctuation", "--model", models["test"], "--eps", "1e-5", "--x", "-2..3"])
    assert r.exit_code == 0, r.output
    t = rows(r.stdout)
    assert [int(x["x"]) for x in t] == list(range(-2, 4))
    exact = np.array([float(x["exact"]) for x in t])
    pred = np.array([float(x["predicted"]) for x in t])
    assert np.all(np.diff(exact) <= 0) and np.all(np.diff(pred) <= 0)


def test_fluctuation_columns_agree(models):
    r = run(["fluctuation", "--model", models["test"], "--eps", "1e-5", "--x", "-2..3"])
    t = rows(r.stdout)
    assert max(abs(float(x["exact"]) - float(x["predicted"])) for x in t) <= 0.05


def test_fluctuation_single_row_and_plain(models):
    r = run(["fluctuation", "--model", models["test"], "--eps", "1e-4", "--x", "0"])
    assert r.exit_code == 0 and len(rows(r.stdout)) == 1
    r = run(["fluctuation", "--model", models["plain"], "--eps", "1e-4", "--x", "-3..4"])
    assert r.exit_code == 0
    t = rows(r.stdout)
    for col in ("exact", "predicted"):
        v = np.array([float(x[col]) for x in t])
        assert np.all(np.diff(v) <= 0) and np.all((v >= 0) & (v <= 1.0 + 1e-12))


def test_verify_geometric(models):
    r = run(["verify", "--model", models["geo"]])
    assert r.exit_code == 0, r.stdout
    report = json.loads(r.stdout)
    assert report["n_failed"] == 0 and report["n_checks"] >= 15
    assert len({c["name"] for c in report["checks"]}) == report["n_checks"]


def test_verify_immigration(models):
    r = run(["verify", "--model", models["test"]])
    assert r.exit_code == 0, r.stdout
    assert json.loads(r.stdout)["n_checks"] >= 20


def test_corrupted_model(models):
    for cmd in (["verify"], ["tail", "--eps", "0.1"], ["scales"]):
        r = run(cmd[:1] + ["--model", models["bad"]] + cmd[1:])
        assert r.exit_code == 2
        assert "error" in r.stderr


def test_missing_model_file(tmp_path):
    r = run(["tail", "--model", str(tmp_path / "nope.toml"), "--eps", "0.1"])
    assert r.exit_code == 2


def test_scales_command(models):
    r = run(["scales", "--model", models["test"], "--eps", "1e-3,1e-5"])
    assert r.exit_code == 0
    t = rows(r.stdout)
    assert len(t) == 2 and int(t[1]["N"]) == math.floor(float(t[1]["rho"]))
    r = run(["scales", "--model", models["plain"], "--eps", "1e-3"])
    assert rows(r.stdout)[0]["u"] == "nan"


def test_out_dir_and_manifest(models, tmp_path):
    out = tmp_path / "run"
    r = run(["simulate", "--model", models["test"], "--eps", "1,2,3", "--samples", "20000", "--seed", "5",
             "--out", str(out)])
    assert r.exit_code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"] == [str(out / "simulate.csv")]
    assert manifest["seed"] == 5 and manifest["tool_version"]
    assert set(manifest) == {"command", "model_config_path", "parameters", "outputs", "seed", "tool_version"}
    first = (out / "simulate.csv").read_bytes()
    # re-running from the manifest parameters reproduces the table bit for bit
    p = manifest["parameters"]
    out2 = tmp_path / "rerun"
    run([manifest["command"], "--model", manifest["model_config_path"], "--eps", ",".join(map(str, p["eps"])),
         "--samples", str(p["samples"]), "--gens", str(p["gens"]), "--seed", str(manifest["seed"]),
         "--threads", "2", "--out", str(out2)])
    assert (out2 / "simulate.csv").read_bytes() == first


def test_seed_changes_mc_output(models):
    base = ["simulate", "--model", models["test"], "--eps", "2", "--samples", "20000"]
    a = run(base + ["--seed", "1"]).stdout
    b = run(base + ["--seed", "1"]).stdout
    c = run(base + ["--seed", "2"]).stdout
    assert a == b and a != c


def test_env_overrides(models):
    env = {"GWTAILS_MODEL": models["geo"], "GWTAILS_EPS": "0.1,0.5", "GWTAILS_METHOD": "invert"}
    r = run(["tail"], env=env)
    assert r.exit_code == 0, r.output
    assert [float(x["eps"]) for x in rows(r.stdout)] == [0.1, 0.5]
    r = run(["simulate", "--eps", "2"], env={"GWTAILS_MODEL": models["plain"], "GWTAILS_SAMPLES": "1000",
                                            "GWTAILS_SEED": "3"})
    assert rows(r.stdout)[0]["samples"] == "1000"
    assert json.loads(r.stderr)["seed"] == 3


def test_x_range_parser():
    assert parse_x_range("-2..3") == [-2, -1, 0, 1, 2, 3]
    assert parse_x_range("0") == [0]
    assert parse_x_range("-1, 2,4") == [-1, 2, 4]


def test_bad_parameters(models):
    assert run(["tail", "--model", models["geo"], "--eps", "abc"]).exit_code == 2
    assert run(["tail", "--model", models["geo"], "--eps", "0.1", "--method", "nope"]).exit_code == 2
    assert run(["fluctuation", "--model", models["test"], "--x", "3..1"]).exit_code == 2


def test_console_script():
    r = subprocess.run([sys.executable, "-c", "from gwtails.cli import main; main(['--version'])"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "gwtails" in r.stdout
