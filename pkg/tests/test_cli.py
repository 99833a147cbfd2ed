import csv
import json
import subprocess
import sys

import pytest

from ergopt import __version__
from ergopt.cli import COMMANDS, apply_overrides, config_hash, load_config, main, run_subcommand
from ergopt.errors import ValidationError

DOUBLING = {"kind": "circle", "m": 2}
COS = {"type": "trig", "terms": [[1, 1.0, 0.0]]}

CONFIGS = {
    "subaction": {"system": DOUBLING, "observable": COS, "grid": 4096},
    "alpha": {"system": DOUBLING, "observable": COS, "grid": 4096, "params": {"p_max": 8}},
    "maxorbit": {"system": DOUBLING, "observable": COS, "params": {"p_max": 6}},
    "shadow": {"system": DOUBLING, "params": {"segment": [0.33, 0.67]}},
    "perturb": {"system": DOUBLING, "observable": COS, "grid": 4096,
                "params": {"methods": ["enumeration"]}},
    "gibbs": {"system": DOUBLING, "observable": COS, "grid": 1024, "params": {"beta": 3.0}},
    "sweep": {"system": DOUBLING, "observable": COS, "grid": 1024,
              "params": {"beta_schedule": [1, 2, 4], "p_max": 4}},
    "entropy": {"system": DOUBLING, "seed": 3, "params": {"sample_size": 20000, "L_max": 6, "k_max": 4}},
    "bq": {"system": DOUBLING, "params": {"K_set": [0.2, 0.4, 0.8, 0.6], "n_max": 4}},
    "morris": {"system": DOUBLING, "observable": {"type": "trig", "terms": [[1, 1.0, 0.5]]},
               "params": {"target": [0.3333333333333333, 0.6666666666666666], "beta_size": 0.5}},
    "returns": {"system": DOUBLING, "seed": 1, "params": {"horizon": 20000, "N0": 1, "N": 6}},
}


def _run(name, cfg, out):
    code = run_subcommand(name, cfg, out)
    return code, json.loads((out / "result.json").read_text())


@pytest.mark.parametrize("name", COMMANDS)
def test_every_subcommand_runs_and_stamps_outputs(name, tmp_path):
    code, doc = _run(name, CONFIGS[name], tmp_path)
    assert code == 0, doc
    h = config_hash(CONFIGS[name])
    assert doc["config_sha256"] == h and doc["version"] == __version__
    schema = json.loads((tmp_path / "schema.json").read_text())
    assert schema["config_sha256"] == h and schema["version"] == __version__
    for f in tmp_path.glob("*.csv"):
        first = f.read_text().splitlines()[0]
        assert first == f"# ergopt {__version__} config_sha256={h}"
        assert f.name in doc["files"]


def test_subaction_example(tmp_path):
    code, doc = _run("subaction", CONFIGS["subaction"], tmp_path)
    assert code == 0 and doc["result"]["alpha"] == pytest.approx(-1.0, abs=1e-4)
    rows = list(csv.reader((tmp_path / "u.csv").read_text().splitlines()[1:]))
    assert rows[0] == ["node", "value"] and len(rows) == 4097


def test_perturb_infeasible_exit3(tmp_path, capsys):
    cfg = {"system": DOUBLING, "observable": COS, "grid": 4096,
           "params": {"delta": 1e-3, "gamma_delta": 0.1, "M": 2, "methods": ["enumeration"]}}
    code, doc = _run("perturb", cfg, tmp_path)
    assert code == 3
    assert "rho exceeds (1−λ)e₀" in doc["error"]["message"]
    assert "rho exceeds" in capsys.readouterr().err


def test_gibbs_overflow_exit2(tmp_path):
    cfg = {"system": DOUBLING, "observable": COS, "grid": 256,
           "params": {"beta": 1000.0, "stabilize": False}}
    code, doc = _run("gibbs", cfg, tmp_path)
    assert code == 2 and doc["error"]["type"] == "OverflowRisk"
    assert "700" in doc["error"]["message"]


@pytest.mark.parametrize("cfg", [
    {"system": DOUBLING, "bogus": 1},
    {"system": DOUBLING, "params": {"p_maximum": 3}},
    {"system": {"kind": "circle", "m": 1}},
    {"observable": COS},
])
def test_invalid_config_exit1(cfg, tmp_path):
    code, doc = _run("maxorbit", cfg, tmp_path)
    assert code == 1 and doc["error"]["type"] == "ValidationError"


def test_missing_observable_exit1(tmp_path):
    code, doc = _run("subaction", {"system": DOUBLING}, tmp_path)
    assert code == 1 and "observable" in doc["error"]["message"]


def test_determinism(tmp_path):
    for name in ("entropy", "returns", "sweep"):
        a, b = tmp_path / f"{name}a", tmp_path / f"{name}b"
        assert run_subcommand(name, CONFIGS[name], a) == 0
        assert run_subcommand(name, CONFIGS[name], b) == 0
        for f in a.iterdir():
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_overrides():
    cfg = apply_overrides({"system": DOUBLING}, ["params.epsilon=0.2", "system.m=3", "params.q=1/7"])
    assert cfg["params"] == {"epsilon": 0.2, "q": "1/7"} and cfg["system"]["m"] == 3
    with pytest.raises(ValidationError):
        apply_overrides({}, ["noequals"])


def test_env_seed_and_threads(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(CONFIGS["entropy"]))
    assert load_config(path, env={"ERGOPT_SEED": "42"})["seed"] == 42
    assert load_config(path, env={})["seed"] == 3
    with pytest.raises(ValidationError):
        load_config(path, env={"ERGOPT_SEED": "x"})
    with pytest.raises(ValidationError):
        load_config(path, env={"ERGOPT_THREADS": "0"})
    assert load_config(path, env={"ERGOPT_THREADS": "4"})


def test_main_in_process(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(CONFIGS["bq"]))
    monkeypatch.delenv("ERGOPT_SEED", raising=False)
    assert main(["bq", "--config", str(path), "--out", str(tmp_path / "o"), "--set", "params.n_max=2"]) == 0
    doc = json.loads((tmp_path / "o" / "result.json").read_text())
    assert len(doc["result"]["rows"]) == 2
    assert main(["bq", "--config", str(tmp_path / "missing.json")]) == 1


def test_console_script(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(CONFIGS["maxorbit"]))
    proc = subprocess.run([sys.executable, "-m", "ergopt.cli", "maxorbit", "--config", str(path),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("ergopt maxorbit: best period 1")
