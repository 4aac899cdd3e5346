import copy
import json
import warnings

import numpy as np
import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from jumpbsde.cli import main as cli_main
from jumpbsde.config import build_lattice, build_market, parse_config, terminal_values
from jumpbsde.errors import ConfigError
from jumpbsde.service import app


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def merton_config():
    return {
        "market": {"b": 0.2, "sigma": 1.0, "beta": [], "grid": [],
                   "alpha": 1.0, "T": 1.0,
                   "constraint": {"lo": -2.0, "hi": 2.0}},
        "lattice": {"n_steps": 8, "mode": "markov"},
        "terminal": {"kind": "constant", "params": {"value": 0.0}},
        "mc": {"paths": 2000, "seed": 42, "strategies": 2},
        "optimize": {"x": 1.0},
        "output": {"dir": "out", "formats": ["csv", "json"]},
    }


@pytest.fixture
def jump_config():
    return {
        "market": {"b": 0.1, "sigma": 1.0, "beta": [0.1],
                   "grid": [{"x": 0.4, "w": 0.5}],
                   "alpha": 1.0, "T": 1.0,
                   "constraint": {"lo": 0.0, "hi": 1.0}},
        "lattice": {"n_steps": 4, "mode": "tree"},
        "terminal": {"kind": "call",
                     "params": {"strike": 1.0, "s0": 1.0, "cap": 0.5}},
        "cascade": {"m_schedule": [1, 3, None]},
        "output": {"dir": "out", "formats": ["csv", "json"]},
    }


def test_config_parsing_and_builders(jump_config):
    cfg = parse_config(jump_config)
    market = build_market(cfg)
    lat = build_lattice(cfg, market)
    values = terminal_values(cfg, market, lat)
    assert values.shape == (lat.slice_size(4),)
    assert float(values.max()) <= 0.5


def test_config_error_paths(merton_config):
    bad = copy.deepcopy(merton_config)
    bad["market"]["constraint"] = {"lo": 1.0, "hi": 0.0}
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert "constraint.lo" in str(err.value)

    bad = copy.deepcopy(merton_config)
    bad["lattice"]["n_steps"] = 0
    with pytest.raises(ConfigError):
        parse_config(bad)

    bad = copy.deepcopy(merton_config)
    bad["mc"] = {"paths": 100}      # seed mandatory
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert "mc.seed" in str(err.value)

    bad = copy.deepcopy(merton_config)
    bad["lattice"] = {"n_steps": 25, "mode": "tree"}
    with pytest.raises(ConfigError):
        build_lattice(parse_config(bad), build_market(parse_config(bad)))

    bad = copy.deepcopy(merton_config)
    bad["market"]["b"] = {"breakpoints": [0.0, 0.5], "values": [0.1, 0.2]}
    bad["lattice"] = {"n_steps": 8, "mode": "markov"}
    with pytest.raises(ConfigError):
        build_lattice(parse_config(bad), build_market(parse_config(bad)))


def test_health(client):
    res = client.get("/health")
    assert res.status_code == 200 and res.json()["status"] == "ok"


def test_solve_endpoint_deterministic(client, merton_config):
    first = client.post("/solve", json={"config": merton_config})
    second = client.post("/solve", json={"config": merton_config})
    assert first.status_code == 200
    assert first.json() == second.json()
    body = first.json()
    assert abs(body["summary"]["Y_0"] + 0.02) < 2e-3
    assert "solution.csv" in body["csv"]
    header = body["csv"]["solution.csv"].splitlines()[0]
    assert header == "time_index,node_id,Y,Z"


def test_csv_round_trip_precision(client, jump_config):
    body = client.post("/solve", json={"config": jump_config}).json()
    lines = body["csv"]["solution.csv"].splitlines()
    assert lines[0] == "time_index,node_id,Y,Z,U_1"
    row = lines[1].split(",")
    y = float(row[2])
    assert format(y, ".17g") == row[2]   # 17 significant digits round-trip


def test_validate_endpoint(client, merton_config):
    res = client.post("/validate", json={"config": merton_config})
    assert res.status_code == 200
    body = res.json()
    assert body["summary"]["passed"] is True
    names = [c["name"] for c in body["report"]["checks"]]
    assert "telescoping_identity" in names
    assert "comparison_ordered_terminals" in names
    assert any(n.startswith("apriori_tilde") for n in names)


def test_optimize_endpoint(client, merton_config):
    res = client.post("/optimize", json={"config": merton_config})
    assert res.status_code == 200
    body = res.json()
    report = body["report"]
    assert set(report) >= {"V_formula", "per_strategy", "A_max_abs_optimal",
                           "supermartingale_worst_gap"}
    assert body["summary"]["V"] == pytest.approx(-np.exp(-1.02), abs=2e-3)
    assert "strategy.csv" in body["csv"]
    # wealth override through the request body
    res2 = client.post("/optimize", json={"config": merton_config, "x": 2.0})
    assert res2.json()["summary"]["x"] == 2.0


def test_config_error_status(client, merton_config):
    bad = copy.deepcopy(merton_config)
    bad["market"]["constraint"] = {"lo": 1.0, "hi": 0.0}
    res = client.post("/solve", json={"config": bad})
    assert res.status_code == 400
    assert res.json()["detail"]["kind"] == "config"
    assert "constraint" in res.json()["detail"]["path"]


def test_optimize_requires_mc(client, jump_config):
    res = client.post("/optimize", json={"config": jump_config})
    assert res.status_code == 400
    assert res.json()["detail"]["path"] == "mc"


def test_step_size_error_maps_to_config(client, jump_config):
    heavy = copy.deepcopy(jump_config)
    heavy["market"]["grid"] = [{"x": 0.4, "w": 40.0}]
    heavy["lattice"] = {"n_steps": 2, "mode": "tree"}
    res = client.post("/solve", json={"config": heavy})
    assert res.status_code == 400
    detail = res.json()["detail"]
    assert detail["kind"] == "config"
    assert detail.get("suggested_n_steps") is not None


def test_cli_heuristic_warning(tmp_path, merton_config, capsys):
    cfg = copy.deepcopy(merton_config)
    cfg["cascade"] = {"N_override": 2}
    cfg_path = _write_config(tmp_path, cfg)
    assert cli_main(["solve", "--config", cfg_path,
                     "--out", str(tmp_path / "h")]) == 0
    captured = capsys.readouterr()
    assert "heuristic" in captured.err


def _write_config(tmp_path, config):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config))
    return str(path)


def test_cli_solve_writes_artifacts(tmp_path, merton_config, capsys):
    cfg_path = _write_config(tmp_path, merton_config)
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    assert cli_main(["solve", "--config", cfg_path, "--out", str(out1)]) == 0
    assert cli_main(["solve", "--config", cfg_path, "--out", str(out2)]) == 0
    for name in ("solution.csv", "summary.json", "trace.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    summary = json.loads((out1 / "summary.json").read_text())
    assert abs(summary["Y_0"] + 0.02) < 2e-3
    assert "Y_0" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, merton_config):
    bad = copy.deepcopy(merton_config)
    bad["market"]["constraint"] = {"lo": 1.0, "hi": 0.0}
    bad_path = _write_config(tmp_path, bad)
    assert cli_main(["solve", "--config", bad_path,
                     "--out", str(tmp_path / "x")]) == 2
    missing = str(tmp_path / "nope.json")
    assert cli_main(["solve", "--config", missing,
                     "--out", str(tmp_path / "x")]) == 2


def test_cli_validate_and_optimize(tmp_path, merton_config):
    cfg_path = _write_config(tmp_path, merton_config)
    out = tmp_path / "val"
    assert cli_main(["validate", "--config", cfg_path, "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is True

    out2 = tmp_path / "opt"
    assert cli_main(["optimize", "--config", cfg_path, "--out", str(out2),
                     "--wealth", "1.5"]) == 0
    summary = json.loads((out2 / "summary.json").read_text())
    assert summary["x"] == 1.5
    assert (out2 / "strategy.csv").exists()


def test_cli_validation_failure_exit_code(tmp_path, merton_config, monkeypatch):
    import jumpbsde.service as service

    def failing_validate(cfg):
        return {"summary": {"passed": False, "n_checks": 1, "Y_0": 0.0},
                "report": {"passed": False, "checks": [
                    {"name": "stub", "passed": False, "value": 1.0, "bound": 0.0}]},
                "csv": {}}

    monkeypatch.setattr(service, "run_validate", failing_validate)
    cfg_path = _write_config(tmp_path, merton_config)
    assert cli_main(["validate", "--config", cfg_path,
                     "--out", str(tmp_path / "v")]) == 4


def test_cli_formats_filter(tmp_path, merton_config):
    cfg = copy.deepcopy(merton_config)
    cfg["output"]["formats"] = ["json"]
    cfg_path = _write_config(tmp_path, cfg)
    out = tmp_path / "jsononly"
    assert cli_main(["solve", "--config", cfg_path, "--out", str(out)]) == 0
    assert (out / "summary.json").exists()
    assert not (out / "solution.csv").exists()
