import json
import math
from pathlib import Path

import pytest

from formflow.cli import main
from formflow.config import ConfigError, parse_config
from formflow.report import csv_text, dumps

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = {
    "schema_version": 1,
    "grid": {"axes": [{"topology": "circle", "nodes": 32}]},
    "theta": 0.5,
    "flow": {"name": "circle-drive", "params": {"v": 0.5, "b": 0.2}},
}


def _with(path, value):
    doc = json.loads(json.dumps(BASE))
    node = doc
    *head, last = path
    for k in head:
        node = node[k]
    node[last] = value
    return doc


@pytest.mark.parametrize("path,value,pointer", [
    (["theta"], -1.0, "/theta"),
    (["grid", "axes", 0, "nodes"], 3, "/grid/axes/0/nodes"),
    (["grid", "axes", 0, "topology"], "sphere", "/grid/axes/0/topology"),
    (["flow", "params", "v"], "fast", "/flow/params/v"),
    (["schema_version"], 2, "/schema_version"),
    (["flow", "name"], "vortex", "/flow"),
    (["flow", "params", "v"], 1e9, "/flow"),
])
def test_config_errors_carry_pointer(path, value, pointer):
    with pytest.raises(ConfigError) as info:
        parse_config(_with(path, value))
    assert info.value.pointer == pointer


def test_overrides():
    cfg = parse_config(BASE, seed=12, tol_zero=1e-9)
    assert cfg.seed == 12 and cfg.tolerances.zero == 1e-9


def test_dumps_is_stable_and_full_precision():
    text = dumps({"b": 0.1, "a": [1, 2.5], "c": float("nan"), "z": 1 + 2j})
    assert text == dumps({"z": 1 + 2j, "c": float("nan"), "a": [1, 2.5], "b": 0.1})
    assert '"b": 0.10000000000000001' in text and '"c": null' in text
    assert float(json.loads(text)["b"]) == 0.1


def test_csv_uses_lf_and_17_digits():
    text = csv_text(["t", "v"], [[0, math.pi]])
    assert text == "t,v\n0,3.1415926535897931\n"


def test_cli_report_is_byte_identical(tmp_path):
    for out in ("a", "b"):
        assert main(["spectrum", "--config", str(CONFIGS / "circle_drive.json"),
                     "--out", str(tmp_path / out)]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    assert (tmp_path / "a" / "spectrum.csv").read_bytes() == (tmp_path / "b" / "spectrum.csv").read_bytes()
    meta = json.loads((tmp_path / "a" / "metadata.json").read_text())
    assert "timestamp" in meta and "timestamp" not in a.decode()


def test_cli_simulate_independent_of_threads(tmp_path):
    cfg = json.loads((CONFIGS / "circle_drive.json").read_text())
    cfg["jobs"]["simulate"] = {"samples": 20000, "t": 0.5, "dt": 0.01, "l1_tol": 2.0}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    for n in (1, 2):
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / f"t{n}"),
                     "--threads", str(n)]) == 0
    assert (tmp_path / "t1" / "report.json").read_bytes() == (tmp_path / "t2" / "report.json").read_bytes()
    assert (tmp_path / "t1" / "histogram.csv").read_bytes() == (tmp_path / "t2" / "histogram.csv").read_bytes()


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(_with(["theta"], 0)))
    assert main(["index", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "/theta" in capsys.readouterr().err
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["pass"] is False and rep["failures"][0]["pointer"] == "/theta"


def test_cli_failed_invariant_exit_code(tmp_path):
    cfg = json.loads((CONFIGS / "circle_drive.json").read_text())
    cfg["jobs"]["simulate"] = {"samples": 2000, "t": 0.1, "dt": 0.01, "l1_tol": 1e-6}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert [f["invariant"] for f in rep["failures"]] == ["stationary_density"]


@pytest.mark.parametrize("sub", ["index", "partition", "evolve", "nicolai", "correlate"])
def test_cli_example_jobs_pass(tmp_path, sub):
    assert main([sub, "--config", str(CONFIGS / "ou_line.json"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["pass"] is True


def test_cli_cpd_check(tmp_path):
    assert main(["cpd-check", "--config", str(CONFIGS / "ou_plane.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "cpd_report.json").exists()
