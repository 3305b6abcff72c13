import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from starverify.cli import dumps, main
from starverify.config import RunConfig, parse_region

FIELDS = Path(__file__).resolve().parents[1] / "fields"
CUBE = "-2,2,-2,2,-2,2"


def run(tmp_path, *args):
    return main([*map(str, args), "--out", str(tmp_path)])


def load(tmp_path, name):
    return json.loads((tmp_path / name).read_text())


def test_parse_prints_canonical_text(tmp_path, capsys):
    assert run(tmp_path, "parse", FIELDS / "lorenz.flow") == 0
    out = load(tmp_path, "parse.json")
    assert out["schema"] == 1 and out["dim"] == 3
    assert out["params"] == {"sigma": 10.0, "rho": 28.0, "beta": 2.6666666666666665}
    assert capsys.readouterr().out == out["canonical"]


def test_sing_lorenz(tmp_path):
    assert run(tmp_path, "sing", FIELDS / "lorenz.flow", "--region", "-30,30,-30,30,0,60") == 0
    recs = load(tmp_path, "singularities.json")["singularities"]
    assert len(recs) == 3
    origin = min(recs, key=lambda r: math.hypot(*r["position"]))
    assert origin["sv"] > 0 and origin["ind_p"] == 1


def test_missing_file_and_bad_region(tmp_path, capsys):
    assert run(tmp_path, "sing", tmp_path / "nope.flow", "--region", CUBE) == 2
    assert "error" in capsys.readouterr().err
    assert run(tmp_path, "sing", FIELDS / "sink.flow", "--region", "-1,1,-1,1") == 2
    assert run(tmp_path, "sing", FIELDS / "sink.flow", "--region", "1,-1,-1,1,-1,1") == 2
    assert run(tmp_path, "sing", FIELDS / "sink.flow") == 2
    assert run(tmp_path, "chainrec", FIELDS / "sink.flow", "--region", CUBE, "--depth", "0") == 2


def test_bad_spec_text(tmp_path):
    bad = tmp_path / "bad.flow"
    bad.write_text("dim = 2\nx' = y'\ny' = 1\n")
    assert run(tmp_path, "parse", bad) == 2


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "starverify.cli", *map(str, args)], capture_output=True, text=True)


def test_non_hyperbolic_zero_warns(tmp_path):
    proc = _cli("sing", FIELDS / "center.flow", "--region", "-1,1,-1,1", "--out", tmp_path)
    assert proc.returncode == 0
    assert "not hyperbolic" in proc.stderr
    rec = load(tmp_path, "singularities.json")["singularities"][0]
    assert rec["hyperbolic"] is False


def test_chainrec_limit_cycle(tmp_path):
    assert run(tmp_path, "chainrec", FIELDS / "limit_cycle.flow", "--region", CUBE, "--depth", 7, "--plot-data") == 0
    summary = load(tmp_path, "summary.json")
    assert len(summary["classes"]) == 2
    assert all(c["n_boxes"] > 0 for c in summary["classes"])
    rows = list(csv.reader(open(tmp_path / "class_centers.csv")))
    assert rows[0][0] == "class" and len(rows) - 1 == sum(c["n_boxes"] for c in summary["classes"])
    for name in ("boxes.csv", "edges.csv", "classes.csv"):
        assert (tmp_path / name).stat().st_size > 0


def test_resource_cap(tmp_path, capsys):
    code = run(tmp_path, "chainrec", FIELDS / "limit_cycle.flow", "--region", CUBE, "--depth", 8, "--max-boxes", 5000)
    assert code == 3
    assert "suggested --depth" in capsys.readouterr().err


def test_sink_verdict(tmp_path):
    assert run(tmp_path, "verdict", FIELDS / "sink.flow", "--region", "-1,1,-1,1,-1,1", "--depth", 4) == 0
    cls = load(tmp_path, "report.json")["classes"]
    assert [c["report"]["verdict"] for c in cls] == ["Hyperbolic"]


def _verdict(tmp_path, *extra):
    return run(tmp_path, "verdict", FIELDS / "limit_cycle.flow", "--region", CUBE, "--depth", 6,
               "--samples", 300, "--horizon", 2, *extra)


def test_verdict_is_deterministic(tmp_path):
    assert _verdict(tmp_path) == 0
    first = (tmp_path / "report.json").read_bytes()
    assert _verdict(tmp_path) == 0
    assert (tmp_path / "report.json").read_bytes() == first
    # the worker count changes scheduling only
    assert _verdict(tmp_path, "--workers", 2) == 0
    a, b = json.loads(first), load(tmp_path, "report.json")
    assert a["classes"] == b["classes"]


def test_swap_convention_recorded(tmp_path):
    assert _verdict(tmp_path, "--swap-cocycle-sides", "--plot-data") == 0
    out = load(tmp_path, "report.json")
    assert out["convention"] == "swapped" and out["config"]["swap_sides"]
    assert all(c["report"]["convention"] == "swapped" for c in out["classes"])
    assert list(tmp_path.glob("extended_class*.csv"))


def test_periodic(tmp_path):
    args = ("--point", "1.3,0,0.1", "--section", "0,1,0")
    assert run(tmp_path, "periodic", FIELDS / "limit_cycle.flow", *args) == 0
    rep = load(tmp_path, "periodic.json")["report"]
    assert abs(rep["eta"] - 1) <= 0.1 and rep["passed"]
    assert run(tmp_path, "periodic", FIELDS / "neutral_cycle.flow", *args) == 1
    assert load(tmp_path, "periodic.json")["report"]["eta"] <= 0
    assert run(tmp_path, "periodic", FIELDS / "limit_cycle.flow", "--point", "1,0,0") == 2


def test_birkhoff_limit_cycle(tmp_path):
    code = run(tmp_path, "birkhoff", FIELDS / "limit_cycle.flow", "--region", CUBE, "--depth", 6, "--samples", 300,
               "--horizon", 2, "--windows", 10)
    assert code == 0
    cyc = load(tmp_path, "birkhoff.json")["classes"][0]["birkhoff"]
    assert cyc["fraction_negative"] == 1.0
    assert cyc["max"] == pytest.approx(-1.0, abs=0.05)


def test_json_encoding():
    text = dumps({"a": 0.1, "b": [1.0 / 3, math.nan, math.inf], "c": True})
    back = json.loads(text)
    assert back == {"a": 0.1, "b": [1.0 / 3, None, None], "c": True}
    assert "0.33333333333333331" in text


def test_run_config_roundtrip():
    cfg = RunConfig("x.flow", [-1, 1, 0, 2], workers=3)
    lo, hi = cfg.bounds()
    assert lo.tolist() == [-1, 0] and hi.tolist() == [1, 2]
    assert RunConfig(**json.loads(json.dumps(cfg.to_json()))) == cfg
    with pytest.raises(ValueError):
        parse_region("1,2,3")
    with pytest.raises(ValueError):
        RunConfig("x.flow").bounds()


def test_workers_env(monkeypatch):
    from starverify.config import default_workers
    monkeypatch.setenv("STARVERIFY_WORKERS", "4")
    assert default_workers() == 4
    monkeypatch.setenv("STARVERIFY_WORKERS", "many")
    assert default_workers() == 1


def test_console_entry_point(tmp_path):
    proc = _cli("parse", FIELDS / "sink.flow", "--out", tmp_path)
    assert proc.returncode == 0
    assert proc.stdout.startswith("dim = 3")
