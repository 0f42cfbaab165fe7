import csv
import json
import shutil
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from resplace import bip
from resplace import placement as pl
from resplace.cli import main
from resplace.scenario import load_scenario
from resplace.simulator import CSV_COLUMNS

from conftest import DEMO_CONFIG


def write_config(tmp_path, text, name="s.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


TINY = """
    [services]
    resource_units = 30, 40
    delay_thresholds_ms = 50, 50
    [nodes]
    positions = 0:0, 1000:0, 0:1000
    capacity = 100, 60, 80
    [sim]
    instance_capacity = 10
    bounding_box = 0, 0, 1000, 1000
    synth_vehicles = 10
    synth_windows = 2
"""


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    assert main(["run", "--config", str(DEMO_CONFIG), "--out", str(out)]) == 0
    return out


def test_demo_run_outputs(demo_run):
    assert sorted(p.name for p in demo_run.iterdir()) == ["decisions.json", "metrics.csv", "summary.json"]


def test_demo_outputs_schema(demo_run):
    sc = load_scenario(DEMO_CONFIG)
    with open(demo_run / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == CSV_COLUMNS
    modes = {"PrA-SP", "PoA-PSVM", "PoA-SRP"}
    for r in rows:
        assert int(r["window"]) >= 1 and r["mode"] in modes
        kinds = [bool(r["service"]), bool(r["node"])]
        assert kinds in ([False, False], [True, False], [False, True])
        if r["service"]:
            assert 0 <= int(r["service"]) < sc.n_services
        if r["node"]:
            assert 0 <= int(r["node"]) < sc.n_nodes and 0.0 <= float(r["usage_pct"]) <= 100.0
        if r["mean_delay_ms"]:
            assert float(r["mean_delay_ms"]) >= 0
        if not r["service"] and not r["node"]:
            assert 0 <= int(r["active_nodes"]) <= sc.n_nodes
    summary = json.loads((demo_run / "summary.json").read_text())
    for key in ("mode", "windows", "requests", "unserved", "mean_delay_ms", "mean_delay_pre_attack_ms",
                "mean_delay_post_attack_ms", "mean_occupied_units_pre_attack", "degraded_windows", "flags",
                "modes", "config", "critic_updates"):
        assert key in summary
    assert summary["config"]["seed"] == 7 and summary["modes"]["PoA-PSVM"] == 1
    decisions = json.loads((demo_run / "decisions.json").read_text())
    assert len(decisions["windows"]) == summary["windows"]
    for w in decisions["windows"]:
        if w["window"] >= 5 and w["window"] < 9:
            assert not any(w["x"][4])


def test_demo_run_is_byte_identical(demo_run, tmp_path):
    assert main(["run", "--config", str(DEMO_CONFIG), "--out", str(tmp_path)]) == 0
    for name in ("metrics.csv", "summary.json", "decisions.json"):
        assert (tmp_path / name).read_bytes() == (demo_run / name).read_bytes()


def test_missing_trace(tmp_path, capsys):
    code = main(["run", "--config", str(DEMO_CONFIG), "--trace", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "trace file not found" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_invalid_override(tmp_path):
    assert main(["run", "--config", str(DEMO_CONFIG), "--alpha", "1.5", "--out", str(tmp_path)]) == 2


def test_structurally_infeasible(tmp_path, capsys):
    cfg = write_config(tmp_path, """
        [services]
        resource_units = 10
        delay_thresholds_ms = 50
        [nodes]
        grid = 1x2
        [sim]
        instance_capacity = 1
        synth_vehicles = 20
        synth_windows = 1
    """)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "structurally infeasible" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_demo_compare(tmp_path):
    sc = load_scenario(DEMO_CONFIG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["compare", "--config", str(DEMO_CONFIG), "--out", str(a)]) == 0
    assert sorted(p.name for p in a.iterdir()) == ["compare.json", "metrics_br.csv", "metrics_ours.csv"]
    doc = json.loads((a / "compare.json").read_text())
    assert doc["br_feasible"]
    assert doc["delta_br_minus_ours"]["occupied_units_pre_attack"] == sc.resources.sum() == doc["sum_resource_units"]
    assert main(["compare", "--config", str(DEMO_CONFIG), "--out", str(b)]) == 0
    for name in ("compare.json", "metrics_br.csv", "metrics_ours.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_compare_br_infeasible(tmp_path):
    cfg = write_config(tmp_path, """
        [services]
        resource_units = 60
        delay_thresholds_ms = 50
        [nodes]
        positions = 250:500, 750:500
        capacity = 100, 50
        [sim]
        bounding_box = 0, 0, 1000, 1000
        synth_vehicles = 10
        synth_windows = 2
    """)
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "compare.json").read_text())
    assert doc["br_feasible"] is False and doc["br"] is None
    assert doc["ours"]["unserved"] == 0


def solve_once(capsys, *argv):
    code = main(["solve-once", *argv])
    cap = capsys.readouterr()
    return code, (json.loads(cap.out) if code == 0 else cap.err)


def test_solve_once_matches_oracle(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY)
    delays = [[5.0, 9.0], [1.0, 40.0], [3.0, 2.0]]
    code, out = solve_once(capsys, "--config", str(cfg), "--demand", "15,7", "--delays", json.dumps(delays))
    assert code == 0
    sc = load_scenario(cfg)
    model = pl.build_sp(sc, [2, 1], delays)
    oracle = bip.solve_exhaustive(model.program)
    assert out["x"] == model.decode(oracle.assignment).tolist()
    assert out["instances"] == [2, 1]
    assert out["objective"] == pytest.approx(oracle.objective_value, abs=1e-12)
    for solver in ("bnb", "grouped", "exhaustive"):
        code, other = solve_once(capsys, "--config", str(cfg), "--demand", "15,7", "--delays",
                                 json.dumps(delays), "--solver", solver)
        assert other == out


def test_solve_once_fail_node(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY)
    delays = tmp_path / "d.json"
    delays.write_text(json.dumps([[5.0, 9.0], [1.0, 40.0], [3.0, 2.0]]))
    code, out = solve_once(capsys, "--config", str(cfg), "--demand", "5,0", "--delays", str(delays))
    empty = next(e for e, row in enumerate(out["x"]) if not any(row))
    host = next(e for e, row in enumerate(out["x"]) if any(row))
    code, res = solve_once(capsys, "--config", str(cfg), "--demand", "5,0", "--delays", str(delays),
                           "--fail-node", str(empty))
    assert code == 0 and res["y1"] == [] and res["y2"] == [] and res["z"] == [] and res["candidates"] == {}
    code, res = solve_once(capsys, "--config", str(cfg), "--demand", "5,0", "--delays", str(delays),
                           "--fail-node", str(host))
    assert code == 0
    merged = np.array(res["merged"])
    assert not merged[host].any() and merged[:, 0].sum() == 1


@pytest.mark.parametrize("demand", ["1", "1,x", "1,-2", "1,2,3", ""])
def test_solve_once_malformed_demand(tmp_path, capsys, demand):
    cfg = write_config(tmp_path, TINY)
    code, err = solve_once(capsys, "--config", str(cfg), "--demand", demand, "--delays", "[[0,0],[0,0],[0,0]]")
    assert code == 2 and "malformed demand" in err


def test_solve_once_malformed_delays_and_node(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY)
    assert solve_once(capsys, "--config", str(cfg), "--demand", "1,1", "--delays", "[[0,0]]")[0] == 2
    assert solve_once(capsys, "--config", str(cfg), "--demand", "1,1", "--delays", "nope")[0] == 2
    assert solve_once(capsys, "--config", str(cfg), "--demand", "1,1", "--delays", "[[0,0],[0,0],[0,0]]",
                      "--fail-node", "7")[0] == 2


def test_solve_once_infeasible(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY)
    code, err = solve_once(capsys, "--config", str(cfg), "--demand", "1,1", "--delays", "[[90,90],[90,90],[90,90]]")
    assert code == 3 and "infeasible" in err
    code, err = solve_once(capsys, "--config", str(cfg), "--demand", "40,1", "--delays", "[[0,0],[0,0],[0,0]]")
    assert code == 3 and "structurally infeasible" in err


def test_gen_trace(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["gen-trace", "--vehicles", "2", "--windows", "3", "--mobility", "stationary", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "vehicle,timestamp,x,y" and len(lines) == 7
    pos = {}
    for line in lines[1:]:
        v, _, x, y = line.split(",")
        pos.setdefault(v, set()).add((x, y))
    assert all(len(p) == 1 for p in pos.values())
    again = tmp_path / "u.csv"
    main(["gen-trace", "--vehicles", "20", "--windows", "3", "--seed", "4", "--out", str(out)])
    main(["gen-trace", "--vehicles", "20", "--windows", "3", "--seed", "4", "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()
    main(["gen-trace", "--vehicles", "3", "--windows", "2", "--box", "5,5,5,5", "--out", str(out)])
    assert {tuple(l.split(",")[2:]) for l in out.read_text().splitlines()[1:]} == {("5.000", "5.000")}
    assert main(["gen-trace", "--vehicles", "0", "--out", str(out)]) == 2


def test_console_script(tmp_path):
    exe = shutil.which("resplace")
    cmd = [exe] if exe else [sys.executable, "-m", "resplace"]
    res = subprocess.run(cmd + ["gen-trace", "--vehicles", "1", "--windows", "1", "--out", str(tmp_path / "t.csv")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "1 points" in res.stdout
    res = subprocess.run(cmd + ["run", "--bogus"], capture_output=True, text=True)
    assert res.returncode == 2
