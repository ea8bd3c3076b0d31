import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from imucal import cli
from imucal import simulator as sim

SMALL = {
    "noise": {"sigma_a": 2e-3, "sigma_ba": 3e-3, "sigma_g": 1.6968e-4, "sigma_bg": 1.9393e-5, "dt": 0.01},
    "imus": [
        {"p": [0.0, 0.0, 0.0], "euler_xyz_deg": [0.0, 0.0, 0.0]},
        {"p": [0.15, -0.05, 0.1], "euler_xyz_deg": [20.0, -30.0, 110.0]},
        {"p": [-0.05, 0.2, 0.05], "euler_xyz_deg": [-60.0, 10.0, 45.0]},
    ],
    "gyro_misalignment_deg": 1.0,
    "trajectory": {
        "duration": 6.0,
        "oscillations": [
            {"start": 0.0, "end": 2.0, "axis": "x", "amplitude": 0.8, "frequency": 1.0},
            {"start": 2.0, "end": 4.0, "axis": "y", "amplitude": 0.6, "frequency": 1.5},
            {"start": 4.0, "end": 6.0, "axis": "z", "amplitude": 0.7, "frequency": 2.0},
        ],
    },
}


def _config(tmp_path, doc=SMALL, name="sim.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture()
def simulated(tmp_path):
    out = tmp_path / "d.csv"
    assert cli.main(["simulate", _config(tmp_path), str(out), "--seed", "3"]) == 0
    return out


def test_simulate_writes_csv_and_truth(simulated):
    data = sim.load_csv(simulated)
    assert data.n_steps == 600 and data.n_imus == 3
    truth = json.loads(sim.truth_path(simulated).read_text())
    assert truth["config"]["seed"] == 3 and "rig" in truth


def test_simulate_is_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.main(["simulate", cfg, str(a), "--seed", "7"])
    cli.main(["simulate", cfg, str(b), "--seed", "7"])
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    cli.main(["simulate", cfg, str(c), "--seed", "8"])
    assert a.read_bytes() != c.read_bytes()


def test_simulate_bundled_edge_case(tmp_path):
    out = tmp_path / "e.csv"
    assert cli.main(["simulate", "edge_case", str(out), "--noiseless"]) == 0
    data = sim.load_csv(out)
    assert data.n_steps == 6000 and data.n_imus == 4
    ref = sim.simulate_edge_case(seed=0, noisy=False)
    assert np.allclose(data.accel, ref.accel, atol=1e-12)


def test_calibrate_outputs(simulated, tmp_path, capsys):
    out, trace = tmp_path / "r.json", tmp_path / "t.csv"
    code = cli.main(["calibrate", str(simulated), str(out), "--policy", "baseline", "--segment-seconds", "1.0",
                     "--trace", str(trace)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["policy"] == "baseline" and doc["selected_ratio"] == 1.0 and len(doc["selected"]) == 6
    assert doc["config"]["K"] == 100 and "errors" in doc and "reprojection" in doc
    assert np.array(doc["std_dev"]["p_cm"]).shape == (2, 3)
    assert doc["errors"]["max_p_cm"] < 1.0
    assert "selected 6/6" in capsys.readouterr().out
    assert next(csv.reader(open(trace))) == ["segment", "info_scalar", "utility", "accepted"]


def test_calibrate_huge_lambda_keeps_one_segment(simulated, tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["calibrate", str(simulated), str(out), "--lambda", "1e9"]) == 0
    doc = json.loads(out.read_text())
    assert doc["selected"] == [0] and doc["counters"]["calibrate_calls"] == 1


def test_calibrate_config_file_and_flag_precedence(simulated, tmp_path):
    cfg = _config(tmp_path, {"policy": "m-largest", "m": 2, "lam": 3.0}, "cal.json")
    out = tmp_path / "r.json"
    assert cli.main(["calibrate", str(simulated), str(out), "--config", cfg]) == 0
    doc = json.loads(out.read_text())
    assert doc["policy"] == "m-largest" and len(doc["selected"]) == 2
    assert cli.main(["calibrate", str(simulated), str(out), "--config", cfg, "--m", "3"]) == 0
    assert len(json.loads(out.read_text())["selected"]) == 3


def test_input_errors_exit_one(tmp_path, simulated, capsys):
    assert cli.main(["simulate", str(tmp_path / "missing.json"), str(tmp_path / "x.csv")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["simulate", str(bad), str(tmp_path / "x.csv")]) == 1
    assert cli.main(["calibrate", str(tmp_path / "none.csv"), str(tmp_path / "r.json")]) == 1
    assert cli.main(["calibrate", str(simulated), str(tmp_path / "r.json"), "--policy", "m-largest"]) == 1
    assert cli.main(["calibrate", str(simulated), str(tmp_path / "r.json"), "--segment-seconds", "0"]) == 1
    garbled = tmp_path / "g.csv"
    garbled.write_text("t,a\n1,2\n")
    assert cli.main(["calibrate", str(garbled), str(tmp_path / "r.json")]) == 1
    assert "imucal:" in capsys.readouterr().err


def test_unobservable_exits_two(tmp_path):
    # one lever arm: rotating its accelerometer about the arm is absorbed by the per-step α
    doc = json.loads(json.dumps(SMALL))
    doc["imus"] = doc["imus"][:2]
    doc["trajectory"]["oscillations"] = [{"start": 0.0, "end": 6.0, "axis": "z", "amplitude": 0.8, "frequency": 0.7}]
    data = tmp_path / "d.csv"
    assert cli.main(["simulate", _config(tmp_path, doc), str(data)]) == 0
    truth = str(sim.truth_path(data))
    code = cli.main(["calibrate", str(data), str(tmp_path / "r.json"), "--rig", truth, "--policy", "baseline"])
    assert code == 2


def test_sensitivity_csv(simulated, tmp_path):
    out, js = tmp_path / "s.csv", tmp_path / "s.json"
    truth = str(sim.truth_path(simulated))
    code = cli.main(["sensitivity", str(simulated), truth, str(out), "--dp-grid", "0,0.05", "--dq-grid", "0,5",
                     "--json", str(js)])
    assert code == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["dp", "dq", "rho"] and len(rows) == 5
    assert float(rows[1][2]) == 1.0
    assert json.loads(js.read_text())["config"]["K"] == 100
    assert cli.main(["sensitivity", str(simulated), truth, str(out), "--dp-grid", "a,b"]) == 1


def test_bench_csv_per_policy(tmp_path):
    out, js = tmp_path / "b.csv", tmp_path / "b.json"
    assert cli.main(["bench", str(out), "--L-grid", "3,5", "--K", "10", "--json", str(js)]) == 0
    for pol, evals in (("greedy-original", ["6", "15"]), ("greedy-init", ["3", "5"])):
        rows = list(csv.reader(open(tmp_path / f"b.{pol}.csv")))
        assert rows[0] == ["L", "evals", "eval_ms", "calib_ms"]
        assert [r[1] for r in rows[1:]] == evals
    summary = json.loads(js.read_text())
    assert set(summary["policies"]) == {"greedy-original", "greedy-init"}
    single = tmp_path / "one.csv"
    assert cli.main(["bench", str(single), "--policy", "greedy-init", "--L-grid", "4", "--K", "10"]) == 0
    assert single.exists()
    assert cli.main(["bench", str(single), "--L-grid", "0"]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "imucal", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("imucal ")
    res = subprocess.run([sys.executable, "-m", "imucal", "calibrate"], capture_output=True, text=True)
    assert res.returncode == 2 and "usage" in res.stderr
