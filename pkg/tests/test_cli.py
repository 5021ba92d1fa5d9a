import json
import os

import numpy as np
import pytest

from dirac_edge import cli
from dirac_edge.io_formats import read_array, read_csv


def scenario(tmp_path, obj, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


TRACE = {"name": "trace", "task": "edge-trace", "seed": 3,
         "model": {"symbol": {"kind": "domain_wall", "m": "x2 - 0.3*sin(x1)"}, "z0": [0, 0, 0, 0], "mu": 0.1},
         "numerics": {"T": 1.0, "dt": 0.01}}

SMALL_EVOLVE = {"name": "small", "task": "evolve", "model": {"wall": "periodic"},
                "numerics": {"h": 0.04, "T": 0.2, "L": [3.2, 3.2], "N": [128, 128], "snapshots": 4},
                "outputs": {"fields": True}}


def test_bundled_domain_wall_speed(tmp_path):
    rc = cli.main(["evolve", "--scenario", "domain-wall-speed", "--out", str(tmp_path)])
    assert rc == 0
    header, data = read_csv(tmp_path / "domain-wall-speed" / "speed.csv")
    row = dict(zip(header, data[0]))
    assert abs(row["speed"] - 1) < 0.03 and row["predicted_speed"] == 1.0
    assert row["vx1"] < 0


def test_all_bundled_scenarios_validate():
    paths = cli.bundled_scenarios()
    assert len(paths) >= 8
    for p in paths:
        cli.load_scenario(p)


def test_malformed_json_line_column(tmp_path):
    p = scenario(tmp_path, '{\n  "name": "x",\n  "task": "evolve"\n  "model": {}\n}')
    rc, msg = cli.run_scenario(p, str(tmp_path))
    assert rc == 2
    assert "line 4" in msg and "column 3" in msg


def test_schema_violation_exit_2(tmp_path):
    bad = dict(TRACE, numerics={"T": -1.0, "dt": 0.01})
    rc, msg = cli.run_scenario(scenario(tmp_path, bad), str(tmp_path))
    assert rc == 2 and "numerics/T" in msg
    rc, _ = cli.run_scenario(scenario(tmp_path, dict(TRACE, numerics={"T": 1.0}), "b.json"), str(tmp_path))
    assert rc == 2
    rc, _ = cli.run_scenario(scenario(tmp_path, dict(TRACE, extra=1), "c.json"), str(tmp_path))
    assert rc == 2


def test_task_mismatch_exit_2(tmp_path):
    rc, msg = cli.run_scenario(scenario(tmp_path, TRACE), str(tmp_path), task="evolve")
    assert rc == 2 and "does not match" in msg


def test_step_size_violation_exit_3(tmp_path):
    bad = dict(SMALL_EVOLVE, name="cfl", numerics=dict(SMALL_EVOLVE["numerics"], dt=1.0))
    rc, msg = cli.run_scenario(scenario(tmp_path, bad), str(tmp_path))
    assert rc == 3 and "StepSizeError" in msg and "bound" in msg
    diag = json.loads((tmp_path / "cfl" / "diagnostic.json").read_text())
    assert diag["error"] == "StepSizeError" and f"{diag['bound']:.3e}" in diag["message"]
    man = json.loads((tmp_path / "cfl" / "manifest.json").read_text())
    assert man["status"] == "failed"


def test_manifest_fields(tmp_path):
    rc, _ = cli.run_scenario(scenario(tmp_path, TRACE), str(tmp_path))
    assert rc == 0
    man = json.loads((tmp_path / "trace" / "manifest.json").read_text())
    for k in ("tool", "version", "scenario_sha256", "wall_time_s", "seed", "outputs", "status"):
        assert k in man
    assert man["seed"] == 3 and man["status"] == "ok" and man["outputs"] == ["edge.csv"]
    assert len(man["scenario_sha256"]) == 64


def test_rerun_is_bit_for_bit(tmp_path):
    p = scenario(tmp_path, SMALL_EVOLVE)
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert cli.run_scenario(p, str(d))[0] == 0
        outs.append({f: (d / "small" / f).read_bytes() for f in ("observables.csv", "speed.csv", "fields.bin")})
    assert outs[0] == outs[1]
    fields = read_array(tmp_path / "run0" / "small" / "fields.bin", complex_=True)
    assert fields.shape[1:] == (2, 128, 128)


def test_edge_trace_truncation_warning(tmp_path):
    obj = dict(TRACE, name="collapse", model={"symbol": {"kind": "domain_wall", "m": "x2*(1 + x1)"},
                                               "z0": [0, 0, 0, 0]}, numerics={"T": 2.0, "dt": 0.01})
    assert cli.run_scenario(scenario(tmp_path, obj), str(tmp_path))[0] == 0
    warn = json.loads((tmp_path / "collapse" / "edge_warning.json").read_text())
    assert warn["truncated"] and warn["t_end"] < 1.0


def test_edge_trace_csv(tmp_path):
    # straight wall: lambda = 1, so nu grows like mu t
    obj = dict(TRACE, model=dict(TRACE["model"], symbol={"kind": "domain_wall", "m": "x2"}))
    assert cli.run_scenario(scenario(tmp_path, obj), str(tmp_path))[0] == 0
    header, data = read_csv(tmp_path / "trace" / "edge.csv")
    assert header == ["t", "x1", "x2", "xi1", "xi2", "rho", "nu", "S"]
    assert data[0, 0] == 0 and data[-1, 0] == pytest.approx(1.0)
    assert np.allclose(data[:, 6], 0.1 * data[:, 0], atol=1e-12)


@pytest.mark.parametrize("name", ["linear-reduce", "magnetic-analyze", "haldane-cone", "curved-wall-envelope"])
def test_small_bundled_scenarios(tmp_path, name):
    assert cli.main(["run", "--scenario", name, "--out", str(tmp_path)]) == 0


def test_thread_count(monkeypatch):
    monkeypatch.delenv("DIRAC_EDGE_THREADS", raising=False)
    assert cli.thread_count() == 1
    monkeypatch.setenv("DIRAC_EDGE_THREADS", "3")
    assert cli.thread_count() == 3 and cli.thread_count(2) == 2
    with pytest.raises(ValueError):
        cli.thread_count(0)


def test_parallel_scenarios_exit_code_is_max(tmp_path, monkeypatch):
    monkeypatch.setenv("DIRAC_EDGE_THREADS", "2")
    good = scenario(tmp_path, TRACE)
    bad = scenario(tmp_path, "{", "bad.json")
    assert cli.main(["run", "--scenario", good, "--scenario", bad, "--out", str(tmp_path / "o")]) == 2
    assert os.path.exists(tmp_path / "o" / "trace" / "edge.csv")


def test_list(capsys):
    assert cli.main(["list"]) == 0
    assert "domain-wall-speed" in capsys.readouterr().out
