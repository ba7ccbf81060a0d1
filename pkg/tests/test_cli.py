import json

import numpy as np
import pytest

from uph_snmpc import cli
from uph_snmpc.sim import SimLog, SimulationAborted
from uph_snmpc.track import load_reference_csv

SHORT = {"schema_version": 1, "duration": 0.8, "seeds": [3]}


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def errors(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_defaults(capsys):
    assert cli.main(["defaults"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["derived"] == {"kappa": pytest.approx(0.5), "N_p": 38, "N_u": 5}
    assert d["disturbance"]["sigma_sim"] == [0.1, 0.1, 0.05, 0.8, 0.35, 0.035, 0.01]
    o = d["ocp"]
    assert (o["T_s"], o["T_p"], o["T_u"], o["p"], o["n_s"], o["d_max"]) == (0.08, 3.04, 0.4, 0.8, 10, 2)
    assert o["sigma_w_snmpc"] == [0.8, 0.35, 0.035]
    assert o["Q"] == o["Q_e"] == [2.8, 2.8, 0.4, 0.2] and o["R"] == [38.1, 101.4]
    assert d["filter_windows"] == [1, 1, 4, 2, 2, 3, 4, 2]


def test_defaults_are_a_valid_config(tmp_path, capsys):
    cli.main(["defaults"])
    path = tmp_path / "d.json"
    path.write_text(capsys.readouterr().out)
    assert cli.main(["validate", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["cells"] == 2


@pytest.mark.parametrize("patch", [
    {"seeds": []},
    {"seeds": [1, 1]},
    {"seeds": [-1]},
    {"controllers": ["pid"]},
    {"controllers": []},
    {"schema_version": 2},
    {"bogus": 1},
    {"ocp": {"T_u": 9.0}},
    {"ocp": {"nope": 1}},
    {"duration": 1.0},
    {"track": {"kind": "oval", "straight_len": 100, "radius": 5, "v_max": 10}},
    {"track": {"path": "missing.csv"}},
    {"filter_windows": [1, 2]},
    {"disturbance": {"sigma_sim": [0.1] * 6}},
    {"ocp_variants": [{"name": "a"}, {"name": "a"}]},
])
def test_validation_failures(tmp_path, capsys, patch):
    path = write(tmp_path, {**SHORT, **patch})
    assert cli.main(["validate", str(path)]) == 1
    assert errors(capsys)["error"] == "validation"
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


def test_invalid_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["run", str(path)]) == 1
    assert errors(capsys)["error"] == "validation"


def test_paired_run_and_replay(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["run", str(write(tmp_path, SHORT)), "--out", str(out), "--parallel", "1"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1
    (pair,) = summary["paired"]
    dev = pair["max_abs_lateral_dev"]
    assert dev["ratio"] == pytest.approx(dev["snmpc"] / dev["nominal"])
    assert {c["id"] for c in summary["cells"]} == {"base/nominal/seed3", "base/snmpc/seed3"}
    cell = out / "cells" / "base" / "snmpc" / "seed3"
    for name in ("simlog.csv", "timing.csv", "gg.csv", "velocity.csv", "lateral_dev.csv", "solver_status.csv"):
        text = (cell / name).read_text()
        assert "nan" not in text.lower()
        assert len(text.splitlines()) == 11
    # the emitted config replays to the same bytes
    out2 = tmp_path / "o2"
    assert cli.main(["run", str(out / "config.json"), "--out", str(out2), "--parallel", "1"]) == 0
    assert (cell / "simlog.csv").read_bytes() == (out2 / "cells/base/snmpc/seed3/simlog.csv").read_bytes()
    assert json.loads((out2 / "config.json").read_text()) == json.loads((out / "config.json").read_text())


def test_uph_ablation_cells(tmp_path):
    cfg = {**SHORT, "controllers": ["snmpc"], "ocp_variants": [{"name": "full", "T_u": 3.04}, {"name": "uph", "T_u": 0.8}]}
    out = tmp_path / "o"
    assert cli.main(["run", str(write(tmp_path, cfg)), "--out", str(out), "--parallel", "2"]) == 0
    for v in ("full", "uph"):
        rows = (out / "cells" / v / "snmpc" / "seed3" / "solver_status.csv").read_text().splitlines()
        assert rows[0] == "step,t,status,qp_iterations" and len(rows) == 11
    summary = json.loads((out / "summary.json").read_text())
    assert summary["paired"] == []
    assert summary["config"]["ocp_variants"] == [{"name": "full", "T_u": 3.04}, {"name": "uph", "T_u": 0.8}]


def test_mid_run_abort_exit_code(tmp_path, capsys, monkeypatch):
    def explode(controller, *args, **kwargs):
        log = SimLog(controller, 0.08)
        log.abort_reason = "step 0: synthetic"
        raise SimulationAborted(log.abort_reason, log)

    monkeypatch.setattr(cli, "run_closed_loop", explode)
    assert cli.main(["run", str(write(tmp_path, SHORT)), "--out", str(tmp_path / "o"), "--parallel", "1"]) == 2
    err = errors(capsys)
    assert err["error"] == "aborted" and len(err["cells"]) == 2
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert all(c["aborted"] and c["metrics"] is None for c in summary["cells"])


def test_synthesize_track(tmp_path, capsys):
    spec = write(tmp_path, {"kind": "oval", "straight_len": 100.0, "radius": 30.0, "v_max": 20.0}, "t.json")
    assert cli.main(["synthesize-track", str(spec), str(tmp_path / "t.csv")]) == 0
    traj = load_reference_csv(tmp_path / "t.csv")
    assert traj.closed and np.isclose(traj.length, 200 + 2 * np.pi * 30)
    bad = write(tmp_path, {"kind": "oval", "radius": 30.0}, "b.json")
    assert cli.main(["synthesize-track", str(bad), str(tmp_path / "b.csv")]) == 1
    assert errors(capsys)["error"] == "validation"


def test_track_file_relative_to_config(tmp_path, capsys):
    spec = write(tmp_path, {"kind": "oval", "straight_len": 100.0, "radius": 30.0, "v_max": 12.0}, "t.json")
    cli.main(["synthesize-track", str(spec), str(tmp_path / "t.csv")])
    path = write(tmp_path, {**SHORT, "track": {"path": "t.csv"}})
    assert cli.main(["validate", str(path)]) == 0


def test_log_level_env(monkeypatch):
    monkeypatch.setenv(cli.LOG_ENV, "debug")
    cli._setup_logging()
    monkeypatch.setenv(cli.LOG_ENV, "not-a-level")
    cli._setup_logging()
