from __future__ import annotations

import json

import numpy as np
import pytest

from gradbasis.cli import main
from gradbasis.errors import InvalidInput
from gradbasis.harness import (
    CSV_FIELDS,
    ScenarioConfig,
    collect_reports,
    default_config,
    load_data_csv,
    run_scenario,
    sphere_points,
    summary_csv,
    synth_data,
)
from gradbasis.losses import LossKind
from gradbasis.models import Feedforward, ResNetForm, init_params
from gradbasis.report import VerificationReport
from gradbasis.training import loss_L


def test_synth_data_is_deterministic_per_seed():
    gen = {"generator": "gaussian", "m": 10, "d_x": 3, "d_y": 2}
    a, b = synth_data(gen, 4), synth_data(gen, 4)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert not np.array_equal(a.X, synth_data(gen, 5).X)


def test_normalized_sphere_rows(rng):
    d = synth_data({"generator": "normalized_sphere", "m": 8, "d_x": 4, "delta": 0.2}, 0)
    assert np.allclose(np.linalg.norm(d.X, axis=1), 1.0)
    G = d.X @ d.X.T - 2 * np.eye(8)
    assert np.max(G) < 0.8
    with pytest.raises(InvalidInput):
        sphere_points(50, 2, 0.5, rng, max_tries=2000)


def test_planted_teachers_are_fit_exactly(rng):
    spec = ResNetForm(2, (3, 4, 3), "relu", inner_params=tuple(rng.standard_normal(24)))
    data = synth_data({"generator": "planted_linear_teacher", "m": 12}, 1, spec)
    F = np.hstack([data.X, spec.z({}, data.X)])
    B = np.linalg.lstsq(F, data.Y, rcond=None)[0]
    assert np.max(np.abs(F @ B - data.Y)) < 1e-10

    ff = Feedforward((3, 5, 2), "relu")
    theta = init_params(ff, rng)
    d2 = synth_data({"generator": "planted_probe_teacher", "m": 12, "rank": 1}, 2, ff, theta)
    assert np.linalg.matrix_rank(d2.Y) == 1
    mats = theta.blocks()
    h = np.maximum(d2.X @ mats["W1"].T, 0)
    A = np.linalg.lstsq(h, d2.Y, rcond=None)[0]
    mats["W2"] = A.T
    fitted = theta.from_blocks(theta.layout, mats)
    assert loss_L(ff, fitted, d2, LossKind.squared()) < 1e-20


def test_config_round_trip_and_validation(tmp_path):
    cfg = default_config("example1_basis", seeds=[0, 3])
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.load(p) == cfg
    with pytest.raises(InvalidInput, match="unknown config keys"):
        ScenarioConfig.from_dict({"scenario": "example1_basis", "sedes": [0]})
    with pytest.raises(InvalidInput, match="unknown scenario"):
        ScenarioConfig(scenario="nope")
    with pytest.raises(InvalidInput):
        ScenarioConfig(scenario="example1_basis", seeds=[])
    with pytest.raises(InvalidInput, match="does not exist"):
        ScenarioConfig(scenario="example1_basis", data={"csv": str(tmp_path / "missing.csv")})


def test_report_round_trip(tmp_path):
    cfg = default_config("example1_basis", seeds=[0])
    rep = run_scenario(cfg, tmp_path)
    on_disk = json.loads((tmp_path / cfg.id / "report.json").read_text())
    assert on_disk["passed"] == rep["passed"]
    for s in on_disk["seeds"]:
        for r in s["reports"]:
            vr = VerificationReport.from_dict(r)
            assert vr.to_dict() == r
    assert collect_reports(tmp_path)[0]["id"] == cfg.id
    header = summary_csv([rep]).splitlines()[0]
    assert header.split(",") == list(CSV_FIELDS)


def test_data_csv_loading(tmp_path, rng):
    A = np.hstack([rng.standard_normal((6, 3)), rng.standard_normal((6, 2))])
    p = tmp_path / "data.csv"
    np.savetxt(p, A, delimiter=",", header="x0,x1,x2,y0,y1", comments="")
    d = load_data_csv(p, 2)
    assert np.allclose(d.X, A[:, :3]) and np.allclose(d.Y, A[:, 3:])
    with pytest.raises(InvalidInput):
        load_data_csv(p, 5)


def write_config(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def test_exit_code_pass(tmp_path, capsys):
    p = write_config(tmp_path, default_config("example1_basis", seeds=[0]).to_dict())
    assert main(["verify", "--config", str(p), "--out", str(tmp_path / "out")]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["report", "--in", str(tmp_path / "out"), "--csv", str(tmp_path / "s.csv")]) == 0
    assert (tmp_path / "s.csv").read_text().startswith("scenario,seed")


def test_exit_code_failure_and_error(tmp_path, capsys):
    # one optimizer step cannot reach stationarity, so the run reports a failed check
    cfg = {"scenario": "custom", "model": {"variant": "feedforward", "widths": [3, 4, 1], "activations": "tanh"},
           "data": {"m": 8, "d_x": 3}, "optimizer": {"max_iters": 1}, "seeds": [0], "epsilons": []}
    p = write_config(tmp_path, cfg)
    assert main(["verify", "--config", str(p), "--out", str(tmp_path / "out")]) == 1
    assert "FAIL" in capsys.readouterr().out
    assert main(["verify", "--config", str(tmp_path / "missing.json")]) == 2


def test_data_csv_scenario_runs(tmp_path, rng):
    X = rng.standard_normal((10, 3))
    A = np.hstack([X, X @ rng.standard_normal((3, 1))])
    np.savetxt(tmp_path / "d.csv", A, delimiter=",", header="a,b,c,y", comments="")
    cfg = {"scenario": "custom", "model": {"variant": "basis", "d_x": 3, "d_y": 1},
           "data": {"csv": "d.csv", "d_y": 1}, "epsilons": [], "seeds": [0]}
    p = write_config(tmp_path, cfg)
    rep = run_scenario(ScenarioConfig.load(p), write=False)
    assert rep["passed"]
