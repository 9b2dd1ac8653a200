import json

import numpy as np
import pytest
from PIL import Image
from typer.testing import CliRunner

from execution.ptycho_cli import app, parse_grid
from execution.pnp.formats import read_image, write_image

runner = CliRunner()


def _json(result):
    text = result.output
    return json.loads(text[text.index("{\n"):])


def test_parse_grid():
    assert parse_grid("7x7") == (7, 7)
    assert parse_grid("15X3") == (15, 3)
    with pytest.raises(ValueError):
        parse_grid("7by7")


def test_probe_diagnostics():
    result = runner.invoke(app, ["probe", "--grid", "7x7", "--grid", "15x15"])
    assert result.exit_code == 0
    out = _json(result)
    assert out["status"] == "success"
    coarse, fine = out["grids"]
    assert coarse["n_positions"] == 49 and fine["n_positions"] == 225
    assert coarse["overlap"] == pytest.approx(0.38, abs=0.02)
    assert fine["overlap"] == pytest.approx(0.68, abs=0.02)
    assert coarse["min_weight_in_crop"] >= 1.0


def test_simulate_reconstruct_evaluate(tmp_path):
    ii, jj = np.mgrid[0:48, 0:48] / 47.0
    x = (0.4 + 0.4 * ii) * np.exp(1j * (jj - 0.5))
    write_image(tmp_path / "desk.cimg", x)
    solver = tmp_path / "simpie.json"
    solver.write_text(json.dumps({"name": "simpie", "algorithm": "simpie", "iterations": 5, "border": 4}))

    sim = runner.invoke(app, [
        "simulate", "--object", str(tmp_path / "desk.cimg"), "--grid", "5x5", "--n", "24",
        "--radius", "12", "--alpha", "0.1", "--noise-model", "shot", "--seed", "3", "--out", str(tmp_path / "sim"),
    ])
    assert sim.exit_code == 0, sim.output
    sim_out = _json(sim)
    assert sim_out["n_positions"] == 25
    np.testing.assert_array_equal(read_image(sim_out["object"]), x)

    reco = runner.invoke(app, [
        "reconstruct", "--measurements", sim_out["measurements"], "--config", str(solver),
        "--out", str(tmp_path / "reco"),
    ])
    assert reco.exit_code == 0, reco.output
    reco_out = _json(reco)
    assert reco_out["iterations"] == 5
    assert (tmp_path / "reco" / "residuals.csv").exists()

    ev = runner.invoke(app, ["evaluate", "--reco", reco_out["reconstruction"], "--gt", sim_out["object"], "--border", "4"])
    assert ev.exit_code == 0, ev.output
    ev_out = _json(ev)
    assert ev_out["status"] == "success"
    assert np.isfinite(ev_out["psnr_amplitude"]) and np.isfinite(ev_out["psnr_phase"])


def test_evaluate_missing_file(tmp_path):
    result = runner.invoke(app, ["evaluate", "--reco", str(tmp_path / "none.cimg"), "--gt", str(tmp_path / "gt.cimg")])
    assert result.exit_code == 1
    out = _json(result)
    assert out["status"] == "error" and out["error"]


def test_reconstruct_rejects_bad_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"algorithm": "gradient_descent"}))
    result = runner.invoke(app, ["reconstruct", "--measurements", str(tmp_path / "m.pmeas"), "--config", str(bad)])
    assert result.exit_code == 1
    assert _json(result)["status"] == "error"


def test_experiment_command(tmp_path):
    rgb = np.full((56, 56, 3), 128, dtype=np.uint8)
    rgb[10:40, 20:50, 0] = 230
    Image.fromarray(rgb).save(tmp_path / "desk.png")
    config = {
        "images": [str(tmp_path / "desk.png")],
        "crop": 48,
        "probe": {"n": 24, "radius": 12},
        "grids": [[5, 5]],
        "alphas": [0.0],
        "border": 4,
        "save_images": False,
        "solvers": [{"name": "simpie", "algorithm": "simpie", "iterations": 3, "border": 4}],
    }
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(config))

    result = runner.invoke(app, ["experiment", "--config", str(path), "--out", str(tmp_path / "run"), "--threads", "1"])
    assert result.exit_code == 0, result.output
    out = _json(result)
    assert out["rows"] == 1 and out["failed"] == 0
    assert (tmp_path / "run" / "summary.txt").exists()
