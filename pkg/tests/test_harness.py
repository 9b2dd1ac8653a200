import numpy as np
import pandas as pd
import pytest
from PIL import Image
from pydantic import ValidationError

from conftest import ROOT, fixture_command
from execution.pnp.formats import load_json, read_image
from execution.pnp.harness import (
    ExperimentConfig,
    PreparedImage,
    build_tasks,
    derive_seed,
    draw_global_phase,
    image_id,
    load_experiment_config,
    load_rgb,
    phase_to_uint8,
    prepare_image,
    rgb_to_complex,
    run_experiment,
    tuple_seed,
    uint8_to_phase,
)


def _write_png(path, seed):
    rng = np.random.default_rng(seed)
    ii, jj = np.mgrid[0:64, 0:64] / 63.0
    rgb = np.stack([
        0.3 + 0.5 * ii,
        0.2 + 0.6 * jj,
        0.5 + 0.3 * np.sin(3 * ii + 2 * jj + rng.uniform(0, 1)),
    ], axis=-1)
    Image.fromarray(np.rint(rgb * 255).astype(np.uint8)).save(path)
    return str(path)


@pytest.fixture
def images(tmp_path):
    return [_write_png(tmp_path / "desk_a.png", 1), _write_png(tmp_path / "desk_b.png", 2)]


def _config(images, out_dir, **overrides):
    data = {
        "images": images,
        "crop": 48,
        "probe": {"n": 24, "radius": 12},
        "grids": [[5, 5]],
        "alphas": [0.0],
        "seed": 7,
        "border": 4,
        "output_dir": str(out_dir),
        "solvers": [
            {"name": "simpie", "algorithm": "simpie", "iterations": 50, "border": 4},
            {"name": "flat", "algorithm": "simpie", "iterations": 0, "border": 4},
        ],
    }
    data.update(overrides)
    return ExperimentConfig.model_validate(data)


# ============ DATASET PREPARATION ============

def test_rgb_to_complex_channels():
    rgb = np.zeros((2, 2, 3))
    rgb[0, 0] = [1.0, 1.0, 0.5]
    x = rgb_to_complex(rgb, theta0=0.0)
    assert x[0, 0] == pytest.approx(1.0 + 0j, abs=1e-15)
    assert x[1, 1] == 0


def test_rgb_to_complex_seeded_phase_is_deterministic(rng):
    rgb = rng.uniform(0, 1, (4, 4, 3))
    np.testing.assert_array_equal(rgb_to_complex(rgb, seed=11), rgb_to_complex(rgb, seed=11))


def test_rgb_to_complex_rejects_wrong_channels():
    with pytest.raises(ValueError):
        rgb_to_complex(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        rgb_to_complex(np.zeros((4, 4)))


def test_global_phase_range():
    draws = [draw_global_phase(s) for s in range(200)]
    assert all(-np.pi <= t < np.pi for t in draws)


def test_load_rgb_central_crop(tmp_path):
    arr = np.zeros((10, 12, 3), dtype=np.uint8)
    arr[2:8, 3:9] = 255
    Image.fromarray(arr).save(tmp_path / "box.png")
    rgb = load_rgb(str(tmp_path / "box.png"), 6)
    assert rgb.shape == (6, 6, 3)
    assert np.all(rgb == 1.0)
    with pytest.raises(ValueError):
        load_rgb(str(tmp_path / "box.png"), 11)


def test_prepare_image_records_theta0(images):
    prepared, x = prepare_image(images[0], 48, seed=3)
    assert prepared.image_id == "desk_a"
    assert prepared.theta0 == draw_global_phase(derive_seed(3, "desk_a"))
    assert x.shape == (48, 48)


def test_phase_png_quantisation(rng):
    phase = rng.uniform(-np.pi, np.pi, (32, 32))
    back = uint8_to_phase(phase_to_uint8(phase))
    assert np.max(np.abs(back - phase)) <= 2 * np.pi / 255


# ============ CONFIGURATION ============

def test_config_validation(images, tmp_path):
    with pytest.raises(ValidationError):
        _config(images, tmp_path, alphas=[])
    with pytest.raises(ValidationError):
        _config(images, tmp_path, alphas=[-1.0])
    with pytest.raises(ValidationError):
        _config(images, tmp_path, grids=[[0, 3]])
    with pytest.raises(ValidationError):
        _config(images, tmp_path, solvers=[{"name": "a"}, {"name": "a"}])
    with pytest.raises(ValidationError):
        _config(images, tmp_path, probe={"n": 64, "radius": 10})


def test_config_rejects_images_sharing_a_stem(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    clash = [_write_png(tmp_path / "a" / "desk.png", 1), _write_png(tmp_path / "b" / "desk.png", 2)]
    with pytest.raises(ValidationError, match="desk"):
        _config(clash, tmp_path)
    assert image_id(clash[0]) == image_id(clash[1]) == "desk"


def test_load_experiment_config_overrides(tmp_path, images):
    path = tmp_path / "exp.json"
    path.write_text(_config(images, tmp_path / "a").model_dump_json(), encoding="utf-8")
    config = load_experiment_config(str(path), seed=99, output_dir=str(tmp_path / "b"))
    assert config.seed == 99
    assert config.output_dir == str(tmp_path / "b")
    assert config.crop == 48


def test_desk_directive_config():
    config = load_experiment_config(str(ROOT / "directives" / "desk_reproduction.json"))
    assert config.grids == [(7, 7), (9, 9), (11, 11), (15, 15)]
    assert config.alphas == [10, 20, 30, 40]
    by_name = {s.name: s for s in config.solvers}
    assert by_name["hqs-tv"].n_iterations == 600
    assert by_name["hqs-tv"].init.iterations == 100
    assert by_name["simpie"].n_iterations == by_name["seqpie"].n_iterations == 2000


# ============ SEEDS ============

def test_tuple_seed_independent_of_solver_list(images, tmp_path):
    prepared = [(PreparedImage(image_id="desk_a", path=images[0], theta0=0.0), np.ones((48, 48), dtype=complex))]
    one = build_tasks(_config(images, tmp_path, solvers=[{"name": "simpie", "algorithm": "simpie"}]), prepared)
    two = build_tasks(_config(images, tmp_path), prepared)
    assert one[0].seed == two[0].seed == two[1].seed == tuple_seed(7, "desk_a", (5, 5), 0.0)


def test_tuple_seed_changes_with_key():
    base = tuple_seed(7, "desk_a", (7, 7), 10.0)
    assert base != tuple_seed(8, "desk_a", (7, 7), 10.0)
    assert base != tuple_seed(7, "desk_b", (7, 7), 10.0)
    assert base != tuple_seed(7, "desk_a", (15, 15), 10.0)
    assert base != tuple_seed(7, "desk_a", (7, 7), 20.0)
    assert 0 <= base < 2 ** 64


# ============ SWEEP ============

def test_small_experiment(images, tmp_path):
    out = tmp_path / "run"
    rows = run_experiment(_config(images, out))

    assert [(r.image_id, r.solver) for r in rows] == [
        ("desk_a", "flat"), ("desk_a", "simpie"), ("desk_b", "flat"), ("desk_b", "simpie"),
    ]
    assert all(r.error is None for r in rows)
    by_key = {(r.image_id, r.solver): r for r in rows}
    for key in ("desk_a", "desk_b"):
        assert by_key[(key, "simpie")].psnr_a > by_key[(key, "flat")].psnr_a
        assert by_key[(key, "simpie")].iterations == 50

    for name in ("results.csv", "summary.csv", "summary.txt", "manifest.json"):
        assert (out / name).exists()
    assert read_image(out / "images" / "desk_a_gt.cimg").shape == (48, 48)
    assert (out / "images" / "desk_b_5x5_a0_simpie_phase.png").exists()

    manifest = load_json(out / "manifest.json")
    assert [img["image_id"] for img in manifest["images"]] == ["desk_a", "desk_b"]
    assert len(manifest["tuples"]) == 2


def test_rerun_is_deterministic(images, tmp_path):
    first = run_experiment(_config(images, tmp_path / "one", alphas=[0.0, 0.5], save_images=False))
    second = run_experiment(_config(images, tmp_path / "two", alphas=[0.0, 0.5], save_images=False, threads=2))
    assert len(first) == len(second) == 8

    a = pd.read_csv(tmp_path / "one" / "results.csv").drop(columns="wall_time")
    b = pd.read_csv(tmp_path / "two" / "results.csv").drop(columns="wall_time")
    pd.testing.assert_frame_equal(a, b)


def test_failing_solver_does_not_stop_the_sweep(images, tmp_path):
    failing = {
        "name": "ext",
        "algorithm": "hqs",
        "iterations": 2,
        "border": 4,
        "init": {"kind": "flat"},
        "denoiser": {"kind": "external", "command": fixture_command("failing_denoiser.py"), "timeout_secs": 30},
    }
    config = _config(
        images[:1], tmp_path, save_images=False,
        solvers=[failing, {"name": "simpie", "algorithm": "simpie", "iterations": 5, "border": 4}],
    )
    rows = run_experiment(config)
    by_solver = {r.solver: r for r in rows}
    assert by_solver["ext"].error.startswith("ExternalDenoiserFailed")
    assert by_solver["ext"].psnr_a is None
    assert by_solver["simpie"].error is None
    assert (tmp_path / "summary.txt").exists()
