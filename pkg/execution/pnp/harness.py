"""
Experiment Harness

Dataset preparation (RGB -> complex object), sweeps over scan grids, noise
levels and solvers, metric tables and image export.

Every (image, grid, alpha, solver) tuple is independent: its measurements
are simulated from a seed derived from (seed, image id, grid, alpha), so
adding or removing a solver never changes another solver's data. Tuples run
in a process pool and rows are sorted by tuple key before writing.
"""

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, field_validator, model_validator

from execution.pnp.config import DEFAULT_BORDER, DEFAULT_OUTPUT_DIR
from execution.pnp.core_image import ComplexImage, decompose, evaluate, global_phase_align, wrap_phase
from execution.pnp.forward_model import (
    MAX_SEED,
    NoiseModel,
    add_shot_noise,
    forward,
    make_circular_probe,
    make_scan_grid,
)
from execution.pnp.formats import load_json, save_json, write_image
from execution.pnp.report import ResultRow, write_results
from execution.pnp.solvers import SolverConfig, reconstruct

logger = logging.getLogger(__name__)


# ============ PYDANTIC MODELS ============

class ProbeSettings(BaseModel):
    n: int = Field(84, ge=1, description="Probe window size N")
    radius: float = Field(40.0, gt=0, description="Binary disc radius in pixels")


class ExperimentConfig(BaseModel):
    """A full sweep, loaded from a JSON file."""
    images: list[str] = Field(..., min_length=1, description="Input RGB image paths")
    crop: int = Field(256, ge=1, description="Side of the central square crop")
    probe: ProbeSettings = Field(default_factory=ProbeSettings)
    grids: list[tuple[int, int]] = Field(..., min_length=1, description="Scan lattices (rows, cols)")
    alphas: list[float] = Field(..., min_length=1, description="Noise levels")
    noise_model: NoiseModel = Field(NoiseModel.SHOT, description="Intensity-domain noise model")
    seed: int = Field(0, ge=0, lt=MAX_SEED, description="Master seed")
    solvers: list[SolverConfig] = Field(..., min_length=1, description="Solvers to compare")
    border: int = Field(DEFAULT_BORDER, ge=0, description="Pixels excluded from metrics on each side")
    output_dir: str = Field(DEFAULT_OUTPUT_DIR, description="Where results and images are written")
    threads: Optional[int] = Field(None, ge=1, description="Worker processes (results do not depend on it)")
    save_images: bool = Field(True, description="Export PNG and CIMG1 per tuple")

    @field_validator("images")
    @classmethod
    def _check_image_ids(cls, images):
        ids = [image_id(p) for p in images]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValueError(f"Image ids (file stems) must be unique, got duplicates {duplicates}")
        return images

    @field_validator("grids")
    @classmethod
    def _check_grids(cls, grids):
        for rows, cols in grids:
            if rows < 1 or cols < 1:
                raise ValueError(f"Grid {rows}x{cols} must have at least one row and column")
        return grids

    @field_validator("alphas")
    @classmethod
    def _check_alphas(cls, alphas):
        if any(a < 0 for a in alphas):
            raise ValueError("Noise levels must be nonnegative")
        return alphas

    @model_validator(mode="after")
    def _check_solver_names(self) -> "ExperimentConfig":
        names = [s.name for s in self.solvers]
        if len(set(names)) != len(names):
            raise ValueError(f"Solver names must be unique, got {names}")
        if self.probe.n > self.crop:
            raise ValueError(f"Probe window {self.probe.n} larger than crop {self.crop}")
        return self


class PreparedImage(BaseModel):
    image_id: str
    path: str
    theta0: float


# ============ DATASET PREPARATION ============

def image_id(path: str) -> str:
    """Images are keyed by file stem in seeds, rows and exported names."""
    return Path(path).stem


def derive_seed(*parts) -> int:
    """Stable u64 seed from arbitrary key parts."""
    key = "|".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def tuple_seed(seed: int, image_id: str, grid: tuple[int, int], alpha: float) -> int:
    return derive_seed(seed, image_id, tuple(grid), float(alpha))


def load_rgb(path: str, crop: int) -> np.ndarray:
    """Central crop x crop region as float64 RGB in [0, 1]."""
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    h, w = rgb.shape[:2]
    if crop > min(h, w):
        raise ValueError(f"Crop {crop} larger than image {h}x{w} ({path})")
    top, left = (h - crop) // 2, (w - crop) // 2
    return rgb[top:top + crop, left:left + crop] / 255.0


def draw_global_phase(seed: Optional[int]) -> float:
    """theta0 uniform in [-pi, pi)."""
    return float(np.random.default_rng(seed).uniform(-np.pi, np.pi))


def rgb_to_complex(rgb: np.ndarray, seed: Optional[int] = None, theta0: Optional[float] = None) -> ComplexImage:
    """
    Amplitude (R + G) / 2, phase wrap(2 pi B - pi + theta0).

    theta0 is drawn from the seeded generator unless given explicitly.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"Expected an H x W x 3 image, got shape {rgb.shape}")
    if theta0 is None:
        theta0 = draw_global_phase(seed)

    amplitude = (rgb[..., 0] + rgb[..., 1]) / 2.0
    phase = wrap_phase(2.0 * np.pi * rgb[..., 2] - np.pi + theta0)
    return amplitude * np.exp(1j * phase)


def prepare_image(path: str, crop: int, seed: int) -> tuple[PreparedImage, ComplexImage]:
    key = image_id(path)
    theta0 = draw_global_phase(derive_seed(seed, key))
    x = rgb_to_complex(load_rgb(path, crop), theta0=theta0)
    return PreparedImage(image_id=key, path=str(path), theta0=theta0), x


# ============ IMAGE EXPORT ============

def phase_to_uint8(phase: np.ndarray) -> np.ndarray:
    """(-pi, pi] linearly onto 0..255."""
    scaled = (np.asarray(phase, dtype=np.float64) + np.pi) / (2.0 * np.pi) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def uint8_to_phase(levels: np.ndarray) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) / 255.0 * 2.0 * np.pi - np.pi


def amplitude_to_uint8(amplitude: np.ndarray, peak: float = 1.0) -> np.ndarray:
    scaled = np.asarray(amplitude, dtype=np.float64) / peak * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def export_images(x: ComplexImage, stem: Path, peak: float = 1.0) -> None:
    """<stem>_amplitude.png, <stem>_phase.png and <stem>.cimg."""
    stem.parent.mkdir(parents=True, exist_ok=True)
    amplitude, phase = decompose(x)
    Image.fromarray(amplitude_to_uint8(amplitude, peak)).save(f"{stem}_amplitude.png")
    Image.fromarray(phase_to_uint8(phase)).save(f"{stem}_phase.png")
    write_image(f"{stem}.cimg", x)


# ============ SWEEP ============

@dataclass(frozen=True)
class TupleTask:
    """One unit of work for the pool."""
    image_id: str
    x: np.ndarray
    grid: tuple[int, int]
    alpha: float
    seed: int
    solver: SolverConfig
    probe: ProbeSettings
    noise_model: NoiseModel
    border: int
    image_dir: Optional[str] = None


def _tuple_stem(task: TupleTask) -> str:
    rows, cols = task.grid
    return f"{task.image_id}_{rows}x{cols}_a{task.alpha:g}_{task.solver.name}"


def run_tuple(task: TupleTask) -> ResultRow:
    """Simulate, reconstruct and score one tuple. Failures end up in the row."""
    rows, cols = task.grid
    row = ResultRow(image_id=task.image_id, solver=task.solver.name, grid_rows=rows, grid_cols=cols, alpha=task.alpha)
    start = time.perf_counter()
    try:
        h, w = task.x.shape
        probe = make_circular_probe(task.probe.n, task.probe.radius)
        geometry = make_scan_grid(h, w, rows, cols, task.probe.n)
        measurements = forward(task.x, probe, geometry, workers=task.solver.threads)
        measurements = add_shot_noise(measurements, task.alpha, task.seed, task.noise_model)

        solver = task.solver
        if solver.border != task.border:
            solver = solver.model_copy(update={"border": task.border})
        state = reconstruct(measurements, solver)
        report = evaluate(state.x, task.x, task.border)

        row.psnr_a = report.psnr_amplitude
        row.psnr_phi = report.psnr_phase
        row.iterations = state.k
        if task.image_dir is not None:
            export_images(global_phase_align(state.x, task.x), Path(task.image_dir) / _tuple_stem(task))
    except Exception as e:
        logger.error(f"Tuple {_tuple_stem(task)} failed: {e}")
        row.error = f"{type(e).__name__}: {e}"
    row.wall_time = time.perf_counter() - start
    if row.error is None:
        logger.info(f"{_tuple_stem(task)}: PSNR_a={row.psnr_a:.2f} PSNR_phi={row.psnr_phi:.2f} ({row.wall_time:.1f}s)")
    return row


def build_tasks(config: ExperimentConfig, images: list[tuple[PreparedImage, ComplexImage]]) -> list[TupleTask]:
    image_dir = str(Path(config.output_dir) / "images") if config.save_images else None
    tasks = []
    for prepared, x in images:
        for grid in config.grids:
            for alpha in config.alphas:
                seed = tuple_seed(config.seed, prepared.image_id, grid, alpha)
                for solver in config.solvers:
                    tasks.append(TupleTask(
                        image_id=prepared.image_id,
                        x=x,
                        grid=tuple(grid),
                        alpha=alpha,
                        seed=seed,
                        solver=solver,
                        probe=config.probe,
                        noise_model=config.noise_model,
                        border=config.border,
                        image_dir=image_dir,
                    ))
    return tasks


def _run_tasks(tasks: list[TupleTask], threads: Optional[int]) -> list[ResultRow]:
    if not threads or threads == 1 or len(tasks) == 1:
        return [run_tuple(t) for t in tasks]

    # one FFT worker per process, the pool provides the parallelism
    tasks = [replace(t, solver=t.solver.model_copy(update={"threads": 1})) for t in tasks]
    rows = []
    with ProcessPoolExecutor(max_workers=threads) as ex:
        futures = {ex.submit(run_tuple, t): t for t in tasks}
        for f in as_completed(futures):
            rows.append(f.result())
    return rows


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """
    Run the full sweep and write results.csv, summary.csv, summary.txt,
    manifest.json and (optionally) per-tuple images under config.output_dir.

    Returns the rows sorted by (image, grid, alpha, solver).
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    images = [prepare_image(path, config.crop, config.seed) for path in config.images]
    if config.save_images:
        for prepared, x in images:
            export_images(x, out_dir / "images" / f"{prepared.image_id}_gt")

    tasks = build_tasks(config, images)
    logger.info(
        f"Running {len(tasks)} tuples ({len(images)} images x {len(config.grids)} grids x "
        f"{len(config.alphas)} alphas x {len(config.solvers)} solvers)"
    )
    rows = sorted(_run_tasks(tasks, config.threads), key=lambda r: r.sort_key)

    write_results(rows, out_dir)
    save_json(out_dir / "manifest.json", {
        "config": config.model_dump(mode="json"),
        "images": [prepared.model_dump() for prepared, _ in images],
        "tuples": sorted(
            {(t.image_id, f"{t.grid[0]}x{t.grid[1]}", t.alpha, t.seed) for t in tasks}
        ),
    })

    failed = sum(1 for r in rows if r.error is not None)
    if failed:
        logger.warning(f"{failed} of {len(rows)} tuples failed; see the error column")
    return rows


def load_experiment_config(
    path: str,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    threads: Optional[int] = None,
) -> ExperimentConfig:
    """Read a JSON experiment file; explicit arguments override file values."""
    data = load_json(path)
    overrides = {"seed": seed, "output_dir": output_dir, "threads": threads}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)
