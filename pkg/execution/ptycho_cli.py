"""
Ptychography CLI - Simulation, Reconstruction and Evaluation Tool

Every command prints a JSON result (status = success | error) on stdout.
Binary artifacts go under --out (default .tmp/).

COMMANDS:
---------
simulate      Object + scan geometry -> PMEAS1 measurements (+ probe CIMG1)
reconstruct   PMEAS1 + solver config -> CIMG1 reconstruction + residual CSV
evaluate      Reconstruction + ground truth -> PSNR metrics
experiment    Full sweep from an experiment config file
probe         Probe / geometry diagnostics (L, overlap, coverage)

USAGE EXAMPLES:
---------------
python -m execution.ptycho_cli simulate --object photo.jpg --grid 7x7 --alpha 20 --seed 1
python -m execution.ptycho_cli reconstruct --measurements .tmp/measurements.pmeas --config directives/solver_hqs_tv.json
python -m execution.ptycho_cli evaluate --reco .tmp/reconstruction.cimg --gt .tmp/object.cimg
python -m execution.ptycho_cli experiment --config directives/desk_reproduction.json --threads 4
python -m execution.ptycho_cli probe --grid 7x7 --grid 15x15
"""

import logging
from pathlib import Path
from typing import Optional

import typer
from pydantic import BaseModel, Field

from execution.pnp.config import DEFAULT_BORDER, DEFAULT_OUTPUT_DIR, DEFAULT_THREADS, LOG_LEVEL, get_runtime_config
from execution.pnp.core_image import evaluate as evaluate_images
from execution.pnp.formats import load_json, read_image, read_measurements, write_image, write_measurements
from execution.pnp.forward_model import (
    NoiseModel,
    add_shot_noise,
    forward,
    intensity_weight_map,
    make_circular_probe,
    make_scan_grid,
    min_weight_in_crop,
    overlap_fraction,
)
from execution.pnp.harness import derive_seed, image_id, load_experiment_config, load_rgb, rgb_to_complex, run_experiment
from execution.pnp.report import write_residual_log
from execution.pnp.solvers import SolverConfig, reconstruct as run_solver

logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

app = typer.Typer(help="Plug-and-play ptychography toolkit")


# ============ PYDANTIC MODELS ============

class SimulateOutput(BaseModel):
    """Output model for simulate command."""
    status: str = Field(..., description="success or error")
    measurements: Optional[str] = Field(None, description="PMEAS1 file")
    probe: Optional[str] = Field(None, description="Probe CIMG1 file")
    object: Optional[str] = Field(None, description="Ground-truth object CIMG1 file")
    n_positions: int = Field(0, description="Number of probe positions L")
    overlap: Optional[float] = Field(None, description="Overlap fraction of adjacent positions")
    error: Optional[str] = Field(None, description="Error message if any")


class ReconstructOutput(BaseModel):
    """Output model for reconstruct command."""
    status: str
    reconstruction: Optional[str] = Field(None, description="CIMG1 reconstruction")
    residual_log: Optional[str] = Field(None, description="Per-iteration residual CSV")
    iterations: int = Field(0, description="Iterations run")
    final_residual: Optional[float] = Field(None, description="Relative residual after the last iteration")
    error: Optional[str] = None


class EvaluateOutput(BaseModel):
    """Output model for evaluate command."""
    status: str
    psnr_amplitude: Optional[float] = Field(None, description="Amplitude PSNR in dB")
    psnr_phase: Optional[float] = Field(None, description="Phase PSNR in dB")
    amplitude_saturated: bool = False
    phase_saturated: bool = False
    border: int = 0
    error: Optional[str] = None


class ExperimentOutput(BaseModel):
    """Output model for experiment command."""
    status: str
    output_dir: Optional[str] = None
    rows: int = Field(0, description="Result rows written")
    failed: int = Field(0, description="Tuples that failed")
    error: Optional[str] = None


class GridDiagnostics(BaseModel):
    grid: str
    n_positions: int
    stride: Optional[int] = Field(None, description="Column step between adjacent positions")
    overlap: Optional[float] = None
    min_weight_in_crop: float = Field(..., description="Smallest summed probe intensity inside the metric crop")


class ProbeOutput(BaseModel):
    """Output model for probe command."""
    status: str
    n: int = 0
    radius: float = 0.0
    image_size: int = 0
    border: int = 0
    grids: list[GridDiagnostics] = Field(default_factory=list)
    error: Optional[str] = None


# ============ HELPER FUNCTIONS ============

def parse_grid(text: str) -> tuple[int, int]:
    """'7x7' -> (7, 7)."""
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"Grid must look like ROWSxCOLS, got {text!r}")
    return rows, cols


def load_solver_config(path: Optional[str], threads: Optional[int] = None, iterations: Optional[int] = None) -> SolverConfig:
    config = SolverConfig.model_validate(load_json(path)) if path else SolverConfig()
    updates = {"threads": threads, "iterations": iterations}
    updates = {k: v for k, v in updates.items() if v is not None}
    return config.model_copy(update=updates) if updates else config


def load_object(path: str, crop: int, seed: Optional[int]):
    """CIMG1 files are used as-is; anything else is prepared from RGB."""
    if path.endswith(".cimg"):
        return read_image(path)
    image_seed = derive_seed(seed, image_id(path)) if seed is not None else None
    return rgb_to_complex(load_rgb(path, crop), seed=image_seed)


def emit(output: BaseModel) -> None:
    print(output.model_dump_json(indent=2))
    if getattr(output, "status", "error") != "success":
        raise typer.Exit(code=1)


# ============ COMMANDS ============

@app.command("simulate")
def simulate(
    object_path: str = typer.Option(..., "--object", help="CIMG1 object or RGB image"),
    grid: str = typer.Option("7x7", help="Scan lattice ROWSxCOLS"),
    n: int = typer.Option(84, help="Probe window size N"),
    radius: float = typer.Option(40.0, help="Probe disc radius"),
    crop: int = typer.Option(256, help="Central crop for RGB inputs"),
    alpha: float = typer.Option(0.0, help="Noise level (0 = noiseless)"),
    noise_model: NoiseModel = typer.Option(NoiseModel.INTENSITY, "--noise-model", help="intensity or shot"),
    seed: int = typer.Option(0, help="Noise / global-phase seed (u64)"),
    out: str = typer.Option(DEFAULT_OUTPUT_DIR, help="Output directory"),
    threads: Optional[int] = typer.Option(None, help="FFT workers"),
):
    """Simulate far-field measurements of an object."""
    try:
        x = load_object(object_path, crop, seed)
        rows, cols = parse_grid(grid)
        probe = make_circular_probe(n, radius)
        geometry = make_scan_grid(x.shape[0], x.shape[1], rows, cols, n)

        measurements = add_shot_noise(forward(x, probe, geometry, workers=threads), alpha, seed, noise_model)
        out_dir = Path(out)
        meas_path = out_dir / "measurements.pmeas"
        probe_path = write_measurements(meas_path, measurements)
        object_out = out_dir / "object.cimg"
        write_image(object_out, x)
        logger.info(f"Simulated {geometry.n_positions} positions ({grid}, alpha={alpha})")

        try:
            overlap = overlap_fraction(probe, geometry)
        except ValueError:
            overlap = None
        output = SimulateOutput(
            status="success",
            measurements=str(meas_path),
            probe=str(probe_path),
            object=str(object_out),
            n_positions=geometry.n_positions,
            overlap=overlap,
        )
    except Exception as e:
        output = SimulateOutput(status="error", error=str(e))
    emit(output)


@app.command("reconstruct")
def reconstruct(
    measurements: str = typer.Option(..., help="PMEAS1 file (probe read from <stem>.probe.cimg)"),
    config: Optional[str] = typer.Option(None, help="Solver config JSON (default: HQS-TV)"),
    probe: Optional[str] = typer.Option(None, help="Probe CIMG1 file, if not next to the measurements"),
    iterations: Optional[int] = typer.Option(None, help="Override the iteration count"),
    out: str = typer.Option(DEFAULT_OUTPUT_DIR, help="Output directory"),
    threads: Optional[int] = typer.Option(None, help="FFT workers"),
):
    """Reconstruct an object from measurements."""
    try:
        ms = read_measurements(measurements, probe)
        solver = load_solver_config(config, threads, iterations)
        logger.info(f"Reconstructing with {solver.name} ({solver.algorithm.value})")
        state = run_solver(ms, solver)

        out_dir = Path(out)
        reco_path = out_dir / "reconstruction.cimg"
        log_path = out_dir / "residuals.csv"
        write_image(reco_path, state.x)
        write_residual_log(state, log_path)
        output = ReconstructOutput(
            status="success",
            reconstruction=str(reco_path),
            residual_log=str(log_path),
            iterations=state.k,
            final_residual=state.residual_history[-1] if state.residual_history else None,
        )
    except Exception as e:
        output = ReconstructOutput(status="error", error=str(e))
    emit(output)


@app.command("evaluate")
def evaluate(
    reco: str = typer.Option(..., help="Reconstruction CIMG1"),
    gt: str = typer.Option(..., help="Ground truth CIMG1"),
    border: int = typer.Option(DEFAULT_BORDER, help="Pixels excluded on each side"),
):
    """Score a reconstruction against its ground truth."""
    try:
        report = evaluate_images(read_image(reco), read_image(gt), border)
        output = EvaluateOutput(
            status="success",
            psnr_amplitude=report.psnr_amplitude,
            psnr_phase=report.psnr_phase,
            amplitude_saturated=report.amplitude_saturated,
            phase_saturated=report.phase_saturated,
            border=border,
        )
    except Exception as e:
        output = EvaluateOutput(status="error", error=str(e))
    emit(output)


@app.command("experiment")
def experiment(
    config: str = typer.Option(..., help="Experiment config JSON"),
    seed: Optional[int] = typer.Option(None, help="Override the master seed"),
    out: Optional[str] = typer.Option(None, help="Override the output directory"),
    threads: Optional[int] = typer.Option(None, help="Worker processes (default: all cores)"),
):
    """Run a full sweep over images, grids, noise levels and solvers."""
    try:
        logger.info(f"Runtime defaults: {get_runtime_config()}")
        exp = load_experiment_config(config, seed=seed, output_dir=out, threads=threads)
        if exp.threads is None:
            exp = exp.model_copy(update={"threads": DEFAULT_THREADS})
        rows = run_experiment(exp)
        output = ExperimentOutput(
            status="success",
            output_dir=exp.output_dir,
            rows=len(rows),
            failed=sum(1 for r in rows if r.error is not None),
        )
    except Exception as e:
        output = ExperimentOutput(status="error", error=str(e))
    emit(output)


@app.command("probe")
def probe(
    n: int = typer.Option(84, help="Probe window size N"),
    radius: float = typer.Option(40.0, help="Probe disc radius"),
    image_size: int = typer.Option(256, "--image-size", help="Square image side"),
    grid: list[str] = typer.Option(["7x7", "15x15"], help="Scan lattice ROWSxCOLS (repeatable)"),
    border: int = typer.Option(DEFAULT_BORDER, help="Metric border"),
):
    """Print probe and scan geometry diagnostics."""
    try:
        p = make_circular_probe(n, radius)
        diagnostics = []
        for g in grid:
            rows, cols = parse_grid(g)
            geometry = make_scan_grid(image_size, image_size, rows, cols, n)
            try:
                overlap = overlap_fraction(p, geometry)
            except ValueError:
                overlap = None
            stride = geometry.positions[1][1] - geometry.positions[0][1] if cols > 1 else None
            diagnostics.append(GridDiagnostics(
                grid=f"{rows}x{cols}",
                n_positions=geometry.n_positions,
                stride=stride,
                overlap=overlap,
                min_weight_in_crop=min_weight_in_crop(intensity_weight_map(p, geometry), border),
            ))
        output = ProbeOutput(status="success", n=n, radius=radius, image_size=image_size, border=border, grids=diagnostics)
    except Exception as e:
        output = ProbeOutput(status="error", error=str(e))
    emit(output)


if __name__ == "__main__":
    app()
