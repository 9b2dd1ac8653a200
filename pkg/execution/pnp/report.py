"""
Result tables: per-run rows, mean +/- std summaries and residual logs.
"""

import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from execution.pnp.solvers import SolverState

logger = logging.getLogger(__name__)

GROUP_KEYS = ["grid_rows", "grid_cols", "alpha", "solver"]
RESULT_COLUMNS = [
    "image_id", "solver", "grid", "grid_rows", "grid_cols", "alpha",
    "psnr_a", "psnr_phi", "iterations", "wall_time", "error",
]


class ResultRow(BaseModel):
    """One (image, solver, grid, alpha) reconstruction."""
    image_id: str
    solver: str
    grid_rows: int
    grid_cols: int
    alpha: float
    psnr_a: Optional[float] = Field(None, description="Amplitude PSNR in dB")
    psnr_phi: Optional[float] = Field(None, description="Phase PSNR in dB")
    wall_time: float = Field(0.0, description="Seconds spent reconstructing")
    iterations: int = Field(0, description="Solver iterations run")
    error: Optional[str] = Field(None, description="Failure message, if the tuple failed")

    @property
    def grid(self) -> str:
        return f"{self.grid_rows}x{self.grid_cols}"

    @property
    def sort_key(self) -> tuple:
        return (self.image_id, self.grid_rows, self.grid_cols, self.alpha, self.solver)


def rows_to_frame(rows: Iterable[ResultRow]) -> pd.DataFrame:
    records = [{**row.model_dump(), "grid": row.grid} for row in sorted(rows, key=lambda r: r.sort_key)]
    return pd.DataFrame.from_records(records, columns=RESULT_COLUMNS)


def summarize(rows: Iterable[ResultRow]) -> pd.DataFrame:
    """
    Mean and population std of both PSNRs per (grid, alpha, solver).

    best_a / best_phi mark the solver with the highest mean within each
    (grid, alpha) setting. Failed tuples are left out of the statistics.
    """
    frame = rows_to_frame(rows)
    if frame.empty:
        raise ValueError("Cannot summarize an empty result set")
    ok = frame[frame["error"].isna()]

    grouped = ok.groupby(GROUP_KEYS, sort=True)
    summary = grouped.agg(
        n=("psnr_a", "size"),
        psnr_a_mean=("psnr_a", "mean"),
        psnr_a_std=("psnr_a", lambda s: float(np.std(s, ddof=0))),
        psnr_phi_mean=("psnr_phi", "mean"),
        psnr_phi_std=("psnr_phi", lambda s: float(np.std(s, ddof=0))),
    ).reset_index()

    setting = summary.groupby(["grid_rows", "grid_cols", "alpha"])
    summary["best_a"] = summary["psnr_a_mean"] == setting["psnr_a_mean"].transform("max")
    summary["best_phi"] = summary["psnr_phi_mean"] == setting["psnr_phi_mean"].transform("max")
    summary.insert(0, "grid", summary["grid_rows"].astype(str) + "x" + summary["grid_cols"].astype(str))
    return summary


def format_summary(summary: pd.DataFrame) -> str:
    """Aligned plain-text table, best entries marked with '*'."""
    def cell(mean, std, best):
        return f"{mean:.2f} ± {std:.2f}{'*' if best else ' '}"

    table = pd.DataFrame({
        "grid": summary["grid"],
        "alpha": summary["alpha"].map(lambda a: f"{a:g}"),
        "solver": summary["solver"],
        "n": summary["n"],
        "PSNR_a": [cell(m, s, b) for m, s, b in zip(summary["psnr_a_mean"], summary["psnr_a_std"], summary["best_a"])],
        "PSNR_phi": [cell(m, s, b) for m, s, b in zip(summary["psnr_phi_mean"], summary["psnr_phi_std"], summary["best_phi"])],
    })
    return table.to_string(index=False)


def write_results(rows: Iterable[ResultRow], out_dir: Path) -> dict[str, Path]:
    """results.csv, summary.csv and summary.txt in out_dir."""
    rows = list(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out_dir / "results.csv",
        "summary": out_dir / "summary.csv",
        "summary_text": out_dir / "summary.txt",
    }
    rows_to_frame(rows).to_csv(paths["results"], index=False, float_format="%.6f", lineterminator="\n")

    if any(r.error is None for r in rows):
        summary = summarize(rows)
        summary.to_csv(paths["summary"], index=False, float_format="%.4f", lineterminator="\n")
        paths["summary_text"].write_text(format_summary(summary) + "\n", encoding="utf-8")
    else:
        logger.warning("No successful runs to summarize.")
    logger.info(f"Results written to {out_dir}")
    return paths


def residual_table(state: SolverState) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"k": r.k, "tau_k": r.tau, "mu_k": r.mu, "c_k": r.c, "relative_residual": r.relative_residual}
            for r in state.records
        ],
        columns=["k", "tau_k", "mu_k", "c_k", "relative_residual"],
    )


def write_residual_log(state: SolverState, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    residual_table(state).to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
