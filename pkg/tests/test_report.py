import numpy as np
import pandas as pd
import pytest

from execution.pnp.report import (
    ResultRow,
    format_summary,
    residual_table,
    rows_to_frame,
    summarize,
    write_residual_log,
    write_results,
)
from execution.pnp.solvers import SolverState


def _row(image_id, solver, psnr_a, psnr_phi, alpha=10.0, grid=(7, 7), error=None):
    return ResultRow(
        image_id=image_id,
        solver=solver,
        grid_rows=grid[0],
        grid_cols=grid[1],
        alpha=alpha,
        psnr_a=psnr_a,
        psnr_phi=psnr_phi,
        wall_time=1.5,
        iterations=100,
        error=error,
    )


def test_single_row_has_zero_std():
    summary = summarize([_row("img0", "hqs", 25.0, 18.0)])
    assert len(summary) == 1
    assert summary.loc[0, "psnr_a_std"] == 0.0
    assert summary.loc[0, "n"] == 1


def test_population_std():
    summary = summarize([_row("img0", "hqs", 20.0, 10.0), _row("img1", "hqs", 24.0, 14.0)])
    assert summary.loc[0, "psnr_a_mean"] == pytest.approx(22.0)
    assert summary.loc[0, "psnr_a_std"] == pytest.approx(2.0)
    assert summary.loc[0, "psnr_phi_std"] == pytest.approx(2.0)
    assert "22.00 ± 2.00" in format_summary(summary)


def test_best_marked_per_setting():
    rows = [
        _row("img0", "hqs", 25.0, 12.0),
        _row("img0", "simpie", 22.0, 15.0),
        _row("img0", "hqs", 18.0, 11.0, alpha=40.0),
        _row("img0", "simpie", 19.0, 10.0, alpha=40.0),
    ]
    summary = summarize(rows).set_index(["alpha", "solver"])
    assert summary.loc[(10.0, "hqs"), "best_a"] and not summary.loc[(10.0, "hqs"), "best_phi"]
    assert summary.loc[(10.0, "simpie"), "best_phi"]
    assert summary.loc[(40.0, "simpie"), "best_a"] and not summary.loc[(40.0, "simpie"), "best_phi"]

    text = format_summary(summarize(rows))
    assert "25.00 ± 0.00*" in text and "22.00 ± 0.00 " in text


def test_failed_rows_left_out_of_statistics():
    rows = [_row("img0", "hqs", 20.0, 10.0), _row("img1", "hqs", None, None, error="RuntimeError: boom")]
    summary = summarize(rows)
    assert summary.loc[0, "n"] == 1
    assert summary.loc[0, "psnr_a_mean"] == 20.0


def test_summarize_empty_raises():
    with pytest.raises(ValueError):
        summarize([])


def test_rows_sorted_and_grid_column():
    rows = [
        _row("img1", "simpie", 1.0, 1.0, grid=(15, 15)),
        _row("img0", "simpie", 1.0, 1.0),
        _row("img0", "hqs", 1.0, 1.0),
    ]
    frame = rows_to_frame(rows)
    assert list(frame["image_id"]) == ["img0", "img0", "img1"]
    assert list(frame["solver"]) == ["hqs", "simpie", "simpie"]
    assert list(frame["grid"]) == ["7x7", "7x7", "15x15"]


def test_write_results(tmp_path):
    rows = [_row("img0", "hqs", 20.0, 10.0), _row("img1", "hqs", 24.0, 14.0)]
    paths = write_results(rows, tmp_path / "out")
    for path in paths.values():
        assert path.exists()
    results = pd.read_csv(paths["results"])
    assert len(results) == 2
    assert list(results.columns)[:3] == ["image_id", "solver", "grid"]
    assert "±" in paths["summary_text"].read_text(encoding="utf-8")


def test_write_results_all_failed(tmp_path):
    paths = write_results([_row("img0", "hqs", None, None, error="ValueError: x")], tmp_path)
    assert paths["results"].exists()
    assert not paths["summary"].exists()


def test_residual_table(tmp_path):
    state = SolverState(x=np.zeros((2, 2), dtype=complex))
    state.record(state.x, 0.5, 2.0, 0.9, 0.25)
    state.record(state.x, None, None, 1.0, 0.125)
    table = residual_table(state)
    assert list(table.columns) == ["k", "tau_k", "mu_k", "c_k", "relative_residual"]
    assert list(table["k"]) == [1, 2]
    assert table.loc[1, "relative_residual"] == 0.125

    write_residual_log(state, tmp_path / "log" / "residuals.csv")
    assert pd.read_csv(tmp_path / "log" / "residuals.csv")["c_k"].tolist() == [0.9, 1.0]
