"""Trajectory comparison metrics.

Quantifies how closely a solver trajectory tracks a reference (usually
the finite-difference emulator) via mean absolute error and mean
squared error on a shared evaluation grid.  Both series are linearly
interpolated onto the grid, heights are pooled as one variable group
and velocities as another (one aggregate number per group), and
per-variable values are kept for diagnosis.  The natural grid choice
is the solver's collocation grid, which makes the numbers directly
comparable to its training residual diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from tankflow.physics import solution_labels
from tankflow.scenario import TimeSeries

REPORT_CSV_HEADER = "case,height_mae,height_mse,velocity_mae,velocity_mse"


def _paired(y, y_hat):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.size != y_hat.size:
        raise ValueError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise ValueError("need at least one sample")
    return y, y_hat


def mae(y, y_hat) -> float:
    """Mean absolute deviation between paired samples."""
    y, y_hat = _paired(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def mse(y, y_hat) -> float:
    """Mean squared deviation between paired samples."""
    y, y_hat = _paired(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def resample(series: TimeSeries, grid) -> np.ndarray:
    """All solved variables interpolated onto ``grid``.

    Returns a (2N-1, len(grid)) matrix in solution order
    [h1..hN, v1..v(N-1)], linear between bracketing records and exact
    at record times.  Grid points outside the recorded span are
    rejected rather than extrapolated.
    """
    grid = np.asarray(grid, dtype=float)
    times = np.asarray(series.times)
    if grid.min() < times[0] or grid.max() > times[-1]:
        raise ValueError(
            f"grid [{grid.min()}, {grid.max()}] leaves the recorded span "
            f"[{times[0]}, {times[-1]}]")
    columns = [series.heights[:, i] for i in range(series.n_tanks)]
    columns += [series.velocities[:, j] for j in range(series.n_tanks - 1)]
    return np.vstack([np.interp(grid, times, col) for col in columns])


@dataclass
class ComparisonReport:
    """Pooled and per-variable MAE/MSE of a model against a reference."""

    labels: list[str]
    per_variable_mae: dict[str, float]
    per_variable_mse: dict[str, float]
    height_mae: float
    height_mse: float
    velocity_mae: float
    velocity_mse: float
    grid: np.ndarray
    model_metadata: dict = field(default_factory=dict)
    reference_metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "height_mae": self.height_mae,
            "height_mse": self.height_mse,
            "velocity_mae": self.velocity_mae,
            "velocity_mse": self.velocity_mse,
            "per_variable_mae": dict(self.per_variable_mae),
            "per_variable_mse": dict(self.per_variable_mse),
            "grid": {
                "t_min": float(self.grid[0]),
                "t_max": float(self.grid[-1]),
                "count": int(self.grid.size),
            },
            "model_metadata": _plain(self.model_metadata),
            "reference_metadata": _plain(self.reference_metadata),
        }


def _plain(metadata: dict) -> dict:
    """Metadata restricted to JSON-representable scalars."""
    out = {}
    for key, value in metadata.items():
        if isinstance(value, (bool, int, float, str)) or value is None:
            out[key] = value
        elif isinstance(value, np.generic):
            out[key] = value.item()
        else:
            out[key] = str(value)
    return out


def compare(model_series: TimeSeries, reference_series: TimeSeries,
            grid) -> ComparisonReport:
    """MAE/MSE of ``model_series`` against the reference on ``grid``."""
    if model_series.n_tanks != reference_series.n_tanks:
        raise ValueError(
            f"cannot compare a {model_series.n_tanks}-tank series against "
            f"a {reference_series.n_tanks}-tank one")
    grid = np.asarray(grid, dtype=float)
    model = resample(model_series, grid)
    reference = resample(reference_series, grid)
    n_tanks = model_series.n_tanks
    labels = solution_labels(n_tanks)
    per_mae = {label: mae(reference[k], model[k])
               for k, label in enumerate(labels)}
    per_mse = {label: mse(reference[k], model[k])
               for k, label in enumerate(labels)}
    return ComparisonReport(
        labels=labels,
        per_variable_mae=per_mae,
        per_variable_mse=per_mse,
        height_mae=mae(reference[:n_tanks], model[:n_tanks]),
        height_mse=mse(reference[:n_tanks], model[:n_tanks]),
        velocity_mae=mae(reference[n_tanks:], model[n_tanks:]),
        velocity_mse=mse(reference[n_tanks:], model[n_tanks:]),
        grid=grid,
        model_metadata=dict(model_series.metadata),
        reference_metadata=dict(reference_series.metadata),
    )


def write_report_json(path: str, report: ComparisonReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path: str, rows: list[tuple[str, ComparisonReport]]) -> None:
    """One comparison per row: case label plus the four pooled metrics."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(REPORT_CSV_HEADER + "\n")
        for label, report in rows:
            fh.write("%s,%.17g,%.17g,%.17g,%.17g\n" % (
                label, report.height_mae, report.height_mse,
                report.velocity_mae, report.velocity_mse))
