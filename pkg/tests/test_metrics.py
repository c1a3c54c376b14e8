"""Tests for trajectory comparison metrics."""

import numpy as np
import pytest

from tankflow.emulator import StepParams, run
from tankflow.metrics import (
    REPORT_CSV_HEADER,
    compare,
    mae,
    mse,
    resample,
    write_report_csv,
    write_report_json,
)
from tankflow.scenario import Scenario, TimeSeries


def test_mae_mse_arithmetic():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([0.0, 2.0], [1.0, 1.0]) == 1.0
    assert mse([0.0, 2.0], [1.0, 1.0]) == 1.0
    y = np.array([0.5, 1.5, -2.0])
    assert mae(y, y + 0.25) == 0.25
    assert mse(y, y + 0.25) == 0.25**2


def test_mae_mse_validation():
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        mse([], [])


def test_mae_mse_symmetry_and_scaling():
    rng = np.random.default_rng(0)
    y = rng.normal(size=20)
    z = rng.normal(size=20)
    assert mae(y, z) == mae(z, y)
    assert mse(y, z) == mse(z, y)
    # doubling is exact in binary floating point
    assert mse(2.0 * y, 2.0 * z) == 4.0 * mse(y, z)
    assert mae(2.0 * y, 2.0 * z) == 2.0 * mae(y, z)


def make_series(times, heights, velocities):
    return TimeSeries(np.asarray(times, dtype=float),
                      np.asarray(heights, dtype=float),
                      np.asarray(velocities, dtype=float))


def test_resample_exact_at_record_times():
    series = make_series([0.0, 1.0, 2.0],
                         [[2.0, 0.0], [1.8, 0.2], [1.5, 0.5]],
                         [[0.0], [3.0], [5.0]])
    out = resample(series, [0.0, 1.0, 2.0])
    assert out.shape == (3, 3)
    assert np.array_equal(out[0], [2.0, 1.8, 1.5])
    assert np.array_equal(out[1], [0.0, 0.2, 0.5])
    assert np.array_equal(out[2], [0.0, 3.0, 5.0])


def test_resample_midpoint_is_mean():
    series = make_series([0.0, 1.0], [[2.0, 0.0], [1.0, 1.0]], [[0.0], [4.0]])
    out = resample(series, [0.5])
    assert out[:, 0] == pytest.approx([1.5, 0.5, 2.0], rel=1e-15)


def test_resample_rejects_points_outside_span():
    series = make_series([0.0, 1.0], [[2.0, 0.0], [1.0, 1.0]], [[0.0], [4.0]])
    with pytest.raises(ValueError):
        resample(series, [-0.1, 0.5])
    with pytest.raises(ValueError):
        resample(series, [0.5, 1.1])


def test_resample_decimated_series_within_interpolation_bound():
    # a decimated recording, re-interpolated onto the dense times, must
    # stay within the record-gap-times-max-slope interpolation bound
    scenario = Scenario(n_tanks=2)
    dense = run(scenario, StepParams(), t_end=30.0)
    decimated = run(scenario, StepParams(record_interval=50), t_end=30.0)
    dense_times = np.asarray(dense.times)
    dense_matrix = resample(dense, dense_times)
    coarse_matrix = resample(decimated, dense_times)
    gap = 50 * 0.01
    for k in range(3):
        slope = np.max(np.abs(np.diff(dense_matrix[k]))) / 0.01
        bound = gap * slope
        assert mae(dense_matrix[k], coarse_matrix[k]) < bound + 1e-15


def test_compare_self_is_zero():
    scenario = Scenario(n_tanks=2)
    series = run(scenario, StepParams(), t_end=5.0)
    report = compare(series, series, np.linspace(0.0, 5.0, 40))
    assert report.height_mae == 0.0
    assert report.height_mse == 0.0
    assert report.velocity_mae == 0.0
    assert report.velocity_mse == 0.0
    assert all(v == 0.0 for v in report.per_variable_mae.values())


def test_compare_pools_height_group():
    times = np.linspace(0.0, 1.0, 5)
    heights = np.vstack([2.0 - times, times]).T
    velocities = (3.0 * times)[:, None]
    reference = make_series(times, heights, velocities)
    shifted = make_series(times, heights + [0.0, 0.5], velocities)
    report = compare(shifted, reference, times)
    # only h2 deviates: pooled over both tanks the error halves
    assert report.per_variable_mae["h1"] == 0.0
    assert report.per_variable_mae["h2"] == 0.5
    assert report.height_mae == 0.25
    assert report.height_mse == 0.125
    assert report.velocity_mae == 0.0
    assert report.labels == ["h1", "h2", "v1"]


def test_compare_jensen_inequality_per_variable():
    rng = np.random.default_rng(1)
    times = np.linspace(0.0, 2.0, 30)
    base_h = np.abs(rng.normal(1.0, 0.3, size=(30, 2)))
    base_v = rng.normal(size=(30, 1))
    a = make_series(times, base_h, base_v)
    b = make_series(times, base_h + rng.normal(0, 0.1, size=(30, 2)),
                    base_v + rng.normal(0, 0.1, size=(30, 1)))
    report = compare(a, b, times)
    for label in report.labels:
        assert report.per_variable_mae[label] >= 0.0
        assert (report.per_variable_mae[label] ** 2
                <= report.per_variable_mse[label] + 1e-15)


def test_compare_constant_offset_is_grid_invariant():
    times = np.linspace(0.0, 1.0, 9)
    heights = np.vstack([2.0 - times, times]).T
    velocities = (3.0 * times)[:, None]
    reference = make_series(times, heights, velocities)
    shifted = make_series(times, heights + 0.125, velocities)
    coarse = compare(shifted, reference, np.linspace(0.0, 1.0, 10))
    fine = compare(shifted, reference, np.linspace(0.0, 1.0, 20))
    assert coarse.height_mae == fine.height_mae == 0.125
    assert coarse.height_mse == fine.height_mse == 0.125**2


def test_compare_rejects_mismatched_sizes():
    times = np.linspace(0.0, 1.0, 4)
    two = make_series(times, np.zeros((4, 2)), np.zeros((4, 1)))
    three = make_series(times, np.zeros((4, 3)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        compare(two, three, times)


def test_report_export_round_trip(tmp_path):
    import csv
    import json

    scenario = Scenario(n_tanks=2)
    series = run(scenario, StepParams(), t_end=5.0)
    grid = np.linspace(0.0, 5.0, 25)
    report = compare(series, series, grid)

    json_path = tmp_path / "report.json"
    write_report_json(str(json_path), report)
    loaded = json.loads(json_path.read_text())
    assert loaded["height_mae"] == 0.0
    assert loaded["grid"] == {"t_min": 0.0, "t_max": 5.0, "count": 25}
    assert "per_variable_mse" in loaded

    csv_path = tmp_path / "report.csv"
    write_report_csv(str(csv_path), [("self", report)])
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == REPORT_CSV_HEADER.split(",")
    assert rows[1][0] == "self"
    assert [float(x) for x in rows[1][1:]] == [0.0, 0.0, 0.0, 0.0]
