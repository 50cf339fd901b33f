import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from vecal.calibration import fit_arrb  # noqa: E402
from vecal.consumption import make_coefficients  # noqa: E402
from vecal.energy import process_series  # noqa: E402
from vecal.errors import UsageError, ValidationError  # noqa: E402
from vecal.evaluation import (  # noqa: E402
    CROSS_TESTS,
    MetricMode,
    cell_density_frame,
    cross_matrix,
    matrix_frame,
    metric_rmse,
    metric_rss,
    prediction_trace,
    residual_density,
    residual_metrics,
    residuals,
)
from vecal.models import DEFAULT_GROUPS, GroupSpec, ModelKind, VehicleMode  # noqa: E402
from vecal.synth import SynthConfig, make_dataset  # noqa: E402

CONVENTIONAL = MetricMode.CONVENTIONAL
LITERAL = MetricMode.PAPER_LITERAL


def dataset_samples(config):
    samples = []
    for run in make_dataset(config).runs.values():
        kept, _ = process_series(run.series, config.powertrain)
        samples.extend(kept)
    return samples


def test_metric_examples():
    assert metric_rss([3, -3], LITERAL) == 0.0
    assert metric_rss([3, -3], CONVENTIONAL) == 18.0
    assert metric_rss([0, 0, 0], LITERAL) == metric_rss([0, 0, 0], CONVENTIONAL) == 0.0
    assert metric_rmse([3, -3], LITERAL) == 3.0
    assert metric_rmse([3, -3], CONVENTIONAL) == 3.0
    assert metric_rmse([0, 6], CONVENTIONAL) == pytest.approx(math.sqrt(18))
    assert metric_rmse([0, 6], LITERAL) == 3.0


def test_conventional_rmse_and_rss_agree():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r = rng.normal(scale=rng.uniform(1e-3, 1e5), size=int(rng.integers(1, 200)))
        assert metric_rmse(r) ** 2 * r.size == pytest.approx(metric_rss(r), rel=1e-9)


def test_metric_mode_parse():
    assert MetricMode.parse("paper-literal") == LITERAL
    assert MetricMode.parse("CONVENTIONAL") == CONVENTIONAL
    with pytest.raises(UsageError):
        MetricMode.parse("median")


def test_metrics_reject_empty_vector():
    with pytest.raises(ValidationError):
        metric_rss([])


def test_residual_metrics_records_mode():
    out = residual_metrics([1.0, -2.0], LITERAL)
    assert out["metric_mode"] == "paper_literal"
    assert out["rss"] == -1.0
    assert out["mae"] == 1.5
    assert out["mse"] == 2.5


def test_residuals_sign_and_order(sample_factory):
    coeffs = make_coefficients(ModelKind.ARRB, (100, 0, 0, 0, 0, 0))
    samples = sample_factory([10.0, 11.0], [0.0, 0.5], [90.0, 120.0])
    np.testing.assert_allclose(residuals(coeffs, list(reversed(samples))), [10.0, -20.0])


def test_literal_rss_vanishes_for_intercept_fit(sample_factory):
    rng = np.random.default_rng(1)
    v = rng.uniform(9, 18, 300)
    a = rng.uniform(-2, 2, 300)
    j = 1000 + 50 * v + rng.normal(0, 200, 300)
    samples = sample_factory(v, a, j)
    r = residuals(fit_arrb(samples).coefficients, samples)
    assert abs(metric_rss(r, LITERAL)) < 1e-6 * np.linalg.norm(j)


def test_residual_density():
    density = residual_density([-1.0, 1.0], bins=2)
    np.testing.assert_allclose(density.density, [0.5, 0.5])
    np.testing.assert_allclose(density.centers, [-0.5, 0.5])

    flat = residual_density([2.0, 2.0, 2.0], bins=5)
    assert np.count_nonzero(flat.density) == 1
    assert flat.std == 0.0

    r = np.random.default_rng(2).normal(size=500)
    d = residual_density(r, bins=20)
    assert d.mean == pytest.approx(r.mean())
    assert np.sum(d.density * np.diff(d.edges)) == pytest.approx(1.0)
    np.testing.assert_allclose(d.centers, (d.edges[:-1] + d.edges[1:]) / 2)


def test_cross_matrix_symmetric_data(sample_factory):
    rng = np.random.default_rng(3)
    v = rng.uniform(9, 18, 120)
    a = rng.uniform(-2, 2, 120)
    j = 3000 + 200 * v + 1500 * np.maximum(a, 0) + rng.normal(0, 100, 120)
    samples = []
    for run_id in range(1, 10):
        samples += sample_factory(v, a, j, run_id=run_id)
    matrix = cross_matrix(DEFAULT_GROUPS, VehicleMode.ACC, VehicleMode.ACC, samples, test_name="test1")
    values = np.array(matrix.values)
    np.testing.assert_allclose(values, values[0, 0], rtol=1e-9)
    assert matrix.to_dict()["rows"] == ["group 1 model", "group 2 model", "group 3 model"]
    assert len(matrix.bin_edges) == 51


def test_cross_matrix_cells_reconcile(sample_factory):
    rng = np.random.default_rng(4)
    samples = []
    for run_id in range(1, 10):
        v = rng.uniform(9, 18, 60)
        a = rng.uniform(-2, 2, 60)
        samples += sample_factory(v, a, 2000 + 300 * v + rng.normal(0, 300, 60), run_id=run_id)
    seen = []
    matrix = cross_matrix(DEFAULT_GROUPS, VehicleMode.ACC, VehicleMode.ACC, samples, bins=10,
                          workers=3, on_cell=lambda j, k, value: seen.append((j, k)))
    assert sorted(seen) == [(j, k) for j in (1, 2, 3) for k in (1, 2, 3)]
    for (j, k), cell in matrix.cells.items():
        assert cell.mean == pytest.approx(float(np.mean(cell.residuals)))
        assert cell.std == pytest.approx(float(np.std(cell.residuals)))
        assert matrix.value(j, k) == pytest.approx(metric_rmse(cell.residuals))
    frame = matrix_frame(matrix)
    assert list(frame.index) == ["Group 1 model", "Group 2 model", "Group 3 model"]
    assert list(frame.columns) == ["Group 1 data", "Group 2 data", "Group 3 data"]
    assert len(cell_density_frame(matrix, 1, 2)) == 10


def test_cross_matrix_rejects_empty_group(sample_factory):
    samples = sample_factory(np.full(40, 12.0), np.zeros(40), np.full(40, 1000.0), run_id=1)
    with pytest.raises(ValidationError, match="group 2"):
        cross_matrix(DEFAULT_GROUPS, VehicleMode.ACC, VehicleMode.ACC, samples)
    with pytest.raises(ValidationError):
        cross_matrix(DEFAULT_GROUPS[:2], VehicleMode.ACC, VehicleMode.ACC, samples)
    with pytest.raises(ValidationError):
        cross_matrix((GroupSpec(1, (1,)), GroupSpec(2, (1,)), GroupSpec(3, (3,))),
                     VehicleMode.ACC, VehicleMode.ACC, samples)


def test_cross_tests_wiring():
    assert CROSS_TESTS["test1"] == (VehicleMode.ACC, VehicleMode.ACC)
    assert CROSS_TESTS["test2"] == (VehicleMode.ACC, VehicleMode.HV)


def test_within_type_models_are_consistent():
    samples = dataset_samples(SynthConfig(seed=11))
    matrix = cross_matrix(DEFAULT_GROUPS, VehicleMode.ACC, VehicleMode.ACC, samples, test_name="test1")
    values = np.array(matrix.values)
    assert values.max() / values.min() <= 1.25


def test_cross_type_error_exceeds_within_type():
    samples = dataset_samples(SynthConfig(seed=12))
    within = cross_matrix(DEFAULT_GROUPS, VehicleMode.ACC, VehicleMode.ACC, samples)
    cross = cross_matrix(DEFAULT_GROUPS, VehicleMode.ACC, VehicleMode.HV, samples)
    assert np.mean(cross.values) / np.mean(within.values) >= 1.5
    for j in (1, 2, 3):
        assert cross.value(j, j) > within.value(j, j)


def test_null_control_shows_no_cross_type_gap():
    config = SynthConfig(seed=13)
    config = config.with_overrides(truth_hv=config.truth_acc, hv_noise_factor=1.0)
    samples = dataset_samples(config)
    within = cross_matrix(DEFAULT_GROUPS, VehicleMode.ACC, VehicleMode.ACC, samples)
    cross = cross_matrix(DEFAULT_GROUPS, VehicleMode.ACC, VehicleMode.HV, samples)
    assert np.mean(cross.values) / np.mean(within.values) < 1.5


def test_prediction_trace_columns(sample_factory):
    rng = np.random.default_rng(5)
    v = rng.uniform(9, 18, 40)
    a = rng.uniform(-2, 2, 40)
    samples = sample_factory(v, a, 1000 + 10 * v)
    arrb = fit_arrb(samples).coefficients
    frame = prediction_trace(samples, {ModelKind.ARRB: arrb})
    assert list(frame.columns) == ["run_id", "mode", "t", "speed", "accel", "actual_j", "arrb_j"]
    np.testing.assert_allclose(frame["arrb_j"], frame["actual_j"], rtol=1e-8)
    with pytest.raises(ValidationError):
        prediction_trace([], {ModelKind.ARRB: arrb})
