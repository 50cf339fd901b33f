"""Residual metrics and the group cross-application tests.

Two aggregation modes are offered for RSS and RMSE. ``conventional`` uses
``sum(r**2)`` and ``sqrt(mean(r**2))``. ``paper_literal`` does not square
inside the sum: ``sum(r)`` and ``mean(|r|)``. The mode is carried into every
matrix and report.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .calibration import fit_aamicro
from .consumption import predict
from .energy import as_arrays, sort_samples
from .errors import UsageError, ValidationError
from .logger import log_event
from .models import (
    CellSummary,
    EnergySample,
    EvalMatrix,
    GaussNewtonConfig,
    GroupSpec,
    ModelCoefficients,
    ModelKind,
    VehicleMode,
    validate_groups,
)
from .utils import run_parallel

DEFAULT_BINS = 50


class MetricMode(str, Enum):
    CONVENTIONAL = "conventional"
    PAPER_LITERAL = "paper_literal"

    @classmethod
    def parse(cls, value: Any) -> "MetricMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError:
            raise UsageError(f"unknown metric mode {value!r} (expected conventional or paper-literal)") from None


# test name -> (mode the group models are fitted on, mode they are applied to)
CROSS_TESTS: Dict[str, Tuple[VehicleMode, VehicleMode]] = {
    "test1": (VehicleMode.ACC, VehicleMode.ACC),
    "test2": (VehicleMode.ACC, VehicleMode.HV),
    "test3": (VehicleMode.HV, VehicleMode.HV),
}


def _vector(r: Sequence[float]) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValidationError("residual vector must be non-empty and one-dimensional")
    return r


def residuals(coeffs: ModelCoefficients, samples: Sequence[EnergySample]) -> np.ndarray:
    """Predicted minus observed total energy, in ``(mode, run_id, t)`` order."""
    if not samples:
        raise ValidationError("cannot compute residuals of an empty sample set")
    v, a, j = as_arrays(sort_samples(samples))
    return np.asarray(predict(coeffs, v, a), dtype=float) - j


def metric_rss(r: Sequence[float], mode: MetricMode = MetricMode.CONVENTIONAL) -> float:
    r = _vector(r)
    if MetricMode.parse(mode) == MetricMode.PAPER_LITERAL:
        return float(np.sum(r))
    return float(np.sum(r * r))


def metric_rmse(r: Sequence[float], mode: MetricMode = MetricMode.CONVENTIONAL) -> float:
    r = _vector(r)
    if MetricMode.parse(mode) == MetricMode.PAPER_LITERAL:
        return float(np.mean(np.abs(r)))
    return float(np.sqrt(np.mean(r * r)))


def residual_metrics(r: Sequence[float], mode: MetricMode = MetricMode.CONVENTIONAL) -> Dict[str, Any]:
    r = _vector(r)
    mode = MetricMode.parse(mode)
    return {
        "metric_mode": mode.value,
        "n": int(r.size),
        "rss": metric_rss(r, mode),
        "rmse": metric_rmse(r, mode),
        "mae": float(np.mean(np.abs(r))),
        "mse": float(np.mean(r * r)),
    }


@dataclass
class ResidualDensity:
    edges: np.ndarray
    density: np.ndarray
    mean: float
    std: float

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2


def residual_density(r: Sequence[float], bins: int = DEFAULT_BINS,
                     value_range: Optional[Tuple[float, float]] = None) -> ResidualDensity:
    """Equal-width histogram normalised to unit area, plus mean and population std.

    When all residuals are equal numpy widens the range to ``value +- 0.5``.
    """
    r = _vector(r)
    if bins < 1:
        raise ValidationError(f"bins must be positive, got {bins}")
    density, edges = np.histogram(r, bins=bins, range=value_range, density=True)
    return ResidualDensity(edges=edges, density=density, mean=float(r.mean()), std=float(r.std()))


def group_samples(samples: Sequence[EnergySample], mode: VehicleMode, group: GroupSpec) -> List[EnergySample]:
    runs = set(group.run_ids)
    return [s for s in samples if s.vehicle_mode == mode and s.run_id in runs]


def _fit_group(samples: Sequence[EnergySample], solver: GaussNewtonConfig) -> ModelCoefficients:
    return fit_aamicro(samples, solver=solver).coefficients


def cross_matrix(
    groups: Sequence[GroupSpec],
    fit_on: VehicleMode,
    eval_on: VehicleMode,
    samples: Sequence[EnergySample],
    solver: GaussNewtonConfig = GaussNewtonConfig(),
    metric_mode: MetricMode = MetricMode.CONVENTIONAL,
    bins: int = DEFAULT_BINS,
    test_name: str = "",
    workers: int = 1,
    on_cell: Optional[Callable[[int, int, float], None]] = None,
    progress: Optional[bool] = False,
) -> EvalMatrix:
    """Fit one AA-Micro model per group and apply each to every group's data.

    Models are fitted on the whole of their group's ``fit_on`` samples. Cell
    ``(j, k)`` holds the RMSE of group ``j``'s model on group ``k``'s
    ``eval_on`` samples. All cell histograms share one set of bin edges.
    """
    validate_groups(groups)
    metric_mode = MetricMode.parse(metric_mode)
    group_ids = tuple(g.group_id for g in groups)

    fit_data: Dict[int, List[EnergySample]] = {}
    eval_data: Dict[int, List[EnergySample]] = {}
    for group in groups:
        fit_data[group.group_id] = group_samples(samples, fit_on, group)
        eval_data[group.group_id] = group_samples(samples, eval_on, group)
        for label, data, mode in (("fit", fit_data, fit_on), ("evaluation", eval_data, eval_on)):
            if not data[group.group_id]:
                raise ValidationError(
                    f"group {group.group_id} has no {mode.value} samples for {label} (runs {list(group.run_ids)})"
                )

    models = run_parallel(
        {j: (lambda j=j: _fit_group(fit_data[j], solver)) for j in group_ids},
        workers, desc=f"{test_name or 'cross'} fits", progress=progress,
    )
    cell_residuals = run_parallel(
        {(j, k): (lambda j=j, k=k: residuals(models[j], eval_data[k]))
         for j in group_ids for k in group_ids},
        workers, desc=f"{test_name or 'cross'} cells", progress=progress,
    )

    pooled = np.concatenate([cell_residuals[(j, k)] for j in group_ids for k in group_ids])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    value_range = (float(edges[0]), float(edges[-1]))

    values: List[List[float]] = []
    cells: Dict[Tuple[int, int], CellSummary] = {}
    for j in group_ids:
        row = []
        for k in group_ids:
            r = cell_residuals[(j, k)]
            density = residual_density(r, bins=bins, value_range=value_range)
            value = metric_rmse(r, metric_mode)
            cells[(j, k)] = CellSummary(
                mean=density.mean,
                std=density.std,
                mae=float(np.mean(np.abs(r))),
                density=tuple(float(x) for x in density.density),
                residuals=r,
            )
            row.append(value)
            log_event("cell_evaluated", logging.DEBUG, test=test_name, model_group=j, data_group=k,
                      rmse=value, metric_mode=metric_mode.value)
            if on_cell is not None:
                on_cell(j, k, value)
        values.append(row)

    return EvalMatrix(
        test_name=test_name,
        metric_name="rmse",
        metric_mode=metric_mode.value,
        fit_mode=fit_on,
        eval_mode=eval_on,
        row_groups=group_ids,
        col_groups=group_ids,
        values=values,
        cells=cells,
        bin_edges=tuple(float(x) for x in edges),
        models=dict(sorted(models.items())),
    )


def matrix_frame(matrix: EvalMatrix) -> pd.DataFrame:
    """The 3x3 values with ``Group j model`` rows and ``Group k data`` columns."""
    return pd.DataFrame(
        matrix.values,
        index=[f"Group {j} model" for j in matrix.row_groups],
        columns=[f"Group {k} data" for k in matrix.col_groups],
    )


def cell_density_frame(matrix: EvalMatrix, model_group: int, data_group: int) -> pd.DataFrame:
    edges = np.asarray(matrix.bin_edges)
    cell = matrix.cells[(model_group, data_group)]
    return pd.DataFrame({"bin_center": (edges[:-1] + edges[1:]) / 2, "density": list(cell.density)})


def prediction_trace(samples: Sequence[EnergySample],
                     models: Mapping[ModelKind, ModelCoefficients]) -> pd.DataFrame:
    """Observed and per-model predicted energy for each sample, one column per model."""
    if not samples:
        raise ValidationError("cannot trace an empty sample set")
    ordered = sort_samples(samples)
    v, a, j = as_arrays(ordered)
    frame = pd.DataFrame({
        "run_id": [s.run_id for s in ordered],
        "mode": [s.vehicle_mode.value for s in ordered],
        "t": [s.t for s in ordered],
        "speed": v,
        "accel": a,
        "actual_j": j,
    })
    for kind in sorted(models, key=lambda k: list(ModelKind).index(k)):
        frame[f"{kind.cli_name}_j"] = np.asarray(predict(models[kind], v, a), dtype=float)
    return frame
