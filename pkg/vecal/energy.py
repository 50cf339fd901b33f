"""Per-second energy samples from resampled trajectories.

Engine energy is delivered energy from the burned fuel,
``maf_integral * calorific_value * engine_efficiency / air_fuel_ratio``.
Battery energy is ``(soc_start - soc_end) * battery_capacity *
electric_efficiency`` and is negative while the battery charges. Both are
taken per tick, which is what the integrals reduce to on a 1 s grid.
"""

from __future__ import annotations

import logging
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DomainError, ValidationError
from .logger import log_event
from .models import (
    SAMPLE_COLUMNS,
    CleaningReport,
    EnergySample,
    PowertrainParams,
    TrajectorySeries,
    VehicleMode,
)

ArrayLike = Union[float, Sequence[float], np.ndarray]

DEFAULT_MIN_SPEED = 8.941             # m/s, 20 mph
DEFAULT_ZERO_ACCEL_FLOOR = 25_000.0   # J
ZERO_ACCEL_TOLERANCE = 1e-12          # m/s^2

SUMMARY_FIELDS = ("battery_j", "engine_j", "total_j", "speed", "accel")


def _scalar_or_array(value: np.ndarray):
    return float(value) if value.ndim == 0 else value


def gasoline_energy(maf_integral: ArrayLike, params: PowertrainParams = PowertrainParams()):
    """Joules delivered by the engine for ``maf_integral`` grams of intake air."""
    grams = np.asarray(maf_integral, dtype=float)
    if np.any(grams < 0) or not np.all(np.isfinite(grams)):
        raise DomainError("mass air flow integral must be finite and non-negative")
    joules = grams * params.calorific_value * params.engine_efficiency / params.air_fuel_ratio
    return _scalar_or_array(joules)


def battery_energy(soc_start: ArrayLike, soc_end: ArrayLike, params: PowertrainParams = PowertrainParams()):
    """Joules drawn from the battery between two SOC readings (negative when charging)."""
    start = np.asarray(soc_start, dtype=float)
    end = np.asarray(soc_end, dtype=float)
    for soc in (start, end):
        if np.any(~np.isfinite(soc)) or np.any(soc < 0) or np.any(soc > 1):
            raise DomainError("state of charge must lie in [0, 1]")
    joules = (start - end) * params.battery_capacity * params.electric_efficiency
    return _scalar_or_array(joules)


def accelerations(speeds: Sequence[float], dt: float = 1.0) -> np.ndarray:
    """Backward-difference accelerations; element 0 is NaN (no previous tick)."""
    v = np.asarray(speeds, dtype=float)
    if v.ndim != 1 or len(v) < 2:
        raise ValidationError("at least 2 ticks are needed to compute accelerations")
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    a = np.empty_like(v)
    a[0] = np.nan
    a[1:] = (v[1:] - v[:-1]) / dt
    return a


def build_samples(series: TrajectorySeries, params: PowertrainParams = PowertrainParams()) -> List[EnergySample]:
    """Energy samples for ticks ``1..T`` of a series.

    Tick ``t`` uses its own MAF integral, SOC at boundaries ``t`` and ``t+1``
    and the acceleration into ``t``. The last tick is dropped when the series
    has no closing SOC.
    """
    if len(series) < 2:
        raise ValidationError(f"run {series.run_id}: run too short (needs at least 2 ticks)")
    engine = gasoline_energy(series.maf_integrals, params)
    socs = series.socs
    if series.end_soc is not None:
        soc_next = np.append(socs[1:], series.end_soc)
    else:
        soc_next = socs[1:]
    battery = battery_energy(socs[:len(soc_next)], soc_next, params)
    accel = accelerations(series.speeds, series.dt)
    speeds = series.speeds

    samples = []
    for t in range(1, len(soc_next)):
        samples.append(EnergySample.compose(
            run_id=series.run_id,
            vehicle_mode=series.vehicle_mode,
            t=t,
            speed=float(speeds[t]),
            accel=float(accel[t]),
            engine_j=float(engine[t]),
            battery_j=float(battery[t]),
        ))
    return samples


def account_ticks(series: TrajectorySeries, samples: Sequence[EnergySample]) -> CleaningReport:
    """Report the ticks :func:`build_samples` could not turn into samples."""
    return CleaningReport(
        input_count=len(series),
        dropped_first_tick=1,
        dropped_no_end_soc=len(series) - 1 - len(samples),
        output_count=len(samples),
    )


def clean(
    samples: Iterable[EnergySample],
    min_speed: float = DEFAULT_MIN_SPEED,
    zero_accel_energy_floor: float = DEFAULT_ZERO_ACCEL_FLOOR,
) -> Tuple[List[EnergySample], CleaningReport]:
    """Drop low-speed samples and steady-state samples with implausibly low energy."""
    kept: List[EnergySample] = []
    report = CleaningReport()
    for sample in samples:
        report.input_count += 1
        if sample.speed < min_speed:
            report.dropped_low_speed += 1
        elif abs(sample.accel) < ZERO_ACCEL_TOLERANCE and sample.total_j < zero_accel_energy_floor:
            # electric-only cruising
            report.dropped_zero_accel_low_energy += 1
        else:
            kept.append(sample)
    report.output_count = len(kept)
    log_event("samples_cleaned", logging.DEBUG, **report.to_dict())
    return kept, report


def process_series(
    series: TrajectorySeries,
    params: PowertrainParams = PowertrainParams(),
    min_speed: float = DEFAULT_MIN_SPEED,
    zero_accel_energy_floor: float = DEFAULT_ZERO_ACCEL_FLOOR,
) -> Tuple[List[EnergySample], CleaningReport]:
    """Samples and cleaning for one run; the report counts every tick."""
    samples = build_samples(series, params)
    kept, cleaned = clean(samples, min_speed, zero_accel_energy_floor)
    report = account_ticks(series, samples)
    report.dropped_low_speed = cleaned.dropped_low_speed
    report.dropped_zero_accel_low_energy = cleaned.dropped_zero_accel_low_energy
    report.output_count = cleaned.output_count
    return kept, report


def sort_samples(samples: Iterable[EnergySample]) -> List[EnergySample]:
    return sorted(samples, key=lambda s: (s.vehicle_mode != VehicleMode.ACC, s.run_id, s.t))


def samples_to_frame(samples: Sequence[EnergySample]) -> pd.DataFrame:
    return pd.DataFrame(
        [(s.run_id, s.vehicle_mode.value, s.t, s.speed, s.accel, s.engine_j, s.battery_j, s.total_j)
         for s in samples],
        columns=SAMPLE_COLUMNS,
    )


def frame_to_samples(frame: pd.DataFrame) -> List[EnergySample]:
    missing = [c for c in SAMPLE_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"sample table is missing columns {missing}")
    return [
        EnergySample(int(row.run_id), VehicleMode.parse(row.mode), int(row.t), float(row.speed),
                     float(row.accel), float(row.engine_j), float(row.battery_j), float(row.total_j))
        for row in frame.itertuples(index=False)
    ]


def as_arrays(samples: Sequence[EnergySample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(speed, accel, total_j)`` arrays."""
    v = np.array([s.speed for s in samples], dtype=float)
    a = np.array([s.accel for s in samples], dtype=float)
    j = np.array([s.total_j for s in samples], dtype=float)
    return v, a, j


def summarize(samples: Sequence[EnergySample]) -> Dict[str, Dict[str, Dict[str, float]]]:
    """Min/max/mean/population-std of the cleaned variables, per vehicle mode."""
    if not samples:
        raise ValidationError("cannot summarize an empty sample set")
    frame = samples_to_frame(sort_samples(samples))
    summary: Dict[str, Dict[str, Dict[str, float]]] = {}
    for mode in VehicleMode:
        part = frame[frame["mode"] == mode.value]
        if part.empty:
            continue
        summary[mode.value] = {
            name: {
                "min": float(part[name].min()),
                "max": float(part[name].max()),
                "mean": float(part[name].mean()),
                "std": float(part[name].std(ddof=0)),
            }
            for name in SUMMARY_FIELDS
        }
    log_event("samples_summarized", modes=list(summary), count=len(samples))
    return summary


def summary_table(summary: Dict[str, Dict[str, Dict[str, float]]]) -> pd.DataFrame:
    """Flatten a summary into rows of (variable, mode, min, max, mean, std)."""
    rows = []
    for name in SUMMARY_FIELDS:
        for mode, fields in summary.items():
            stats = fields[name]
            rows.append((name, mode, stats["min"], stats["max"], stats["mean"], stats["std"]))
    return pd.DataFrame(rows, columns=["variable", "mode", "min", "max", "mean", "std"])
