"""Domain types shared across the vecal modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import SchemaError, ValidationError


class VehicleMode(str, Enum):
    ACC = "acc"
    HV = "hv"

    @classmethod
    def parse(cls, value: Any) -> "VehicleMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown vehicle mode {value!r} (expected acc or hv)") from None


@dataclass(frozen=True)
class ObdRecord:
    """One raw timestamped sensor reading of a run."""
    run_id: int
    vehicle_mode: VehicleMode
    timestamp: float
    maf: float
    soc: float
    speed: float


@dataclass(frozen=True)
class Tick:
    t: int
    maf_integral: float
    soc: float
    speed: float


@dataclass(frozen=True)
class TrajectorySeries:
    """A run on a fixed ``dt`` grid.

    Tick ``k`` covers the window ``[t0 + k*dt, t0 + (k+1)*dt)``; ``soc`` and
    ``speed`` are sampled at the window start, ``maf_integral`` is the grams
    of air over the window. ``end_soc``/``end_speed`` hold the closing
    boundary after the last tick when the raw data reach it.
    """
    run_id: int
    vehicle_mode: VehicleMode
    dt: float
    ticks: Tuple[Tick, ...]
    end_soc: Optional[float] = None
    end_speed: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"run {self.run_id}: dt must be positive, got {self.dt}")
        for expected, tick in enumerate(self.ticks):
            if tick.t != expected:
                raise ValidationError(
                    f"run {self.run_id}: tick indices must be contiguous from 0, found {tick.t} at {expected}"
                )

    def __len__(self) -> int:
        return len(self.ticks)

    @property
    def maf_integrals(self) -> np.ndarray:
        return np.array([tick.maf_integral for tick in self.ticks], dtype=float)

    @property
    def socs(self) -> np.ndarray:
        return np.array([tick.soc for tick in self.ticks], dtype=float)

    @property
    def speeds(self) -> np.ndarray:
        return np.array([tick.speed for tick in self.ticks], dtype=float)


@dataclass(frozen=True)
class PowertrainParams:
    """Constants of the fuel and battery energy conversions."""
    air_fuel_ratio: float = 14.7
    calorific_value: float = 44_000.0       # J/g
    battery_capacity: float = 5_040_000.0   # J (1.4 kWh)
    engine_efficiency: float = 0.40
    electric_efficiency: float = 0.50

    def __post_init__(self):
        for name in ("air_fuel_ratio", "calorific_value", "battery_capacity",
                     "engine_efficiency", "electric_efficiency"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be a positive number, got {value!r}")
        for name in ("engine_efficiency", "electric_efficiency"):
            if getattr(self, name) > 1:
                raise ValidationError(f"{name} must be at most 1, got {getattr(self, name)}")

    def with_overrides(self, overrides: Optional[Mapping[str, Any]]) -> "PowertrainParams":
        if not overrides:
            return self
        unknown = set(overrides) - set(asdict(self))
        if unknown:
            raise ValidationError(f"unknown powertrain parameters: {sorted(unknown)}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class EnergySample:
    """One cleaned per-second sample."""
    run_id: int
    vehicle_mode: VehicleMode
    t: int
    speed: float
    accel: float
    engine_j: float
    battery_j: float
    total_j: float

    @classmethod
    def compose(cls, run_id: int, vehicle_mode: VehicleMode, t: int, speed: float,
                accel: float, engine_j: float, battery_j: float) -> "EnergySample":
        return cls(run_id, vehicle_mode, t, speed, accel, engine_j, battery_j, engine_j + battery_j)

    @property
    def key(self) -> Tuple[int, int]:
        return self.run_id, self.t


SAMPLE_COLUMNS = ["run_id", "mode", "t", "speed", "accel", "engine_j", "battery_j", "total_j"]


@dataclass
class CleaningReport:
    input_count: int = 0
    dropped_low_speed: int = 0
    dropped_zero_accel_low_energy: int = 0
    dropped_first_tick: int = 0
    dropped_no_end_soc: int = 0
    output_count: int = 0

    @property
    def dropped_total(self) -> int:
        return (self.dropped_low_speed + self.dropped_zero_accel_low_energy
                + self.dropped_first_tick + self.dropped_no_end_soc)

    def reconciles(self) -> bool:
        return self.input_count == self.output_count + self.dropped_total

    def __add__(self, other: "CleaningReport") -> "CleaningReport":
        return CleaningReport(**{k: getattr(self, k) + getattr(other, k) for k in asdict(self)})

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


class ModelKind(str, Enum):
    VT_MICRO = "vt_micro"
    ARRB = "arrb"
    AA_MICRO = "aa_micro"

    @classmethod
    def parse(cls, value: Any) -> "ModelKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value.replace("_", "") == key:
                return kind
        raise SchemaError(f"unknown model kind {value!r}")

    @property
    def cli_name(self) -> str:
        return self.value.replace("_", "")


class TermPart(str, Enum):
    LINEAR = "linear"
    LINEAR_POS = "linear_pos"
    EXP = "exp"
    EXP_POS = "exp_pos"
    ARRB_TERM = "arrb_term"


@dataclass(frozen=True)
class Term:
    """Descriptor of one coefficient slot: ``v**n1 * a**n2`` (or ``max(0, a)**n2``)."""
    part: TermPart
    n1: int
    n2: int

    def to_dict(self) -> Dict[str, Any]:
        return {"part": self.part.value, "n1": self.n1, "n2": self.n2}


EXPECTED_TERM_COUNT = {ModelKind.VT_MICRO: 16, ModelKind.ARRB: 6, ModelKind.AA_MICRO: 30}
DEFAULT_EXPONENT_CLAMP = 30.0


@dataclass(frozen=True)
class ModelCoefficients:
    kind: ModelKind
    theta: Tuple[float, ...]
    layout: Tuple[Term, ...]
    exponent_clamp: float = DEFAULT_EXPONENT_CLAMP
    fit_meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.theta) != len(self.layout):
            raise SchemaError(
                f"{self.kind.value}: theta has {len(self.theta)} entries but layout has {len(self.layout)}"
            )
        expected = EXPECTED_TERM_COUNT[self.kind]
        if len(self.theta) != expected:
            raise SchemaError(f"{self.kind.value}: expected {expected} coefficients, got {len(self.theta)}")
        if not all(math.isfinite(x) for x in self.theta):
            raise SchemaError(f"{self.kind.value}: coefficients must be finite")
        if not (math.isfinite(self.exponent_clamp) and self.exponent_clamp > 0):
            raise SchemaError(f"exponent_clamp must be positive, got {self.exponent_clamp}")

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.theta, dtype=float)


class SplitStrategy(str, Enum):
    SEEDED_SHUFFLE = "seeded_shuffle"
    SEQUENTIAL_PREFIX = "sequential_prefix"


DEFAULT_SPLIT_SEED = 20240801


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.8
    seed: int = DEFAULT_SPLIT_SEED
    strategy: SplitStrategy = SplitStrategy.SEEDED_SHUFFLE

    def __post_init__(self):
        if not 0 < self.train_ratio < 1:
            raise ValidationError(f"train_ratio must lie in (0, 1), got {self.train_ratio}")
        object.__setattr__(self, "strategy", SplitStrategy(self.strategy))

    def to_dict(self) -> Dict[str, Any]:
        return {"train_ratio": self.train_ratio, "seed": self.seed, "strategy": self.strategy.value}


@dataclass(frozen=True)
class GaussNewtonConfig:
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    rel_tol: float = 1e-10
    max_iters: int = 200
    max_damping: float = 1e12

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValidationError("max_iters must be non-negative")
        if not (self.damping_init > 0 and self.max_damping > self.damping_init):
            raise ValidationError("damping bounds must satisfy 0 < damping_init < max_damping")
        if self.damping_up <= 1 or self.damping_down <= 1:
            raise ValidationError("damping factors must exceed 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class FitReport:
    kind: ModelKind
    coefficients: ModelCoefficients
    r2_adj_train: Optional[float]
    r2_adj_test: Optional[float]
    r2_adj_all: Optional[float]
    n_train: int
    n_test: int
    n_params: int
    excluded_nonpositive: int = 0
    solver_iterations: int = 0
    converged: bool = True
    initial_sse: Optional[float] = None
    final_sse: Optional[float] = None
    stop_reason: str = "closed_form"
    sse_history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "r2_adj_train": self.r2_adj_train,
            "r2_adj_test": self.r2_adj_test,
            "r2_adj_all": self.r2_adj_all,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_params": self.n_params,
            "excluded_nonpositive": self.excluded_nonpositive,
            "solver_iterations": self.solver_iterations,
            "converged": self.converged,
            "initial_sse": self.initial_sse,
            "final_sse": self.final_sse,
            "stop_reason": self.stop_reason,
        }


@dataclass(frozen=True)
class GroupSpec:
    group_id: int
    run_ids: Tuple[int, ...]


DEFAULT_GROUPS: Tuple[GroupSpec, ...] = (
    GroupSpec(1, (1, 4, 7)),
    GroupSpec(2, (2, 5, 8)),
    GroupSpec(3, (3, 6, 9)),
)


def validate_groups(groups: Sequence[GroupSpec]) -> None:
    if len(groups) != 3:
        raise ValidationError(f"expected 3 groups, got {len(groups)}")
    seen: set[int] = set()
    for group in groups:
        if not group.run_ids:
            raise ValidationError(f"group {group.group_id} has no runs")
        overlap = seen.intersection(group.run_ids)
        if overlap:
            raise ValidationError(f"runs {sorted(overlap)} belong to more than one group")
        seen.update(group.run_ids)


@dataclass
class CellSummary:
    mean: float
    std: float
    mae: float
    density: Tuple[float, ...]
    residuals: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean, "std": self.std, "mae": self.mae, "density": list(self.density)}


@dataclass
class EvalMatrix:
    test_name: str
    metric_name: str
    metric_mode: str
    fit_mode: VehicleMode
    eval_mode: VehicleMode
    row_groups: Tuple[int, ...]
    col_groups: Tuple[int, ...]
    values: List[List[float]]
    cells: Dict[Tuple[int, int], CellSummary]
    bin_edges: Tuple[float, ...]
    models: Dict[int, ModelCoefficients] = field(default_factory=dict, repr=False)

    def value(self, model_group: int, data_group: int) -> float:
        return self.values[self.row_groups.index(model_group)][self.col_groups.index(data_group)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "test": self.test_name,
            "metric": self.metric_name,
            "metric_mode": self.metric_mode,
            "fit_mode": self.fit_mode.value,
            "eval_mode": self.eval_mode.value,
            "rows": [f"group {j} model" for j in self.row_groups],
            "cols": [f"group {k} data" for k in self.col_groups],
            "values": self.values,
            "bin_edges": list(self.bin_edges),
            "cells": [
                {"model_group": j, "data_group": k, "metric_mode": self.metric_mode, **cell.to_dict()}
                for (j, k), cell in sorted(self.cells.items())
            ],
        }
