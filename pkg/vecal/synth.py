"""Synthetic datasets generated from known consumption models.

Speeds follow a bounded mean-reverting random walk. Per-tick energy comes from
a truth model plus Gaussian noise, and is then split between engine and
battery and inverted back to MAF and SOC signals so that the processing
pipeline can be checked against the known answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .consumption import make_coefficients, predict, serialize
from .errors import InvariantViolation, ValidationError
from .logger import log_event
from .models import ModelCoefficients, ModelKind, PowertrainParams, Tick, TrajectorySeries, VehicleMode
from .trajectory import RunKey, records_to_frame, to_records

DEFAULT_SPEED_BOUNDS = (8.941, 17.778)  # m/s


def default_truth_acc() -> ModelCoefficients:
    """AA-Micro truth with active positive-acceleration and exponential terms."""
    theta = np.zeros(30)
    # linear part: base (n1, n2) slots 0..8, positive-part slots 9..14
    theta[0] = 4000.0        # 1
    theta[1] = 2000.0        # a
    theta[2] = 600.0         # a^2
    theta[3] = 900.0         # v
    theta[6] = 25.0          # v^2
    theta[9] = 8000.0        # a+
    theta[12] = 30.0         # v a+^2
    # exponent part
    theta[15] = math.log(5000.0)
    theta[16] = 0.10         # a
    theta[24] = 0.30         # a+
    return make_coefficients(ModelKind.AA_MICRO, theta)


def default_truth_hv() -> ModelCoefficients:
    """ARRB truth with a cubic speed term."""
    return make_coefficients(ModelKind.ARRB, (2000.0, 400.0, 20.0, 4.0, 900.0, 150.0))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_runs: int = 9
    run_length: int = 300
    dt: float = 1.0
    speed_bounds: Tuple[float, float] = DEFAULT_SPEED_BOUNDS
    speed_reversion: float = 0.1
    speed_sigma: float = 0.8
    truth_acc: ModelCoefficients = field(default_factory=default_truth_acc)
    truth_hv: ModelCoefficients = field(default_factory=default_truth_hv)
    noise_sigma: float = 0.0
    noise_rel: float = 0.05
    hv_noise_factor: float = 2.0
    battery_share: float = 0.1
    regen_share: float = 1.0
    initial_soc: float = 0.55
    powertrain: PowertrainParams = field(default_factory=PowertrainParams)

    def __post_init__(self):
        lo, hi = self.speed_bounds
        if not (0 <= lo < hi):
            raise ValidationError(f"speed bounds must satisfy 0 <= low < high, got {self.speed_bounds}")
        if self.n_runs < 1:
            raise ValidationError(f"n_runs must be at least 1, got {self.n_runs}")
        if self.run_length < 3:
            raise ValidationError(f"run_length must be at least 3, got {self.run_length}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        for name in ("battery_share", "regen_share", "initial_soc"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
        for name in ("noise_sigma", "noise_rel", "hv_noise_factor", "speed_sigma", "speed_reversion"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def speed_mean(self) -> float:
        return (self.speed_bounds[0] + self.speed_bounds[1]) / 2.0

    def truth(self, mode: VehicleMode) -> ModelCoefficients:
        return self.truth_acc if mode == VehicleMode.ACC else self.truth_hv

    def noise_scale(self, mode: VehicleMode) -> float:
        return 1.0 if mode == VehicleMode.ACC else self.hv_noise_factor

    def with_overrides(self, **changes: Any) -> "SynthConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "n_runs": self.n_runs,
            "run_length": self.run_length,
            "dt": self.dt,
            "speed_bounds": list(self.speed_bounds),
            "speed_reversion": self.speed_reversion,
            "speed_sigma": self.speed_sigma,
            "noise_sigma": self.noise_sigma,
            "noise_rel": self.noise_rel,
            "hv_noise_factor": self.hv_noise_factor,
            "battery_share": self.battery_share,
            "regen_share": self.regen_share,
            "initial_soc": self.initial_soc,
            "powertrain": self.powertrain.to_dict(),
        }


def run_seeds(seed: int, mode: VehicleMode, run_id: int) -> Tuple[int, int]:
    """Independent (speed, noise) seeds for one run."""
    mode_index = list(VehicleMode).index(mode)
    state = np.random.SeedSequence([seed, mode_index, run_id]).generate_state(2)
    return int(state[0]), int(state[1])


def _reflect(value: float, lo: float, hi: float) -> float:
    while value < lo or value > hi:
        value = 2 * lo - value if value < lo else 2 * hi - value
    return value


def gen_speed_profile(config: SynthConfig, seed: int, length: Optional[int] = None) -> np.ndarray:
    """Speeds starting at the bound midpoint, reflected back into the bounds."""
    n = config.run_length if length is None else length
    lo, hi = config.speed_bounds
    mu = config.speed_mean
    shocks = np.random.default_rng(seed).standard_normal(n)
    speeds = np.empty(n)
    speeds[0] = mu
    for t in range(n - 1):
        step = speeds[t] + config.speed_reversion * (mu - speeds[t]) + config.speed_sigma * shocks[t]
        speeds[t + 1] = _reflect(step, lo, hi)
    return speeds


def tick_accelerations(speeds: np.ndarray, dt: float) -> np.ndarray:
    """Backward differences with ``a[0] = 0``."""
    speeds = np.asarray(speeds, dtype=float)
    accel = np.zeros_like(speeds)
    accel[1:] = np.diff(speeds) / dt
    return accel


def gen_energy(truth: ModelCoefficients, speeds: np.ndarray, dt: float = 1.0, noise_sigma: float = 0.0,
               seed: int = 0, noise_rel: float = 0.0) -> np.ndarray:
    """Per-tick joules from ``truth`` with noise of std ``noise_sigma + noise_rel * |J|``."""
    speeds = np.asarray(speeds, dtype=float)
    if len(speeds) < 2:
        raise ValidationError("at least 2 ticks are needed to generate energy")
    clean = np.asarray(predict(truth, speeds, tick_accelerations(speeds, dt)), dtype=float)
    shocks = np.random.default_rng(seed).standard_normal(len(speeds))
    return clean + (noise_sigma + noise_rel * np.abs(clean)) * shocks


def split_energy(energy: np.ndarray, accel: np.ndarray, config: SynthConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Route demand to (engine, battery).

    A share ``battery_share`` of positive demand comes from the battery.
    Negative demand is routed to the battery in full, except that while
    braking only ``regen_share`` of it is recovered; the rest is lost to the
    friction brakes and does not appear in either source.
    """
    energy = np.asarray(energy, dtype=float)
    accel = np.asarray(accel, dtype=float)
    braking = (accel < 0) & (energy < 0)
    share = np.where(energy >= 0, config.battery_share, np.where(braking, config.regen_share, 1.0))
    battery = share * energy
    engine = np.where(energy >= 0, energy - battery, 0.0)
    if np.any(engine < 0):
        raise InvariantViolation("negative engine energy in the synthetic split")
    return engine, battery


def invert_to_obd(energy: np.ndarray, speeds: np.ndarray, config: SynthConfig,
                  run_id: int = 1, vehicle_mode: VehicleMode = VehicleMode.ACC) -> TrajectorySeries:
    """Build the trajectory whose energy samples reproduce ``energy``."""
    speeds = np.asarray(speeds, dtype=float)
    params = config.powertrain
    engine, battery = split_energy(energy, tick_accelerations(speeds, config.dt), config)
    maf = engine * params.air_fuel_ratio / (params.calorific_value * params.engine_efficiency)
    soc = config.initial_soc - np.concatenate([[0.0], np.cumsum(battery)]) / (
        params.battery_capacity * params.electric_efficiency)
    if np.any(soc < 0) or np.any(soc > 1):
        raise ValidationError(
            f"run {run_id}: state of charge leaves [0, 1] (range {soc.min():.4f}..{soc.max():.4f}); "
            "use a larger battery_capacity or a shorter run"
        )
    ticks = tuple(
        Tick(t=k, maf_integral=float(maf[k]), soc=float(soc[k]), speed=float(speeds[k]))
        for k in range(len(speeds))
    )
    return TrajectorySeries(run_id=run_id, vehicle_mode=vehicle_mode, dt=config.dt, ticks=ticks,
                            end_soc=float(soc[-1]), end_speed=float(speeds[-1]))


@dataclass
class SynthRun:
    key: RunKey
    series: TrajectorySeries
    speed_seed: int
    noise_seed: int
    total_j: np.ndarray
    friction_j: np.ndarray

    @property
    def recorded_j(self) -> np.ndarray:
        """Energy the OBD signals account for; friction braking leaves no trace."""
        return self.total_j - self.friction_j

    @property
    def file_name(self) -> str:
        mode, run_id = self.key
        return f"{mode.value}_run{run_id:02d}.csv"


@dataclass
class SynthDataset:
    config: SynthConfig
    runs: Dict[RunKey, SynthRun]

    def frames(self) -> Dict[str, pd.DataFrame]:
        return {run.file_name: records_to_frame(to_records(run.series)) for run in self.runs.values()}

    def manifest(self) -> Dict[str, Any]:
        return {
            "files": [{"path": run.file_name, "mode": key[0].value} for key, run in self.runs.items()],
            "truth": {"acc": serialize(self.config.truth_acc), "hv": serialize(self.config.truth_hv)},
            "synth_config": self.config.to_dict(),
            "runs": [
                {
                    "mode": key[0].value,
                    "run_id": key[1],
                    "path": run.file_name,
                    "speed_seed": run.speed_seed,
                    "noise_seed": run.noise_seed,
                    "total_j": [float(x) for x in run.total_j],
                    "friction_j": [float(x) for x in run.friction_j],
                }
                for key, run in self.runs.items()
            ],
        }


def make_run(config: SynthConfig, mode: VehicleMode, run_id: int) -> SynthRun:
    speed_seed, noise_seed = run_seeds(config.seed, mode, run_id)
    speeds = gen_speed_profile(config, speed_seed)
    scale = config.noise_scale(mode)
    energy = gen_energy(config.truth(mode), speeds, config.dt, config.noise_sigma * scale,
                        noise_seed, config.noise_rel * scale)
    series = invert_to_obd(energy, speeds, config, run_id=run_id, vehicle_mode=mode)
    accel = tick_accelerations(speeds, config.dt)
    engine, battery = split_energy(energy, accel, config)
    friction = np.where((accel < 0) & (energy < 0), energy - battery, 0.0)
    return SynthRun((mode, run_id), series, speed_seed, noise_seed, energy, friction)


def make_dataset(config: SynthConfig = SynthConfig()) -> SynthDataset:
    """``n_runs`` runs per vehicle mode, a pure function of ``config``."""
    runs: Dict[RunKey, SynthRun] = {}
    for mode in VehicleMode:
        for run_id in range(1, config.n_runs + 1):
            runs[(mode, run_id)] = make_run(config, mode, run_id)
    log_event("dataset_synthesized", seed=config.seed, runs=len(runs), run_length=config.run_length)
    return SynthDataset(config, runs)


def write_dataset(dataset: SynthDataset, store) -> List[str]:
    """Write every run CSV and ``manifest.json`` through an artifact store."""
    written = [str(store.write_csv(name, frame)) for name, frame in dataset.frames().items()]
    written.append(str(store.write_json("manifest.json", dataset.manifest())))
    return written
