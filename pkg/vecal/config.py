"""Run configuration and JSON profiles.

Profiles live in JSON at ``~/.vecal_profiles.json`` by default:

{
  "strict": {
    "min_speed": 10.0,
    "split": {"train_ratio": 0.7, "strategy": "sequential_prefix"},
    "solver": {"max_iters": 500}
  },
  "literal-metrics": {
    "metric_mode": "paper_literal",
    "bins": 30
  }
}

Users select one via ``--profile strict``. A file whose top level already
holds settings (no profile sections) is used as-is when ``--profile`` is
omitted. Settings are applied in the order defaults < profile < CLI flags.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from .energy import DEFAULT_MIN_SPEED, DEFAULT_ZERO_ACCEL_FLOOR
from .errors import UsageError, VecalError
from .evaluation import CROSS_TESTS, DEFAULT_BINS, MetricMode
from .models import (
    DEFAULT_GROUPS,
    GaussNewtonConfig,
    GroupSpec,
    PowertrainParams,
    SplitSpec,
    validate_groups,
)

DEFAULT_PATH = Path.home() / ".vecal_profiles.json"
OUT_DIR_ENV = "VECAL_OUT_DIR"
DEFAULT_OUT_DIR = "vecal_out"
DEFAULT_TESTS = ("test1", "test2")
DEFAULT_EVAL_RUNS = (3,)

SETTING_KEYS = frozenset({
    "dt", "min_speed", "zero_accel_energy_floor", "powertrain", "split", "solver",
    "metric_mode", "bins", "groups", "seed", "workers", "tests", "eval_runs",
})


def default_out_dir() -> Path:
    return Path(os.getenv(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


@dataclass(frozen=True)
class RunConfig:
    dt: float = 1.0
    min_speed: float = DEFAULT_MIN_SPEED
    zero_accel_energy_floor: float = DEFAULT_ZERO_ACCEL_FLOOR
    powertrain: PowertrainParams = field(default_factory=PowertrainParams)
    split: SplitSpec = field(default_factory=SplitSpec)
    solver: GaussNewtonConfig = field(default_factory=GaussNewtonConfig)
    metric_mode: MetricMode = MetricMode.CONVENTIONAL
    bins: int = DEFAULT_BINS
    groups: Tuple[GroupSpec, ...] = DEFAULT_GROUPS
    seed: int = 0
    workers: int = 4
    tests: Tuple[str, ...] = DEFAULT_TESTS
    eval_runs: Tuple[int, ...] = DEFAULT_EVAL_RUNS

    def apply(self, settings: Mapping[str, Any]) -> "RunConfig":
        """Return a copy with ``settings`` (profile or flag values) applied."""
        unknown = set(settings) - SETTING_KEYS
        if unknown:
            raise UsageError(f"unknown configuration keys: {sorted(unknown)}")
        changes: Dict[str, Any] = {}
        try:
            for key, value in settings.items():
                if value is None:
                    continue
                changes[key] = _PARSERS[key](self, value)
            return replace(self, **changes)
        except UsageError:
            raise
        except (VecalError, ValueError, TypeError, KeyError) as e:
            raise UsageError(f"invalid configuration: {e}") from e

    def echo(self) -> Dict[str, Any]:
        """Plain-dict view of the configuration, without any file paths."""
        return {
            "dt": self.dt,
            "min_speed": self.min_speed,
            "zero_accel_energy_floor": self.zero_accel_energy_floor,
            "powertrain": self.powertrain.to_dict(),
            "split": self.split.to_dict(),
            "solver": self.solver.to_dict(),
            "metric_mode": self.metric_mode.value,
            "bins": self.bins,
            "groups": {str(g.group_id): list(g.run_ids) for g in self.groups},
            "seed": self.seed,
            "tests": list(self.tests),
            "eval_runs": list(self.eval_runs),
        }

    def seeds(self) -> Dict[str, int]:
        return {"seed": self.seed, "split_seed": self.split.seed}


def _positive_float(value: Any, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise UsageError(f"{name} must be positive, got {value}")
    return value


def _positive_int(value: Any, name: str) -> int:
    if isinstance(value, bool) or int(value) != value or int(value) < 1:
        raise UsageError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def _mapping(value: Any, name: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise UsageError(f"{name} must be an object")
    return value


def _parse_split(cfg: RunConfig, value: Any) -> SplitSpec:
    fields = _mapping(value, "split")
    return replace(cfg.split, **fields)


def _parse_solver(cfg: RunConfig, value: Any) -> GaussNewtonConfig:
    fields = dict(_mapping(value, "solver"))
    known = {f.name for f in dataclasses.fields(GaussNewtonConfig)}
    unknown = set(fields) - known
    if unknown:
        raise UsageError(f"unknown solver settings: {sorted(unknown)}")
    if "max_iters" in fields:
        fields["max_iters"] = int(fields["max_iters"])
    return replace(cfg.solver, **fields)


def _parse_groups(cfg: RunConfig, value: Any) -> Tuple[GroupSpec, ...]:
    raw = _mapping(value, "groups")
    groups = tuple(
        GroupSpec(int(group_id), tuple(_positive_int(r, "run id") for r in run_ids))
        for group_id, run_ids in sorted(raw.items(), key=lambda kv: int(kv[0]))
    )
    validate_groups(groups)
    return groups


def _parse_tests(cfg: RunConfig, value: Any) -> Tuple[str, ...]:
    names = [value] if isinstance(value, str) else list(value)
    names = [n.strip() for part in names for n in str(part).split(",") if n.strip()]
    unknown = [n for n in names if n not in CROSS_TESTS]
    if unknown or not names:
        raise UsageError(f"unknown cross tests {unknown} (choose from {sorted(CROSS_TESTS)})")
    return tuple(dict.fromkeys(names))


def _parse_min_speed(cfg: RunConfig, value: Any) -> float:
    value = float(value)
    if value < 0:
        raise UsageError(f"min_speed must be non-negative, got {value}")
    return value


_PARSERS = {
    "dt": lambda cfg, v: _positive_float(v, "dt"),
    "min_speed": _parse_min_speed,
    "zero_accel_energy_floor": lambda cfg, v: float(v),
    "powertrain": lambda cfg, v: cfg.powertrain.with_overrides(_mapping(v, "powertrain")),
    "split": _parse_split,
    "solver": _parse_solver,
    "metric_mode": lambda cfg, v: MetricMode.parse(v),
    "bins": lambda cfg, v: _positive_int(v, "bins"),
    "groups": _parse_groups,
    "seed": lambda cfg, v: int(v),
    "workers": lambda cfg, v: _positive_int(v, "workers"),
    "tests": _parse_tests,
    "eval_runs": lambda cfg, v: tuple(_positive_int(r, "run id") for r in ([v] if isinstance(v, int) else v)),
}


class ConfigProfiles:
    """Load settings from a JSON config file, optionally selecting a named profile."""

    def __init__(self, profile_name: Optional[str] = None, config_path: Optional[Path] = None):
        self.explicit_path = config_path is not None
        self.config_path = Path(config_path) if config_path else DEFAULT_PATH
        self.profile_name = profile_name
        self.settings: Dict[str, Any] = {}
        self._load()

    def _load(self):
        if not self.config_path.exists():
            if self.explicit_path or self.profile_name:
                raise UsageError(f"config file not found at {self.config_path}")
            return
        try:
            data = json.loads(self.config_path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"invalid JSON in {self.config_path}: {e}") from e
        if not isinstance(data, dict):
            raise UsageError(f"{self.config_path}: expected a JSON object")

        if self.profile_name:
            profile = data.get(self.profile_name)
            if not isinstance(profile, dict):
                raise UsageError(f"profile '{self.profile_name}' not defined in {self.config_path}")
            self.settings = dict(profile)
        elif set(data) & SETTING_KEYS:
            self.settings = dict(data)

    def resolve(self, overrides: Optional[Mapping[str, Any]] = None, base: Optional[RunConfig] = None) -> RunConfig:
        config = (base or RunConfig()).apply(self.settings)
        return config.apply(overrides or {})


def load_run_config(profile_name: Optional[str] = None, config_path: Optional[Path] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    return ConfigProfiles(profile_name, config_path).resolve(overrides)


def parse_groups_flag(text: str) -> Dict[str, Sequence[int]]:
    """Parse ``1:1,4,7;2:2,5,8;3:3,6,9`` into the ``groups`` setting."""
    groups: Dict[str, Sequence[int]] = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        group_id, _, runs = part.partition(":")
        if not runs:
            raise UsageError(f"malformed group '{part}' (expected id:run,run,...)")
        try:
            groups[group_id.strip()] = [int(r) for r in runs.split(",") if r.strip()]
        except ValueError as e:
            raise UsageError(f"malformed group '{part}': {e}") from e
    return groups
