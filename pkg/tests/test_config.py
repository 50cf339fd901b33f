import json
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from vecal import config as config_mod  # noqa: E402
from vecal.config import ConfigProfiles, RunConfig, default_out_dir, load_run_config, parse_groups_flag  # noqa: E402
from vecal.errors import UsageError  # noqa: E402
from vecal.evaluation import MetricMode  # noqa: E402
from vecal.models import SplitStrategy  # noqa: E402


@pytest.fixture(autouse=True)
def _no_home_profile(tmp_path, monkeypatch):
    monkeypatch.setattr(config_mod, "DEFAULT_PATH", tmp_path / "absent.json")


def write_profiles(tmp_path, data):
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps(data))
    return path


def test_defaults_without_config_file():
    cfg = load_run_config()
    assert cfg == RunConfig()
    assert cfg.min_speed == pytest.approx(8.941)
    assert cfg.zero_accel_energy_floor == 25_000.0
    assert cfg.split.train_ratio == 0.8
    assert cfg.solver.max_iters == 200
    assert cfg.tests == ("test1", "test2")


def test_profile_then_flags(tmp_path):
    path = write_profiles(tmp_path, {
        "strict": {"min_speed": 10.0, "split": {"train_ratio": 0.7, "strategy": "sequential_prefix"},
                   "solver": {"max_iters": 500}},
        "literal-metrics": {"metric_mode": "paper_literal", "bins": 30},
    })
    cfg = ConfigProfiles("strict", path).resolve({"min_speed": 12.0, "workers": 2})
    assert cfg.min_speed == 12.0
    assert cfg.split.train_ratio == 0.7
    assert cfg.split.strategy == SplitStrategy.SEQUENTIAL_PREFIX
    assert cfg.solver.max_iters == 500
    assert cfg.workers == 2

    literal = ConfigProfiles("literal-metrics", path).resolve()
    assert literal.metric_mode == MetricMode.PAPER_LITERAL
    assert literal.bins == 30


def test_flat_config_file_is_used_without_profile(tmp_path):
    path = write_profiles(tmp_path, {"dt": 0.5, "powertrain": {"battery_capacity": 1e7}})
    cfg = ConfigProfiles(None, path).resolve()
    assert cfg.dt == 0.5
    assert cfg.powertrain.battery_capacity == 1e7


def test_missing_file_or_profile(tmp_path):
    with pytest.raises(UsageError):
        ConfigProfiles(None, tmp_path / "nope.json")
    path = write_profiles(tmp_path, {"strict": {"bins": 10}})
    with pytest.raises(UsageError, match="profile 'loose'"):
        ConfigProfiles("loose", path)


def test_invalid_settings_are_usage_errors(tmp_path):
    with pytest.raises(UsageError, match="unknown configuration keys"):
        RunConfig().apply({"colour": "red"})
    with pytest.raises(UsageError):
        RunConfig().apply({"bins": 0})
    with pytest.raises(UsageError):
        RunConfig().apply({"split": {"train_ratio": 1.5}})
    with pytest.raises(UsageError):
        RunConfig().apply({"solver": {"tolerance": 1}})
    with pytest.raises(UsageError):
        RunConfig().apply({"tests": "test9"})
    with pytest.raises(UsageError):
        RunConfig().apply({"groups": {"1": [1, 2], "2": [2, 3], "3": [4]}})
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(UsageError):
        ConfigProfiles(None, tmp_path / "broken.json")


def test_groups_flag():
    groups = parse_groups_flag("1:1,2,3; 2:4,5,6; 3:7,8,9")
    cfg = RunConfig().apply({"groups": groups})
    assert [g.run_ids for g in cfg.groups] == [(1, 2, 3), (4, 5, 6), (7, 8, 9)]
    with pytest.raises(UsageError):
        parse_groups_flag("1-1,2")


def test_echo_is_path_and_worker_free():
    echo = RunConfig(workers=8).echo()
    assert "workers" not in echo
    assert echo == RunConfig(workers=1).echo()
    assert echo["groups"] == {"1": [1, 4, 7], "2": [2, 5, 8], "3": [3, 6, 9]}
    assert RunConfig(seed=5).seeds() == {"seed": 5, "split_seed": RunConfig().split.seed}


def test_default_out_dir_env(monkeypatch):
    monkeypatch.setenv("VECAL_OUT_DIR", "/tmp/elsewhere")
    assert default_out_dir() == Path("/tmp/elsewhere")
    monkeypatch.delenv("VECAL_OUT_DIR")
    assert default_out_dir() == Path("vecal_out")
